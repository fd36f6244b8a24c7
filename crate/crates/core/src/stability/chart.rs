//! Stability charts over the two CAV cooperation gains.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_transfer_function, cav_linear_coeffs, fleet_linear_coeffs, plant_stable, string_stable};
use crate::error::{Error, Result};
use crate::platoon::{check_fleet, CavGains, HvParams, PlatoonConfig, RangePolicy};

/// Evenly spaced gain values, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainAxis {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl GainAxis {
    pub fn new(start: f64, end: f64, points: usize) -> Self {
        Self { start, end, points }
    }

    /// A one-point axis at `value`.
    pub fn single(value: f64) -> Self {
        Self::new(value, value, 1)
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                if k + 1 == self.points {
                    self.end
                } else {
                    self.start + step * k as f64
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::invalid(format!("bad gain axis {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartCell {
    pub beta_head_tail: f64,
    pub beta_tail_head: f64,
    pub plant_stable: bool,
    pub string_stable: bool,
}

/// Cells stored row-major: rows follow `beta_tail_head`, columns `beta_head_tail`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityChart {
    pub head_tail_axis: GainAxis,
    pub tail_head_axis: GainAxis,
    pub cells: Vec<ChartCell>,
}

impl StabilityChart {
    pub fn cell(&self, col: usize, row: usize) -> &ChartCell {
        &self.cells[row * self.head_tail_axis.points + col]
    }

    /// Nearest cell to the requested gain pair.
    pub fn nearest(&self, beta_head_tail: f64, beta_tail_head: f64) -> &ChartCell {
        self.cells
            .iter()
            .min_by(|a, b| {
                let da = (a.beta_head_tail - beta_head_tail).hypot(a.beta_tail_head - beta_tail_head);
                let db = (b.beta_head_tail - beta_head_tail).hypot(b.beta_tail_head - beta_tail_head);
                da.total_cmp(&db)
            })
            .expect("chart has at least one cell")
    }

    pub fn string_stable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.string_stable).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["beta_head_tail", "beta_tail_head", "plant_stable", "string_stable"])
            .map_err(csv_err)?;
        for c in &self.cells {
            out.write_record([
                c.beta_head_tail.to_string(),
                c.beta_tail_head.to_string(),
                c.plant_stable.to_string(),
                c.string_stable.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Classifies every `(beta_head_tail, beta_tail_head)` pair with all other
/// gains taken from `base`. String stability is only checked on plant-stable
/// cells.
pub fn stability_chart(
    head_tail_axis: GainAxis,
    tail_head_axis: GainAxis,
    base: &CavGains,
    cfg: &PlatoonConfig,
    hv: &[HvParams],
    rp: &RangePolicy,
    v_star: f64,
) -> Result<StabilityChart> {
    head_tail_axis.validate()?;
    tail_head_axis.validate()?;
    cfg.validate()?;
    check_fleet(cfg, hv)?;
    base.check_topology(cfg)?;
    let hvc = fleet_linear_coeffs(hv, v_star)?;
    let xs = head_tail_axis.values();
    let ys = tail_head_axis.values();
    let cells = (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|k| {
            let (bx, by) = (xs[k % xs.len()], ys[k / xs.len()]);
            let g = base.clone().with_cooperation(bx, by);
            let cav = cav_linear_coeffs(&g, rp, v_star)?;
            let tf = build_transfer_function(&hvc, &cav, &g, cfg);
            let plant = plant_stable(&tf)?;
            Ok(ChartCell {
                beta_head_tail: bx,
                beta_tail_head: by,
                plant_stable: plant,
                string_stable: plant && string_stable(&tf),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityChart {
        head_tail_axis,
        tail_head_axis,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values_hit_endpoints() {
        let v = GainAxis::new(-1.0, 2.0, 61).values();
        assert_eq!(v.len(), 61);
        assert_eq!(v[0], -1.0);
        assert_eq!(v[60], 2.0);
        assert!((v[20] - 0.0).abs() < 1e-12);
        assert_eq!(GainAxis::single(0.3).values(), vec![0.3]);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cfg = PlatoonConfig::new(4);
        let chart = stability_chart(
            GainAxis::new(0.0, 1.0, 2),
            GainAxis::new(0.0, 1.0, 2),
            &CavGains::acc_only(),
            &cfg,
            &[HvParams::CALIBRATED; 4],
            &RangePolicy::CAV_DEFAULT,
            20.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        chart.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("beta_head_tail,beta_tail_head,plant_stable,string_stable"));
        assert_eq!(chart.cell(1, 0).beta_head_tail, 1.0);
        assert_eq!(chart.cell(1, 0).beta_tail_head, 0.0);
    }
}
