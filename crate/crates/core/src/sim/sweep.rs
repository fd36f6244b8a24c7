//! Parameter sweeps: cooperation-gain grids with a tolerable-disturbance
//! search, HV-count scans, and stability-chart families over HV parameters.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::SAFE_TOL;
use super::{run_experiment, ControllerMode, Experiment, Metrics, SafetyKey, ScenarioKind};
use crate::cbf::CbfParams;
use crate::error::{Error, Result};
use crate::platoon::{CavGains, Disturbance, HvParams, PlatoonConfig, RangePolicy};
use crate::stability::chart::{csv_err, stability_chart, GainAxis, StabilityChart};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweepCell {
    pub beta_head_tail: f64,
    pub beta_tail_head: f64,
    pub mode: ControllerMode,
    /// Metrics at the base scenario's disturbance; `None` if that run failed.
    pub metrics: Option<Metrics>,
    /// Largest integer speed drop with `h_H` kept above the tolerance.
    pub max_safe_dv_head: f64,
    pub max_safe_dv_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainSweep {
    pub cells: Vec<GainSweepCell>,
    /// Failed runs and probe sequences that contradict monotone risk in `dv`.
    pub events: Vec<String>,
}

impl GainSweep {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "beta_head_tail",
            "beta_tail_head",
            "mode",
            "I",
            "I_bar",
            "min_h_H",
            "min_h_T",
            "collision",
            "max_safe_dv_head",
            "max_safe_dv_tail",
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            let m = c.metrics.as_ref();
            out.write_record([
                c.beta_head_tail.to_string(),
                c.beta_tail_head.to_string(),
                c.mode.name().to_string(),
                opt(m.and_then(|m| m.i)),
                opt(m.and_then(|m| m.i_bar)),
                opt(m.map(|m| m.h(SafetyKey::Head))),
                opt(m.map(|m| m.h(SafetyKey::Tail))),
                m.map(|m| m.collision.to_string()).unwrap_or_default(),
                c.max_safe_dv_head.to_string(),
                c.max_safe_dv_tail.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Head and tail safety of one probe; a failed run counts as unsafe.
fn probe(exp: &Experiment, dv: f64) -> std::result::Result<(bool, bool), String> {
    let mut e = exp.clone();
    e.scenario = e.scenario.with_dv(dv);
    let (_, m) = run_experiment(&e).map_err(|err| err.to_string())?;
    Ok((
        m.h(SafetyKey::Head) >= SAFE_TOL,
        m.h(SafetyKey::Tail) >= SAFE_TOL,
    ))
}

/// Largest integer `dv` in `[0, dv_max]` that keeps the vehicle safe, by
/// bisection under the assumption that risk grows with `dv`. `dv = 0` is
/// taken as safe.
fn bisect(
    dv_max: u32,
    cache: &mut BTreeMap<u32, (bool, bool)>,
    run: &mut impl FnMut(u32) -> (bool, bool),
    pick: impl Fn((bool, bool)) -> bool,
) -> u32 {
    let mut eval = |dv: u32, cache: &mut BTreeMap<u32, (bool, bool)>| {
        if let Some(&r) = cache.get(&dv) {
            return pick(r);
        }
        let r = run(dv);
        cache.insert(dv, r);
        pick(r)
    };
    if eval(dv_max, cache) {
        return dv_max;
    }
    let (mut lo, mut hi) = (0, dv_max);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if eval(mid, cache) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// A safe probe above an unsafe one for the same vehicle.
fn monotonicity_break(cache: &BTreeMap<u32, (bool, bool)>, pick: impl Fn((bool, bool)) -> bool) -> Option<(u32, u32)> {
    let unsafe_dv = cache.iter().filter(|(_, &r)| !pick(r)).map(|(&d, _)| d).min()?;
    cache
        .iter()
        .filter(|(&d, &r)| d > unsafe_dv && pick(r))
        .map(|(&d, _)| (unsafe_dv, d))
        .next()
}

/// Runs every `(beta_head_tail, beta_tail_head, mode)` cell. Each cell records
/// its metrics at the base disturbance and the largest tolerable integer
/// speed drop up to `dv_max`, searched separately for the head and tail CAV.
pub fn sweep_gains(
    base: &Experiment,
    head_tail_axis: GainAxis,
    tail_head_axis: GainAxis,
    modes: &[ControllerMode],
    dv_max: u32,
) -> Result<GainSweep> {
    head_tail_axis.validate()?;
    tail_head_axis.validate()?;
    base.validate()?;
    let xs = head_tail_axis.values();
    let ys = tail_head_axis.values();
    let mut jobs: Vec<(f64, f64, ControllerMode)> = Vec::new();
    for &m in modes {
        for &y in &ys {
            jobs.extend(xs.iter().map(|&x| (x, y, m)));
        }
    }
    let results: Vec<(GainSweepCell, Vec<String>)> = jobs
        .par_iter()
        .map(|&(bx, by, mode)| {
            let mut exp = base.clone();
            exp.gains = exp.gains.with_cooperation(bx, by);
            exp.mode = mode;
            let label = format!("{} at ({bx}, {by})", mode.name());
            let mut events = Vec::new();
            let metrics = match run_experiment(&exp) {
                Ok((_, m)) => Some(m),
                Err(e) => {
                    events.push(format!("{label}: base run failed: {e}"));
                    None
                }
            };
            let mut cache = BTreeMap::new();
            cache.insert(0, (true, true));
            let mut run = |dv: u32| {
                probe(&exp, dv as f64).unwrap_or_else(|e| {
                    events.push(format!("{label}: probe dv = {dv} failed: {e}"));
                    (false, false)
                })
            };
            let head = bisect(dv_max, &mut cache, &mut run, |r| r.0);
            let tail = bisect(dv_max, &mut cache, &mut run, |r| r.1);
            for (name, pick) in [("head", 0usize), ("tail", 1)] {
                let f = |r: (bool, bool)| if pick == 0 { r.0 } else { r.1 };
                if let Some((lo, hi)) = monotonicity_break(&cache, f) {
                    events.push(format!(
                        "{label}: {name} CAV unsafe at dv = {lo} but safe at dv = {hi}"
                    ));
                }
            }
            (
                GainSweepCell {
                    beta_head_tail: bx,
                    beta_tail_head: by,
                    mode,
                    metrics,
                    max_safe_dv_head: head as f64,
                    max_safe_dv_tail: tail as f64,
                },
                events,
            )
        })
        .collect();
    let mut out = GainSweep::default();
    for (cell, ev) in results {
        out.cells.push(cell);
        out.events.extend(ev);
    }
    Ok(out)
}

/// Metrics of every cell at the base disturbance only.
pub fn gain_grid_metrics(
    base: &Experiment,
    head_tail_axis: GainAxis,
    tail_head_axis: GainAxis,
) -> Result<Vec<(f64, f64, Metrics)>> {
    head_tail_axis.validate()?;
    tail_head_axis.validate()?;
    let xs = head_tail_axis.values();
    let ys = tail_head_axis.values();
    (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|k| {
            let (bx, by) = (xs[k % xs.len()], ys[k / xs.len()]);
            let mut exp = base.clone();
            exp.gains = exp.gains.with_cooperation(bx, by);
            let (_, m) = run_experiment(&exp)?;
            Ok((bx, by, m))
        })
        .collect()
}

/// Copy of `base` with `n` HVs. Per-HV parameters, headways and barriers are
/// taken from HV 1 of the base; HV-indexed gains and connections beyond `n`
/// are dropped.
pub fn with_hv_count(base: &Experiment, n: usize) -> Result<Experiment> {
    if n == 0 {
        return Err(Error::invalid("at least one HV is required"));
    }
    let first = |v: &[HvParams]| v.first().copied().unwrap_or(HvParams::CALIBRATED);
    let bp = &base.platoon;
    let platoon = PlatoonConfig {
        n_hv: n,
        head_connected: bp.head_connected.iter().copied().filter(|&i| i <= n).collect(),
        tail_connected: bp.tail_connected.iter().copied().filter(|&i| i < n).collect(),
        hv_lengths: vec![bp.hv_lengths.first().copied().unwrap_or(5.0); n],
        ..bp.clone()
    };
    let mut gains: CavGains = base.gains.clone();
    gains.beta_head_hv.retain(|&i, _| i <= n);
    gains.beta_tail_hv.retain(|&i, _| i < n);
    let mut cbf: CbfParams = base.cbf.clone();
    let tau_hv = cbf.headways.tau_hv.first().copied().unwrap_or(1.0);
    cbf.headways.tau_hv = vec![tau_hv; n];
    cbf.hv.retain(|&i, _| i <= n);
    let mut scenario = base.scenario;
    if let ScenarioKind::MiddleHvDecel { hv, .. } | ScenarioKind::MiddleHvAccel { hv, .. } = &mut scenario.kind {
        if *hv > n {
            return Err(Error::invalid(format!("scenario HV {hv} does not exist for N = {n}")));
        }
    }
    let d0 = base.disturbance.d.first().copied().unwrap_or(0.0);
    Ok(Experiment {
        platoon,
        plant_hv: vec![first(&base.plant_hv); n],
        design_hv: vec![first(&base.design_hv); n],
        gains,
        cbf,
        disturbance: Disturbance { d: vec![d0; n] },
        scenario,
        initial: None,
        ..base.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvCountRow {
    pub n_hv: usize,
    pub mode: ControllerMode,
    pub metrics: Metrics,
}

impl HvCountRow {
    /// Smallest value of any safety function.
    pub fn min_h(&self) -> f64 {
        self.metrics.min_h.values().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Runs the base scenario for every HV count and mode with fixed gains.
pub fn sweep_hv_count(
    base: &Experiment,
    counts: impl IntoIterator<Item = usize>,
    modes: &[ControllerMode],
) -> Result<Vec<HvCountRow>> {
    let jobs: Vec<(usize, ControllerMode)> = counts
        .into_iter()
        .flat_map(|n| modes.iter().map(move |&m| (n, m)))
        .collect();
    jobs.par_iter()
        .map(|&(n, mode)| {
            let mut exp = with_hv_count(base, n)?;
            exp.mode = mode;
            let (_, metrics) = run_experiment(&exp)?;
            Ok(HvCountRow {
                n_hv: n,
                mode,
                metrics,
            })
        })
        .collect()
}

pub fn write_hv_count_csv<W: Write>(rows: &[HvCountRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n_hv", "mode", "I", "I_bar", "min_h_H", "min_h_T", "min_h", "min_gap", "collision"])
        .map_err(csv_err)?;
    for r in rows {
        let m = &r.metrics;
        out.write_record([
            r.n_hv.to_string(),
            r.mode.name().to_string(),
            opt(m.i),
            opt(m.i_bar),
            m.h(SafetyKey::Head).to_string(),
            m.h(SafetyKey::Tail).to_string(),
            r.min_h().to_string(),
            m.min_gap.to_string(),
            m.collision.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvParamKind {
    A,
    B,
    SSt,
    SGo,
}

impl HvParamKind {
    pub fn name(&self) -> &'static str {
        match self {
            HvParamKind::A => "a",
            HvParamKind::B => "b",
            HvParamKind::SSt => "s_st",
            HvParamKind::SGo => "s_go",
        }
    }

    pub fn set(&self, p: &mut HvParams, value: f64) {
        match self {
            HvParamKind::A => p.a = value,
            HvParamKind::B => p.b = value,
            HvParamKind::SSt => p.s_st = value,
            HvParamKind::SGo => p.s_go = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvParamFamily {
    pub param: HvParamKind,
    pub values: Vec<f64>,
    pub charts: Vec<StabilityChart>,
    /// Cell-wise AND of the members' string-stable flags.
    pub overlap: Vec<bool>,
}

impl HvParamFamily {
    pub fn overlap_count(&self) -> usize {
        self.overlap.iter().filter(|&&b| b).count()
    }

    /// One row per (value, cell), followed by the overlap rows with an empty value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([self.param.name(), "beta_head_tail", "beta_tail_head", "plant_stable", "string_stable"])
            .map_err(csv_err)?;
        for (value, chart) in self.values.iter().zip(&self.charts) {
            for c in &chart.cells {
                out.write_record([
                    value.to_string(),
                    c.beta_head_tail.to_string(),
                    c.beta_tail_head.to_string(),
                    c.plant_stable.to_string(),
                    c.string_stable.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        if let Some(first) = self.charts.first() {
            for (c, &ok) in first.cells.iter().zip(&self.overlap) {
                out.write_record([
                    String::new(),
                    c.beta_head_tail.to_string(),
                    c.beta_tail_head.to_string(),
                    String::new(),
                    ok.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// One stability chart per value of `param`, applied to every HV.
#[allow(clippy::too_many_arguments)]
pub fn sweep_hv_params(
    param: HvParamKind,
    values: &[f64],
    head_tail_axis: GainAxis,
    tail_head_axis: GainAxis,
    base: &CavGains,
    cfg: &PlatoonConfig,
    hv: &[HvParams],
    rp: &RangePolicy,
    v_star: f64,
) -> Result<HvParamFamily> {
    if values.is_empty() {
        return Err(Error::invalid("HV parameter sweep needs at least one value"));
    }
    let charts = values
        .iter()
        .map(|&v| {
            let fleet: Vec<HvParams> = hv
                .iter()
                .map(|p| {
                    let mut p = *p;
                    param.set(&mut p, v);
                    p
                })
                .collect();
            stability_chart(head_tail_axis, tail_head_axis, base, cfg, &fleet, rp, v_star)
        })
        .collect::<Result<Vec<_>>>()?;
    let overlap = (0..charts[0].cells.len())
        .map(|k| charts.iter().all(|c| c.cells[k].string_stable))
        .collect();
    Ok(HvParamFamily {
        param,
        values: values.to_vec(),
        charts,
        overlap,
    })
}
