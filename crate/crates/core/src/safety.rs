//! Constant-time-headway safety functions, closed-form safe-gain
//! certificates for the nominal CAV controllers, and safety charts.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platoon::{nominal_head, nominal_tail, CavGains, PlatoonConfig, PlatoonState, RangePolicy};
use crate::stability::chart::csv_err;
use crate::stability::GainAxis;

/// Safe time headways of the CTH policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyHeadways {
    pub tau_head: f64,
    pub tau_tail: f64,
    /// One entry per HV.
    pub tau_hv: Vec<f64>,
    pub tau_platoon: f64,
}

impl SafetyHeadways {
    /// `tau_H = tau_T = 0.8 s`, `tau_i = 1 s`, `tau_p = 1 s`.
    pub fn standard(n_hv: usize) -> Self {
        Self {
            tau_head: 0.8,
            tau_tail: 0.8,
            tau_hv: vec![1.0; n_hv],
            tau_platoon: 1.0,
        }
    }

    pub fn validate(&self, n_hv: usize) -> Result<()> {
        if self.tau_hv.len() != n_hv {
            return Err(Error::invalid(format!(
                "expected {n_hv} HV headways, got {}",
                self.tau_hv.len()
            )));
        }
        let ok = self.tau_head > 0.0
            && self.tau_tail > 0.0
            && self.tau_platoon > 0.0
            && self.tau_hv.iter().all(|&t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("time headways must be positive"))
        }
    }
}

/// Values of every safety function at one state; `h >= 0` is safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReadout {
    pub h_head: f64,
    pub h_tail: f64,
    pub h_hv: Vec<f64>,
    /// `h_i - eta_i h_H` for HVs with an HV-safety barrier.
    pub h_bar_hv: BTreeMap<usize, f64>,
    pub h_platoon: f64,
}

impl SafetyReadout {
    pub fn new(
        x: &PlatoonState,
        cfg: &PlatoonConfig,
        tau: &SafetyHeadways,
        etas: &BTreeMap<usize, f64>,
    ) -> Self {
        let h_hv: Vec<f64> = (1..=cfg.n_hv)
            .map(|i| h_hv(x, i, tau.tau_hv[i - 1]))
            .collect();
        let h_head = h_head(x, tau.tau_head);
        let h_bar_hv = etas
            .iter()
            .map(|(&i, &eta)| (i, h_hv[i - 1] - eta * h_head))
            .collect();
        Self {
            h_head,
            h_tail: h_tail(x, tau.tau_tail),
            h_hv,
            h_bar_hv,
            h_platoon: h_platoon(x, cfg, tau.tau_platoon),
        }
    }
}

pub fn h_head(x: &PlatoonState, tau_head: f64) -> f64 {
    x.s_head() - tau_head * x.v_head()
}

pub fn h_tail(x: &PlatoonState, tau_tail: f64) -> f64 {
    x.s_tail() - tau_tail * x.v_tail()
}

pub fn h_hv(x: &PlatoonState, i: usize, tau_i: f64) -> f64 {
    x.s_hv(i) - tau_i * x.v_hv(i)
}

/// Barrier used to protect HV-`i` through the head CAV's input.
pub fn h_bar_hv(x: &PlatoonState, i: usize, tau_i: f64, eta_i: f64, tau_head: f64) -> f64 {
    h_hv(x, i, tau_i) - eta_i * h_head(x, tau_head)
}

/// Bumper-to-bumper distance from the tail CAV to the head CAV.
pub fn gap_between_cavs(x: &PlatoonState, cfg: &PlatoonConfig) -> f64 {
    let hv_gaps: f64 = (1..=cfg.n_hv).map(|i| x.s_hv(i)).sum();
    x.s_tail() + hv_gaps + cfg.tail_cav_length + cfg.hv_lengths.iter().sum::<f64>()
}

pub fn h_platoon(x: &PlatoonState, cfg: &PlatoonConfig, tau_p: f64) -> f64 {
    gap_between_cavs(x, cfg) - cfg.platoon_base_length - tau_p * (x.v_tail() - x.v_head())
}

/// Smallest `alpha_H` certified safe by the head-CAV gain condition.
pub fn head_alpha_bound(g: &CavGains, tau_head: f64, rp: &RangePolicy) -> f64 {
    let hv: f64 = g.beta_head_hv.values().map(|b| b.abs()).sum();
    ((1.0 - tau_head * g.beta_head_d).abs() + tau_head * hv + tau_head * g.beta_head_tail.abs())
        * rp.v_max
        / rp.s_st
}

pub fn tail_alpha_bound(g: &CavGains, tau_tail: f64, rp: &RangePolicy) -> f64 {
    let hv: f64 = g.beta_tail_hv.values().map(|b| b.abs()).sum();
    ((1.0 - tau_tail * g.beta_tail_n).abs() + tau_tail * hv + tau_tail * g.beta_tail_head.abs())
        * rp.v_max
        / rp.s_st
}

/// Head-CAV safe-gain certificate: `kappa <= 1/tau_H` and `alpha_H` at or
/// above [`head_alpha_bound`].
pub fn theorem2_head_safe(g: &CavGains, tau_head: f64, rp: &RangePolicy) -> bool {
    rp.kappa() <= 1.0 / tau_head && g.alpha_head >= head_alpha_bound(g, tau_head, rp)
}

pub fn theorem3_tail_safe(g: &CavGains, tau_tail: f64, rp: &RangePolicy) -> bool {
    rp.kappa() <= 1.0 / tau_tail && g.alpha_tail >= tail_alpha_bound(g, tau_tail, rp)
}

/// `dh_H/dt` under the nominal head controller (no saturation).
pub fn head_barrier_rate(
    x: &PlatoonState,
    v_d: f64,
    g: &CavGains,
    rp: &RangePolicy,
    cfg: &PlatoonConfig,
    tau_head: f64,
) -> f64 {
    v_d - x.v_head() - tau_head * nominal_head(x, v_d, g, rp, cfg)
}

pub fn tail_barrier_rate(
    x: &PlatoonState,
    g: &CavGains,
    rp: &RangePolicy,
    cfg: &PlatoonConfig,
    tau_tail: f64,
) -> f64 {
    x.v_hv(cfg.n_hv) - x.v_tail() - tau_tail * nominal_tail(x, g, rp, cfg)
}

/// A scalar gain that a safety chart can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "gain", content = "hv")]
pub enum GainKnob {
    AlphaHead,
    BetaHeadD,
    BetaHeadTail,
    AlphaTail,
    BetaTailN,
    BetaTailHead,
    BetaHeadHv(usize),
    BetaTailHv(usize),
}

impl GainKnob {
    pub fn name(&self) -> String {
        match self {
            GainKnob::AlphaHead => "alpha_head".into(),
            GainKnob::BetaHeadD => "beta_head_d".into(),
            GainKnob::BetaHeadTail => "beta_head_tail".into(),
            GainKnob::AlphaTail => "alpha_tail".into(),
            GainKnob::BetaTailN => "beta_tail_n".into(),
            GainKnob::BetaTailHead => "beta_tail_head".into(),
            GainKnob::BetaHeadHv(i) => format!("beta_head_{i}"),
            GainKnob::BetaTailHv(i) => format!("beta_tail_{i}"),
        }
    }

    pub fn set(&self, g: &mut CavGains, value: f64) {
        match *self {
            GainKnob::AlphaHead => g.alpha_head = value,
            GainKnob::BetaHeadD => g.beta_head_d = value,
            GainKnob::BetaHeadTail => g.beta_head_tail = value,
            GainKnob::AlphaTail => g.alpha_tail = value,
            GainKnob::BetaTailN => g.beta_tail_n = value,
            GainKnob::BetaTailHead => g.beta_tail_head = value,
            GainKnob::BetaHeadHv(i) => {
                g.beta_head_hv.insert(i, value);
            }
            GainKnob::BetaTailHv(i) => {
                g.beta_tail_hv.insert(i, value);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyCell {
    pub x: f64,
    pub y: f64,
    pub head_safe: bool,
    pub tail_safe: bool,
}

/// Row-major over `y`, columns over `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyChart {
    pub x_knob: GainKnob,
    pub y_knob: GainKnob,
    pub x_axis: GainAxis,
    pub y_axis: GainAxis,
    pub cells: Vec<SafetyCell>,
}

impl SafetyChart {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            self.x_knob.name(),
            self.y_knob.name(),
            "head_safe".into(),
            "tail_safe".into(),
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            out.write_record([
                c.x.to_string(),
                c.y.to_string(),
                c.head_safe.to_string(),
                c.tail_safe.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates both gain certificates over a grid of two gains.
pub fn safety_chart(
    x_knob: GainKnob,
    x_axis: GainAxis,
    y_knob: GainKnob,
    y_axis: GainAxis,
    base: &CavGains,
    tau: &SafetyHeadways,
    rp: &RangePolicy,
) -> Result<SafetyChart> {
    x_axis.validate()?;
    y_axis.validate()?;
    if x_knob == y_knob {
        return Err(Error::invalid("safety chart needs two distinct gains"));
    }
    let xs = x_axis.values();
    let ys = y_axis.values();
    let cells = (0..xs.len() * ys.len())
        .into_par_iter()
        .map(|k| {
            let (x, y) = (xs[k % xs.len()], ys[k / xs.len()]);
            let mut g = base.clone();
            x_knob.set(&mut g, x);
            y_knob.set(&mut g, y);
            SafetyCell {
                x,
                y,
                head_safe: theorem2_head_safe(&g, tau.tau_head, rp),
                tail_safe: theorem3_tail_safe(&g, tau.tau_tail, rp),
            }
        })
        .collect();
    Ok(SafetyChart {
        x_knob,
        y_knob,
        x_axis,
        y_axis,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platoon::{assemble_equilibrium, HvParams};
    use approx::assert_abs_diff_eq;

    fn eq4() -> (PlatoonConfig, PlatoonState) {
        let cfg = PlatoonConfig::new(4);
        let x = assemble_equilibrium(&cfg, &[HvParams::CALIBRATED; 4], &RangePolicy::CAV_DEFAULT, 20.0)
            .unwrap();
        (cfg, x)
    }

    #[test]
    fn equilibrium_readout() {
        let (cfg, x) = eq4();
        assert_abs_diff_eq!(h_head(&x, 0.8), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h_tail(&x, 0.8), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h_hv(&x, 1, 1.0), 4.1, epsilon = 1e-12);
        assert_abs_diff_eq!(h_bar_hv(&x, 1, 1.0, 0.5, 0.8), 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(h_bar_hv(&x, 1, 1.0, 0.0, 0.8), 4.1, epsilon = 1e-12);
        assert_abs_diff_eq!(gap_between_cavs(&x, &cfg), 142.4, epsilon = 1e-9);
        assert_abs_diff_eq!(h_platoon(&x, &cfg, 1.0), 42.4, epsilon = 1e-9);
        let r = SafetyReadout::new(&x, &cfg, &SafetyHeadways::standard(4), &BTreeMap::from([(1, 0.5)]));
        assert_abs_diff_eq!(r.h_bar_hv[&1], 1.6, epsilon = 1e-12);
        assert_eq!(r.h_hv.len(), 4);
    }

    #[test]
    fn boundary_values() {
        let (cfg, mut x) = eq4();
        x.set_head(16.0, 20.0);
        assert_eq!(h_head(&x, 0.8), 0.0);
        assert_abs_diff_eq!(h_bar_hv(&x, 1, 1.0, 0.5, 0.8), 4.1, epsilon = 1e-12);
        x.set_head(12.0, 0.0);
        assert_eq!(h_head(&x, 0.8), 12.0);
        x.set_tail(21.0, 25.0);
        x.set_head(21.0, 20.0);
        assert_abs_diff_eq!(h_platoon(&x, &cfg, 1.0), 37.4, epsilon = 1e-9);
    }

    #[test]
    fn certificate_examples() {
        let rp = RangePolicy::CAV_DEFAULT;
        let mut g = CavGains {
            alpha_head: 0.0,
            beta_head_d: 1.25,
            ..CavGains::acc_only()
        };
        assert!(theorem2_head_safe(&g, 0.8, &rp));
        g.beta_head_d = 0.6;
        g.beta_head_tail = 0.5;
        g.alpha_head = 0.4;
        assert_abs_diff_eq!(head_alpha_bound(&g, 0.8, &rp), 18.4, epsilon = 1e-9);
        assert!(!theorem2_head_safe(&g, 0.8, &rp));
        g.alpha_head = head_alpha_bound(&g, 0.8, &rp);
        assert!(theorem2_head_safe(&g, 0.8, &rp));
        let steep = RangePolicy::new(2.0, 20.0, 40.0);
        g.alpha_head = 1e6;
        assert!(!theorem2_head_safe(&g, 0.8, &steep));

        let t = CavGains::acc_only().with_cooperation(0.0, 1.2);
        assert_abs_diff_eq!(tail_alpha_bound(&t, 0.8, &rp), 29.6, epsilon = 1e-9);
        let t = CavGains {
            alpha_tail: 0.0,
            beta_tail_n: 1.25,
            ..CavGains::acc_only()
        };
        assert!(theorem3_tail_safe(&t, 0.8, &rp));
    }

    #[test]
    fn chart_box_under_max_range_gains() {
        let base = CavGains {
            alpha_head: 1.0,
            beta_head_d: 1.25,
            alpha_tail: 1.0,
            beta_tail_n: 1.25,
            ..CavGains::acc_only()
        };
        let chart = safety_chart(
            GainKnob::BetaHeadTail,
            GainAxis::new(-0.1, 0.1, 5),
            GainKnob::BetaTailHead,
            GainAxis::new(-0.1, 0.1, 5),
            &base,
            &SafetyHeadways::standard(4),
            &RangePolicy::CAV_DEFAULT,
        )
        .unwrap();
        for c in &chart.cells {
            assert_eq!(c.head_safe, c.x.abs() <= 0.0625, "{c:?}");
            assert_eq!(c.tail_safe, c.y.abs() <= 0.0625, "{c:?}");
        }
        let mut buf = Vec::new();
        chart.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("beta_head_tail,beta_tail_head,head_safe,tail_safe"));
    }
}
