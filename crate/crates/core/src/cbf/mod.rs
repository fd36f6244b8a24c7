//! Control barrier function bounds and the safety filters built on them.

pub mod qp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platoon::{ovm_accel, HvParams, PlatoonConfig, PlatoonState};
use crate::safety::{gap_between_cavs, SafetyHeadways};
pub use qp::{solve_qp, QpProblem, QpSolution};

/// Barrier parameters protecting one HV through the head CAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvBarrier {
    pub gamma: f64,
    /// Weight of the head-CAV barrier inside `h_bar_i = h_i - eta h_H`.
    pub eta: f64,
    /// Slack penalty `p_i`.
    pub penalty: f64,
    /// Bound on the HV model error; zero gives the nominal barrier.
    pub d_bar: f64,
}

impl Default for HvBarrier {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            eta: 0.5,
            penalty: 100.0,
            d_bar: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    pub headways: SafetyHeadways,
    pub gamma_head: f64,
    pub gamma_tail: f64,
    pub gamma_platoon: f64,
    /// HV barriers keyed by 1-based HV index; each HV must be head-connected.
    pub hv: BTreeMap<usize, HvBarrier>,
}

impl CbfParams {
    /// `gamma = 5` everywhere, standard headways, no HV barriers.
    pub fn standard(n_hv: usize) -> Self {
        Self {
            headways: SafetyHeadways::standard(n_hv),
            gamma_head: 5.0,
            gamma_tail: 5.0,
            gamma_platoon: 5.0,
            hv: BTreeMap::new(),
        }
    }

    pub fn validate(&self, cfg: &PlatoonConfig) -> Result<()> {
        self.headways.validate(cfg.n_hv)?;
        if !(self.gamma_head > 0.0 && self.gamma_tail > 0.0 && self.gamma_platoon > 0.0) {
            return Err(Error::invalid("CBF rates must be positive"));
        }
        for (&i, b) in &self.hv {
            if !cfg.head_connected.contains(&i) {
                return Err(Error::invalid(format!(
                    "HV {i} has a safety barrier but is not connected to the head CAV"
                )));
            }
            if !(b.gamma > 0.0 && b.eta > 0.0 && b.penalty > 0.0 && b.d_bar >= 0.0) {
                return Err(Error::invalid(format!("HV {i} barrier parameters out of range: {b:?}")));
            }
        }
        Ok(())
    }

    pub fn etas(&self) -> BTreeMap<usize, f64> {
        self.hv.iter().map(|(&i, b)| (i, b.eta)).collect()
    }

    fn tau_hv(&self, i: usize) -> f64 {
        self.headways.tau_hv[i - 1]
    }
}

/// Upper bound on `u_H` from the head-CAV barrier.
pub fn ub_head(x: &PlatoonState, v_d: f64, p: &CbfParams) -> f64 {
    let tau = p.headways.tau_head;
    (v_d - x.v_head()) / tau + p.gamma_head * (x.s_head() / tau - x.v_head())
}

/// Upper bound on `u_T` from the tail-CAV barrier.
pub fn ub_tail(x: &PlatoonState, p: &CbfParams) -> f64 {
    let tau = p.headways.tau_tail;
    let v_n = x.v_hv(x.n_hv());
    (v_n - x.v_tail()) / tau + p.gamma_tail * (x.s_tail() / tau - x.v_tail())
}

/// Lower bound on `u_H` protecting HV-`i`, given the HV acceleration `f_i`
/// the filter believes in. Panics if `i` has no barrier in `p`.
pub fn lb_hv_with_accel(x: &PlatoonState, i: usize, v_d: f64, f_i: f64, p: &CbfParams) -> f64 {
    let b = &p.hv[&i];
    let (tau_h, tau_i) = (p.headways.tau_head, p.tau_hv(i));
    let s_dot = x.v_ahead_of_hv(i) - x.v_hv(i);
    (v_d - x.v_head()) / tau_h
        + b.gamma * (x.s_head() / tau_h - x.v_head())
        + tau_i / (b.eta * tau_h)
            * (f_i - s_dot / tau_i - b.gamma * (x.s_hv(i) / tau_i - x.v_hv(i)))
}

/// [`lb_hv_with_accel`] with `F_i` taken from the driver model `hv_model`.
pub fn lb_hv(x: &PlatoonState, i: usize, v_d: f64, hv_model: &HvParams, p: &CbfParams) -> f64 {
    lb_hv_with_accel(x, i, v_d, model_accel(x, i, hv_model), p)
}

/// Extra lower-bound margin `tau_i d_bar_i / (eta_i tau_H)` of the robust barrier.
pub fn robust_margin(i: usize, p: &CbfParams) -> f64 {
    let b = &p.hv[&i];
    p.tau_hv(i) * b.d_bar / (b.eta * p.headways.tau_head)
}

pub fn robust_lb_hv(x: &PlatoonState, i: usize, v_d: f64, hv_model: &HvParams, p: &CbfParams) -> f64 {
    lb_hv(x, i, v_d, hv_model, p) + robust_margin(i, p)
}

fn model_accel(x: &PlatoonState, i: usize, hv_model: &HvParams) -> f64 {
    ovm_accel(
        hv_model,
        x.s_hv(i),
        x.v_hv(i),
        x.v_ahead_of_hv(i) - x.v_hv(i),
    )
}

/// Upper bound on `u_T - u_H` from the platoon-length barrier.
pub fn ub_platoon(x: &PlatoonState, cfg: &PlatoonConfig, p: &CbfParams) -> f64 {
    let tau = p.headways.tau_platoon;
    let rel = x.v_tail() - x.v_head();
    -rel / tau + p.gamma_platoon * ((gap_between_cavs(x, cfg) - cfg.platoon_base_length) / tau - rel)
}

pub fn filter_head_min(k_nominal: f64, ub: f64) -> f64 {
    k_nominal.min(ub)
}

pub fn filter_tail_min(k_nominal: f64, ub: f64) -> f64 {
    k_nominal.min(ub)
}

/// One relaxed HV row `scale * u_H + sigma >= scale * lb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftBound {
    pub hv: usize,
    pub lb: f64,
    /// `eta_i tau_H`, the input coefficient of the HV barrier.
    pub scale: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadFilter {
    pub u_head: f64,
    pub slacks: BTreeMap<usize, f64>,
}

/// Relaxed HV rows of the head CAV at state `x`. `robust` adds the model-error margin.
pub fn hv_soft_bounds(
    x: &PlatoonState,
    v_d: f64,
    p: &CbfParams,
    hv_models: &[HvParams],
    robust: bool,
) -> Vec<SoftBound> {
    p.hv
        .iter()
        .map(|(&i, b)| {
            let mut lb = lb_hv(x, i, v_d, &hv_models[i - 1], p);
            if robust {
                lb += robust_margin(i, p);
            }
            SoftBound {
                hv: i,
                lb,
                scale: b.eta * p.headways.tau_head,
                penalty: b.penalty,
            }
        })
        .collect()
}

/// Exact minimizer of `(u - k)^2 + sum p_i sigma_i^2` over `u <= ub`,
/// `scale_i u + sigma_i >= scale_i lb_i`, `sigma_i >= 0`.
///
/// With optimal slacks eliminated the cost is a convex piecewise quadratic in
/// `u` whose pieces change at the `lb_i`; the stationary piece is found by
/// walking the sorted breakpoints.
pub fn qp_head_bounds(k_nominal: f64, ub: f64, rows: &[SoftBound]) -> HeadFilter {
    let mut order: Vec<&SoftBound> = rows.iter().collect();
    order.sort_by(|a, b| b.lb.total_cmp(&a.lb));
    // Rows with lb > u are exactly a prefix of `order` (descending lb).
    let mut num = k_nominal;
    let mut den = 1.0;
    let mut u = k_nominal;
    for (n, row) in order.iter().enumerate() {
        let next_lb = row.lb;
        if u >= next_lb {
            break;
        }
        let w = row.penalty * row.scale * row.scale;
        num += w * row.lb;
        den += w;
        u = num / den;
        let lower = order.get(n + 1).map_or(f64::NEG_INFINITY, |r| r.lb);
        if u >= lower {
            break;
        }
    }
    let u = u.min(ub);
    let slacks = rows
        .iter()
        .map(|r| (r.hv, ((r.lb - u) * r.scale).max(0.0)))
        .collect();
    HeadFilter { u_head: u, slacks }
}

/// Head-CAV filter with the head barrier hard and the HV barriers relaxed.
pub fn qp_head(
    x: &PlatoonState,
    v_d: f64,
    k_nominal: f64,
    p: &CbfParams,
    hv_models: &[HvParams],
    robust: bool,
) -> HeadFilter {
    let rows = hv_soft_bounds(x, v_d, p, hv_models, robust);
    qp_head_bounds(k_nominal, ub_head(x, v_d, p), &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    HeadSafety,
    TailSafety,
    PlatoonSafety,
    HvSafety(usize),
    SlackFloor(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub u_head: f64,
    pub u_tail: f64,
    pub slacks: BTreeMap<usize, f64>,
    pub active: Vec<Constraint>,
    /// True when the closed-form filters produced the decision instead of the QP solver.
    pub fallback: bool,
}

/// Bounds entering the joint two-CAV filter.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBounds {
    pub ub_head: f64,
    pub ub_tail: f64,
    pub ub_platoon: f64,
    pub hv: Vec<SoftBound>,
}

impl JointBounds {
    pub fn at(
        x: &PlatoonState,
        v_d: f64,
        p: &CbfParams,
        cfg: &PlatoonConfig,
        hv_models: &[HvParams],
        robust: bool,
    ) -> Self {
        Self {
            ub_head: ub_head(x, v_d, p),
            ub_tail: ub_tail(x, p),
            ub_platoon: ub_platoon(x, cfg, p),
            hv: hv_soft_bounds(x, v_d, p, hv_models, robust),
        }
    }

    /// Variables `(u_H, u_T, sigma...)` with one slack per HV row.
    pub fn problem(&self, k_head: f64, k_tail: f64) -> (QpProblem, Vec<Constraint>) {
        let m = 2 + self.hv.len();
        let mut weights = vec![1.0, 1.0];
        weights.extend(self.hv.iter().map(|r| r.penalty));
        let mut targets = vec![k_head, k_tail];
        targets.extend(std::iter::repeat(0.0).take(self.hv.len()));
        let mut prob = QpProblem::new(weights, targets);
        let mut tags = Vec::new();
        let row = |entries: &[(usize, f64)]| {
            let mut r = vec![0.0; m];
            for &(k, v) in entries {
                r[k] = v;
            }
            r
        };
        prob.constrain(row(&[(0, -1.0)]), -self.ub_head);
        tags.push(Constraint::HeadSafety);
        prob.constrain(row(&[(1, -1.0)]), -self.ub_tail);
        tags.push(Constraint::TailSafety);
        prob.constrain(row(&[(0, 1.0), (1, -1.0)]), -self.ub_platoon);
        tags.push(Constraint::PlatoonSafety);
        for (k, r) in self.hv.iter().enumerate() {
            prob.constrain(row(&[(0, r.scale), (2 + k, 1.0)]), r.scale * r.lb);
            tags.push(Constraint::HvSafety(r.hv));
            prob.constrain(row(&[(2 + k, 1.0)]), 0.0);
            tags.push(Constraint::SlackFloor(r.hv));
        }
        (prob, tags)
    }

    /// Point satisfying the three hard rows whatever the state.
    pub fn hard_witness(&self) -> (f64, f64) {
        (self.ub_head, self.ub_tail.min(self.ub_platoon + self.ub_head))
    }
}

/// Joint filter: both CAV barriers and the platoon barrier hard, HV barriers relaxed.
pub fn qp_joint(
    x: &PlatoonState,
    v_d: f64,
    k_head: f64,
    k_tail: f64,
    p: &CbfParams,
    cfg: &PlatoonConfig,
    hv_models: &[HvParams],
    robust: bool,
) -> Result<FilterDecision> {
    let bounds = JointBounds::at(x, v_d, p, cfg, hv_models, robust);
    qp_joint_bounds(k_head, k_tail, &bounds)
}

pub fn qp_joint_bounds(k_head: f64, k_tail: f64, bounds: &JointBounds) -> Result<FilterDecision> {
    let (prob, tags) = bounds.problem(k_head, k_tail);
    let sol = solve_qp(&prob)?;
    let slacks = bounds
        .hv
        .iter()
        .enumerate()
        .map(|(k, r)| (r.hv, sol.z[2 + k].max(0.0)))
        .collect();
    Ok(FilterDecision {
        u_head: sol.z[0],
        u_tail: sol.z[1],
        slacks,
        active: sol.active.iter().map(|&i| tags[i]).collect(),
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platoon::{assemble_equilibrium, RangePolicy};
    use approx::assert_abs_diff_eq;

    fn setup() -> (PlatoonConfig, PlatoonState, CbfParams) {
        let cfg = PlatoonConfig::new(4).with_head_connected([1]);
        let x = assemble_equilibrium(&cfg, &[HvParams::CALIBRATED; 4], &RangePolicy::CAV_DEFAULT, 20.0)
            .unwrap();
        let mut p = CbfParams::standard(4);
        p.hv.insert(1, HvBarrier::default());
        (cfg, x, p)
    }

    #[test]
    fn bound_examples() {
        let (cfg, mut x, mut p) = setup();
        assert_abs_diff_eq!(ub_head(&x, 20.0, &p), 31.25, epsilon = 1e-12);
        assert_abs_diff_eq!(ub_tail(&x, &p), 31.25, epsilon = 1e-12);
        assert_abs_diff_eq!(lb_hv(&x, 1, 20.0, &HvParams::CALIBRATED, &p), -20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ub_platoon(&x, &cfg, &p), 212.0, epsilon = 1e-9);
        p.hv.get_mut(&1).unwrap().d_bar = 5.0;
        assert_abs_diff_eq!(robust_margin(1, &p), 12.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            robust_lb_hv(&x, 1, 20.0, &HvParams::CALIBRATED, &p),
            -7.5,
            epsilon = 1e-9
        );
        x.set_head(16.0, 20.0);
        assert_abs_diff_eq!(ub_head(&x, 20.0, &p), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ub_head(&x, 0.0, &p), -25.0, epsilon = 1e-12);
    }

    #[test]
    fn platoon_bound_with_closing_tail() {
        let cfg = PlatoonConfig {
            platoon_base_length: 100.0,
            ..PlatoonConfig::new(1)
        };
        let x = PlatoonState::from_vector(vec![10.0, 20.0, 40.0, 20.0, 51.0, 22.0]).unwrap();
        // s_HT = 51 + 40 + 5 + 5 = 101
        let p = CbfParams::standard(1);
        assert_abs_diff_eq!(ub_platoon(&x, &cfg, &p), -7.0, epsilon = 1e-12);
    }

    #[test]
    fn min_filters() {
        assert_eq!(filter_head_min(0.0, 31.25), 0.0);
        assert_eq!(filter_head_min(-3.0, -25.0), -25.0);
        assert_eq!(filter_tail_min(2.0, 2.0), 2.0);
    }

    #[test]
    fn head_qp_reduces_to_min_without_hvs() {
        let f = qp_head_bounds(3.0, 1.0, &[]);
        assert_eq!(f.u_head, 1.0);
        assert!(f.slacks.is_empty());
    }

    #[test]
    fn head_qp_single_row_closed_form() {
        let row = SoftBound {
            hv: 1,
            lb: 4.0,
            scale: 0.4,
            penalty: 100.0,
        };
        let f = qp_head_bounds(0.0, 10.0, &[row]);
        let w = 100.0 * 0.16;
        assert_abs_diff_eq!(f.u_head, w * 4.0 / (1.0 + w), epsilon = 1e-12);
        assert_abs_diff_eq!(f.slacks[&1], (4.0 - f.u_head) * 0.4, epsilon = 1e-12);
        let capped = qp_head_bounds(0.0, 2.0, &[row]);
        assert_eq!(capped.u_head, 2.0);
        assert_abs_diff_eq!(capped.slacks[&1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn joint_qp_transparent_at_equilibrium() {
        let (cfg, x, p) = setup();
        let d = qp_joint(&x, 20.0, 0.0, 0.0, &p, &cfg, &[HvParams::CALIBRATED; 4], false).unwrap();
        assert_eq!((d.u_head, d.u_tail), (0.0, 0.0));
        assert_eq!(d.slacks[&1], 0.0);
        assert!(d.active.is_empty());
    }

    #[test]
    fn validation_requires_connected_hvs() {
        let (cfg, _, mut p) = setup();
        assert!(p.validate(&cfg).is_ok());
        p.hv.insert(3, HvBarrier::default());
        assert!(p.validate(&cfg).is_err());
    }
}
