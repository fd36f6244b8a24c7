//! String-stability indices and safety summaries of a simulated run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Experiment, SafetyKey, TrajectoryRecord};
use crate::error::{Error, Result};

/// Tolerance below which a safety function counts as violated.
pub const SAFE_TOL: f64 = -1e-3;

/// Trapezoidal integral of `f(t)^2` on the record grid.
fn l2_squared(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] * fw[0] + fw[1] * fw[1]))
        .sum()
}

/// L2 ratio of a speed trace's deviation from `v_star` to the leader's.
pub fn l2_ratio(t: &[f64], v: &[f64], v_d: &[f64], v_star: f64) -> Result<f64> {
    let dev = |s: &[f64]| s.iter().map(|x| x - v_star).collect::<Vec<_>>();
    let den = l2_squared(t, &dev(v_d));
    if den <= 0.0 {
        return Err(Error::IndexNotApplicable);
    }
    Ok((l2_squared(t, &dev(v)) / den).sqrt())
}

/// Head-to-tail index: tail-CAV speed perturbation relative to the leader's.
pub fn metric_i(traj: &TrajectoryRecord, v_star: f64) -> Result<f64> {
    let t = traj.times();
    l2_ratio(&t, &traj.series(|s| s.x.v_tail()), &traj.series(|s| s.v_d), v_star)
}

/// Mean of the per-vehicle ratios over the head CAV, every HV and the tail CAV.
pub fn metric_i_bar(traj: &TrajectoryRecord, v_star: f64) -> Result<f64> {
    let t = traj.times();
    let v_d = traj.series(|s| s.v_d);
    let n = traj.n_hv;
    let mut total = 0.0;
    for k in 0..n + 2 {
        let v = traj.series(|s| s.x.as_slice()[2 * k + 1]);
        total += l2_ratio(&t, &v, &v_d, v_star)?;
    }
    Ok(total / (n + 2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the leader never leaves `v_star`.
    #[serde(rename = "I")]
    pub i: Option<f64>,
    #[serde(rename = "I_bar")]
    pub i_bar: Option<f64>,
    /// Minimum of every safety function, keyed `h_H`, `h_T`, `h_1`.., `h_p`.
    pub min_h: BTreeMap<String, f64>,
    /// Smallest gap of any vehicle.
    pub min_gap: f64,
    pub collision: bool,
    pub min_u_head_applied: f64,
    pub min_u_tail_applied: f64,
    /// Minimum over the safety functions the controller enforces.
    pub min_enforced_h: Option<f64>,
    pub safe: bool,
}

impl Metrics {
    pub fn evaluate(traj: &TrajectoryRecord, exp: &Experiment) -> Self {
        let v_star = traj.v_star;
        let n = traj.n_hv;
        let mut keys = vec![SafetyKey::Head, SafetyKey::Tail];
        keys.extend((1..=n).map(SafetyKey::Hv));
        keys.push(SafetyKey::Platoon);
        let min_h: BTreeMap<String, f64> = keys
            .iter()
            .map(|k| (k.label(), traj.min_of(|s| k.value(&s.safety))))
            .collect();
        let min_gap = traj.min_of(|s| s.x.gaps().fold(f64::INFINITY, f64::min));
        let enforced = exp.mode.enforced(&exp.cbf);
        let min_enforced_h = (!enforced.is_empty()).then(|| {
            enforced
                .iter()
                .map(|k| min_h[&k.label()])
                .fold(f64::INFINITY, f64::min)
        });
        let collision = min_gap <= 0.0;
        Self {
            i: metric_i(traj, v_star).ok(),
            i_bar: metric_i_bar(traj, v_star).ok(),
            min_h,
            min_gap,
            collision,
            min_u_head_applied: traj.min_of(|s| s.u_head_applied),
            min_u_tail_applied: traj.min_of(|s| s.u_tail_applied),
            min_enforced_h,
            safe: !collision && min_enforced_h.map_or(true, |h| h >= SAFE_TOL),
        }
    }

    pub fn h(&self, key: SafetyKey) -> f64 {
        self.min_h[&key.label()]
    }
}
