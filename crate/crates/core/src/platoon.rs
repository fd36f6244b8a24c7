//! Platoon domain types and the nonlinear vehicle models.
//!
//! The platoon is a head CAV following an exogenous leader HV, `N` middle
//! human-driven vehicles, and a tail CAV following HV-`N`. Gaps and speeds are
//! stored in one flat vector ordered
//! `[s_H, v_H, s_1, v_1, ..., s_N, v_N, s_T, v_T]`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Topology and geometry of the mixed platoon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonConfig {
    pub n_hv: usize,
    /// HVs (1-based) whose state is fed to the head CAV over V2V.
    pub head_connected: BTreeSet<usize>,
    /// HVs (1-based) fed to the tail CAV over V2V. Never contains `n_hv`:
    /// the tail CAV senses HV-N directly.
    pub tail_connected: BTreeSet<usize>,
    /// Vehicle length of each HV in meters.
    pub hv_lengths: Vec<f64>,
    pub tail_cav_length: f64,
    /// Base length `l_0` of the platoon used by the platoon safety function.
    pub platoon_base_length: f64,
}

impl PlatoonConfig {
    /// `n_hv` unconnected HVs, 5 m vehicles and a 100 m base length.
    pub fn new(n_hv: usize) -> Self {
        Self {
            n_hv,
            head_connected: BTreeSet::new(),
            tail_connected: BTreeSet::new(),
            hv_lengths: vec![5.0; n_hv],
            tail_cav_length: 5.0,
            platoon_base_length: 100.0,
        }
    }

    pub fn with_head_connected(mut self, hvs: impl IntoIterator<Item = usize>) -> Self {
        self.head_connected = hvs.into_iter().collect();
        self
    }

    pub fn with_tail_connected(mut self, hvs: impl IntoIterator<Item = usize>) -> Self {
        self.tail_connected = hvs.into_iter().collect();
        self
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_hv + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hv == 0 {
            return Err(Error::invalid("platoon needs at least one HV"));
        }
        if let Some(&i) = self.head_connected.iter().find(|&&i| i == 0 || i > self.n_hv) {
            return Err(Error::invalid(format!(
                "head-connected HV index {i} outside 1..={}",
                self.n_hv
            )));
        }
        if let Some(&i) = self
            .tail_connected
            .iter()
            .find(|&&i| i == 0 || i >= self.n_hv)
        {
            return Err(Error::invalid(format!(
                "tail-connected HV index {i} outside 1..={} (HV-N is sensed, not connected)",
                self.n_hv.saturating_sub(1)
            )));
        }
        if self.hv_lengths.len() != self.n_hv {
            return Err(Error::invalid(format!(
                "expected {} HV lengths, got {}",
                self.n_hv,
                self.hv_lengths.len()
            )));
        }
        let all_positive = self.hv_lengths.iter().all(|&l| l > 0.0)
            && self.tail_cav_length > 0.0
            && self.platoon_base_length > 0.0;
        if !all_positive {
            return Err(Error::invalid("vehicle and platoon lengths must be positive"));
        }
        Ok(())
    }
}

/// Piecewise-linear range policy mapping a gap to a desired speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangePolicy {
    pub s_st: f64,
    pub s_go: f64,
    pub v_max: f64,
}

impl RangePolicy {
    /// Policy used by both CAVs: `s_st = 2 m`, `s_go = 40 m`, `v_max = 40 m/s`.
    pub const CAV_DEFAULT: RangePolicy = RangePolicy {
        s_st: 2.0,
        s_go: 40.0,
        v_max: 40.0,
    };

    pub fn new(s_st: f64, s_go: f64, v_max: f64) -> Self {
        Self { s_st, s_go, v_max }
    }

    pub fn kappa(&self) -> f64 {
        self.v_max / (self.s_go - self.s_st)
    }

    pub fn speed(&self, s: f64) -> f64 {
        range_policy_v(self, s)
    }

    /// `V'(s)`, undefined on the two kinks.
    pub fn slope(&self, s: f64) -> Option<f64> {
        if s < self.s_st || s > self.s_go {
            Some(0.0)
        } else if s > self.s_st && s < self.s_go {
            Some(self.kappa())
        } else {
            None
        }
    }

    /// Inverse of the policy on its linear branch: the gap with `V(s) = v_star`.
    pub fn equilibrium_gap(&self, v_star: f64) -> Result<f64> {
        if !(0.0..self.v_max).contains(&v_star) {
            return Err(Error::NoInteriorEquilibrium {
                v_star,
                v_max: self.v_max,
            });
        }
        Ok(self.s_st + v_star / self.kappa())
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_st > 0.0 && self.s_go > self.s_st && self.v_max > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "range policy needs s_go > s_st > 0 and v_max > 0, got {self:?}"
            )))
        }
    }
}

impl Default for RangePolicy {
    fn default() -> Self {
        Self::CAV_DEFAULT
    }
}

/// Optimal velocity model parameters of one human driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvParams {
    /// Sensitivity to the desired speed, 1/s.
    pub a: f64,
    /// Sensitivity to the speed difference, 1/s.
    pub b: f64,
    pub s_st: f64,
    pub s_go: f64,
    pub v_max: f64,
}

impl HvParams {
    /// Driver parameters calibrated on highway trajectory data.
    pub const CALIBRATED: HvParams = HvParams {
        a: 0.16,
        b: 0.16,
        s_st: 1.9,
        s_go: 46.3,
        v_max: 40.0,
    };

    pub fn range_policy(&self) -> RangePolicy {
        RangePolicy::new(self.s_st, self.s_go, self.v_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 {
            self.range_policy().validate()
        } else {
            Err(Error::invalid(format!(
                "driver gains a, b must be positive, got {self:?}"
            )))
        }
    }
}

impl Default for HvParams {
    fn default() -> Self {
        Self::CALIBRATED
    }
}

/// Gains of the two nominal cooperative controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavGains {
    pub alpha_head: f64,
    pub beta_head_d: f64,
    /// Head CAV feedback from connected HVs, keyed by 1-based HV index.
    pub beta_head_hv: BTreeMap<usize, f64>,
    pub beta_head_tail: f64,
    pub alpha_tail: f64,
    pub beta_tail_n: f64,
    pub beta_tail_hv: BTreeMap<usize, f64>,
    pub beta_tail_head: f64,
}

impl CavGains {
    /// Plain ACC on both CAVs: `alpha = 0.4`, `beta = 0.6`, no cooperation.
    pub fn acc_only() -> Self {
        Self {
            alpha_head: 0.4,
            beta_head_d: 0.6,
            beta_head_hv: BTreeMap::new(),
            beta_head_tail: 0.0,
            alpha_tail: 0.4,
            beta_tail_n: 0.6,
            beta_tail_hv: BTreeMap::new(),
            beta_tail_head: 0.0,
        }
    }

    pub fn with_cooperation(mut self, beta_head_tail: f64, beta_tail_head: f64) -> Self {
        self.beta_head_tail = beta_head_tail;
        self.beta_tail_head = beta_tail_head;
        self
    }

    /// Sum of all speed-feedback gains of the head CAV (`eta_H`).
    pub fn head_damping(&self) -> f64 {
        self.alpha_head + self.beta_head_d + self.beta_head_hv.values().sum::<f64>() + self.beta_head_tail
    }

    pub fn tail_damping(&self) -> f64 {
        self.alpha_tail + self.beta_tail_n + self.beta_tail_hv.values().sum::<f64>() + self.beta_tail_head
    }

    /// HV feedback maps must be defined exactly on the connected sets.
    pub fn check_topology(&self, cfg: &PlatoonConfig) -> Result<()> {
        let head: BTreeSet<usize> = self.beta_head_hv.keys().copied().collect();
        let tail: BTreeSet<usize> = self.beta_tail_hv.keys().copied().collect();
        if head != cfg.head_connected {
            return Err(Error::invalid(format!(
                "head HV gains {head:?} do not match head-connected set {:?}",
                cfg.head_connected
            )));
        }
        if tail != cfg.tail_connected {
            return Err(Error::invalid(format!(
                "tail HV gains {tail:?} do not match tail-connected set {:?}",
                cfg.tail_connected
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuationLimits {
    pub u_min: f64,
    pub u_max: f64,
}

impl ActuationLimits {
    pub fn new(u_min: f64, u_max: f64) -> Self {
        Self { u_min, u_max }
    }

    pub fn sat(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_min < 0.0 && self.u_max > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("actuation limits need u_min < 0 < u_max"))
        }
    }
}

impl Default for ActuationLimits {
    fn default() -> Self {
        Self::new(-7.0, 7.0)
    }
}

/// Additive unmodeled HV acceleration `d_i`, one entry per HV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Disturbance {
    pub d: Vec<f64>,
}

impl Disturbance {
    pub fn zero(n_hv: usize) -> Self {
        Self { d: vec![0.0; n_hv] }
    }

    fn get(&self, i: usize) -> f64 {
        self.d.get(i - 1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vehicle {
    Head,
    /// 1-based HV index.
    Hv(usize),
    Tail,
}

/// Replaces a vehicle's model or controller acceleration for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelOverride {
    pub vehicle: Vehicle,
    pub accel: f64,
}

/// Platoon state in flat-vector layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState(Vec<f64>);

impl PlatoonState {
    pub fn from_vector(v: Vec<f64>) -> Result<Self> {
        if v.len() < 6 || v.len() % 2 != 0 {
            return Err(Error::StateLength(v.len()));
        }
        Ok(Self(v))
    }

    pub fn zeros(n_hv: usize) -> Self {
        Self(vec![0.0; 2 * n_hv + 4])
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.0.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn n_hv(&self) -> usize {
        (self.0.len() - 4) / 2
    }

    pub fn s_head(&self) -> f64 {
        self.0[0]
    }

    pub fn v_head(&self) -> f64 {
        self.0[1]
    }

    /// Gap of HV-`i`, 1-based.
    pub fn s_hv(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn v_hv(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    pub fn s_tail(&self) -> f64 {
        self.0[self.0.len() - 2]
    }

    pub fn v_tail(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Speed of the vehicle directly ahead of HV-`i` (`v_0 = v_H`).
    pub fn v_ahead_of_hv(&self, i: usize) -> f64 {
        self.0[2 * i - 1]
    }

    pub fn set_head(&mut self, s: f64, v: f64) {
        self.0[0] = s;
        self.0[1] = v;
    }

    pub fn set_hv(&mut self, i: usize, s: f64, v: f64) {
        self.0[2 * i] = s;
        self.0[2 * i + 1] = v;
    }

    pub fn set_tail(&mut self, s: f64, v: f64) {
        let n = self.0.len();
        self.0[n - 2] = s;
        self.0[n - 1] = v;
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().skip(1).step_by(2).copied()
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().step_by(2).copied()
    }
}

pub fn range_policy_v(rp: &RangePolicy, s: f64) -> f64 {
    if s <= rp.s_st {
        0.0
    } else if s >= rp.s_go {
        rp.v_max
    } else {
        rp.kappa() * (s - rp.s_st)
    }
}

/// `W(v) = min(v, v_max)`; negative speeds pass through.
pub fn speed_cap_w(v: f64, v_max: f64) -> f64 {
    v.min(v_max)
}

/// Optimal velocity model acceleration `a (V(s) - v) + b s_dot`.
pub fn ovm_accel(p: &HvParams, s: f64, v: f64, s_dot: f64) -> f64 {
    p.a * (range_policy_v(&p.range_policy(), s) - v) + p.b * s_dot
}

pub fn nominal_head(
    x: &PlatoonState,
    v_d: f64,
    g: &CavGains,
    rp: &RangePolicy,
    cfg: &PlatoonConfig,
) -> f64 {
    let v_h = x.v_head();
    let w = |v: f64| speed_cap_w(v, rp.v_max);
    let hv_feedback: f64 = cfg
        .head_connected
        .iter()
        .map(|&i| g.beta_head_hv.get(&i).copied().unwrap_or(0.0) * (w(x.v_hv(i)) - v_h))
        .sum();
    g.alpha_head * (rp.speed(x.s_head()) - v_h)
        + g.beta_head_d * (w(v_d) - v_h)
        + hv_feedback
        + g.beta_head_tail * (w(x.v_tail()) - v_h)
}

pub fn nominal_tail(x: &PlatoonState, g: &CavGains, rp: &RangePolicy, cfg: &PlatoonConfig) -> f64 {
    let v_t = x.v_tail();
    let w = |v: f64| speed_cap_w(v, rp.v_max);
    let hv_feedback: f64 = cfg
        .tail_connected
        .iter()
        .map(|&i| g.beta_tail_hv.get(&i).copied().unwrap_or(0.0) * (w(x.v_hv(i)) - v_t))
        .sum();
    g.alpha_tail * (rp.speed(x.s_tail()) - v_t)
        + g.beta_tail_n * (w(x.v_hv(cfg.n_hv)) - v_t)
        + hv_feedback
        + g.beta_tail_head * (w(x.v_head()) - v_t)
}

/// Gap at which the driver's desired speed equals `v_star`.
pub fn hv_equilibrium_gap(p: &HvParams, v_star: f64) -> Result<f64> {
    p.range_policy().equilibrium_gap(v_star)
}

pub fn cav_equilibrium_gap(rp: &RangePolicy, v_star: f64) -> Result<f64> {
    rp.equilibrium_gap(v_star)
}

/// Uniform-flow equilibrium: every vehicle at `v_star` with its policy gap.
pub fn assemble_equilibrium(
    cfg: &PlatoonConfig,
    hv: &[HvParams],
    rp: &RangePolicy,
    v_star: f64,
) -> Result<PlatoonState> {
    check_fleet(cfg, hv)?;
    let s_cav = cav_equilibrium_gap(rp, v_star)?;
    let mut x = PlatoonState::zeros(cfg.n_hv);
    x.set_head(s_cav, v_star);
    for (i, p) in (1..=cfg.n_hv).zip(hv) {
        x.set_hv(i, hv_equilibrium_gap(p, v_star)?, v_star);
    }
    x.set_tail(s_cav, v_star);
    Ok(x)
}

pub(crate) fn check_fleet(cfg: &PlatoonConfig, hv: &[HvParams]) -> Result<()> {
    if hv.len() != cfg.n_hv {
        return Err(Error::invalid(format!(
            "expected {} HV parameter sets, got {}",
            cfg.n_hv,
            hv.len()
        )));
    }
    Ok(())
}

/// Inputs of one closed-loop derivative evaluation besides the state.
#[derive(Debug, Clone, Copy)]
pub struct Drive<'a> {
    pub v_d: f64,
    pub u_head: f64,
    pub u_tail: f64,
    pub hv: &'a [HvParams],
    pub disturbance: &'a Disturbance,
    pub limits: ActuationLimits,
    pub accel_override: Option<AccelOverride>,
}

/// Saturated platoon dynamics written into `out` (same layout as `x`).
pub fn closed_loop_rhs_into(x: &[f64], drive: &Drive<'_>, out: &mut [f64]) {
    let n = (x.len() - 4) / 2;
    let sat = |u: f64| drive.limits.sat(u);
    let forced = |vehicle: Vehicle| {
        drive
            .accel_override
            .filter(|o| o.vehicle == vehicle)
            .map(|o| o.accel)
    };

    out[0] = drive.v_d - x[1];
    out[1] = sat(forced(Vehicle::Head).unwrap_or(drive.u_head));
    for i in 1..=n {
        let (s, v, v_ahead) = (x[2 * i], x[2 * i + 1], x[2 * i - 1]);
        let s_dot = v_ahead - v;
        out[2 * i] = s_dot;
        let raw = forced(Vehicle::Hv(i)).unwrap_or_else(|| {
            ovm_accel(&drive.hv[i - 1], s, v, s_dot) + drive.disturbance.get(i)
        });
        out[2 * i + 1] = sat(raw);
    }
    out[2 * n + 2] = x[2 * n + 1] - x[2 * n + 3];
    out[2 * n + 3] = sat(forced(Vehicle::Tail).unwrap_or(drive.u_tail));
}

/// Time derivative of the platoon state under the given inputs.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_rhs(
    x: &PlatoonState,
    v_d: f64,
    u_head: f64,
    u_tail: f64,
    hv: &[HvParams],
    d: &Disturbance,
    limits: ActuationLimits,
    accel_override: Option<AccelOverride>,
) -> PlatoonState {
    let drive = Drive {
        v_d,
        u_head,
        u_tail,
        hv,
        disturbance: d,
        limits,
        accel_override,
    };
    let mut out = vec![0.0; x.as_slice().len()];
    closed_loop_rhs_into(x.as_slice(), &drive, &mut out);
    PlatoonState(out)
}
