//! Scenario definitions and fixed-step simulation of the saturated closed loop.

pub mod export;
pub mod metrics;
pub mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cbf::{
    filter_head_min, filter_tail_min, qp_head, qp_joint, ub_head, ub_tail, CbfParams,
};
use crate::error::{Error, Result};
use crate::platoon::{
    assemble_equilibrium, check_fleet, closed_loop_rhs_into, nominal_head, nominal_tail,
    AccelOverride, ActuationLimits, CavGains, Disturbance, Drive, HvParams, PlatoonConfig,
    PlatoonState, RangePolicy, Vehicle,
};
use crate::safety::SafetyReadout;
pub use metrics::{metric_i, metric_i_bar, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Leader brakes at `accel` until it has shed `dv`, then recovers at the same rate.
    HeadHvDecel { accel: f64, dv: f64 },
    /// HV `hv` is forced to brake at `accel` until it has shed `dv`.
    MiddleHvDecel { hv: usize, accel: f64, dv: f64 },
    /// HV `hv` is forced to accelerate at `accel` until it has gained `dv`.
    MiddleHvAccel { hv: usize, accel: f64, dv: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Onset of the disturbance.
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub v_star: f64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            t0: 2.0,
            horizon: 50.0,
            dt: 0.01,
            v_star: 20.0,
        }
    }

    pub fn head_decel(accel: f64, dv: f64) -> Self {
        Self::new(ScenarioKind::HeadHvDecel { accel, dv })
    }

    pub fn hv_decel(hv: usize, accel: f64, dv: f64) -> Self {
        Self::new(ScenarioKind::MiddleHvDecel { hv, accel, dv })
    }

    pub fn hv_accel(hv: usize, accel: f64, dv: f64) -> Self {
        Self::new(ScenarioKind::MiddleHvAccel { hv, accel, dv })
    }

    fn accel_dv(&self) -> (f64, f64) {
        match self.kind {
            ScenarioKind::HeadHvDecel { accel, dv }
            | ScenarioKind::MiddleHvDecel { accel, dv, .. }
            | ScenarioKind::MiddleHvAccel { accel, dv, .. } => (accel, dv),
        }
    }

    /// Same scenario with a different speed drop or gain.
    pub fn with_dv(mut self, new_dv: f64) -> Self {
        match &mut self.kind {
            ScenarioKind::HeadHvDecel { dv, .. }
            | ScenarioKind::MiddleHvDecel { dv, .. }
            | ScenarioKind::MiddleHvAccel { dv, .. } => *dv = new_dv,
        }
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self, n_hv: usize) -> Result<()> {
        let (a, dv) = self.accel_dv();
        if !(a > 0.0 && dv >= 0.0) {
            return Err(Error::invalid("scenario needs accel > 0 and dv >= 0"));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.t0 >= 0.0) {
            return Err(Error::invalid("scenario needs dt > 0, horizon > 0, t0 >= 0"));
        }
        let span = match self.kind {
            ScenarioKind::HeadHvDecel { .. } => 2.0 * dv / a,
            _ => dv / a,
        };
        if self.t0 + span > self.horizon + 1e-9 {
            return Err(Error::invalid("disturbance does not finish within the horizon"));
        }
        if let ScenarioKind::HeadHvDecel { .. } | ScenarioKind::MiddleHvDecel { .. } = self.kind {
            if dv > self.v_star {
                return Err(Error::invalid("speed drop exceeds the equilibrium speed"));
            }
        }
        if let ScenarioKind::MiddleHvDecel { hv, .. } | ScenarioKind::MiddleHvAccel { hv, .. } =
            self.kind
        {
            if hv == 0 || hv > n_hv {
                return Err(Error::invalid(format!("scenario HV {hv} outside 1..={n_hv}")));
            }
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::invalid("horizon must be a whole number of steps"));
        }
        Ok(())
    }

    pub fn leader_speed(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::HeadHvDecel { accel, dv } => {
                let ramp = dv / accel;
                let tau = t - self.t0;
                if tau <= 0.0 || tau >= 2.0 * ramp {
                    self.v_star
                } else if tau <= ramp {
                    self.v_star - accel * tau
                } else {
                    self.v_star - dv + accel * (tau - ramp)
                }
            }
            _ => self.v_star,
        }
    }

    /// Forced HV acceleration at time `t`, if any.
    pub fn forced_accel(&self, t: f64) -> Option<AccelOverride> {
        let (hv, accel, dv) = match self.kind {
            ScenarioKind::HeadHvDecel { .. } => return None,
            ScenarioKind::MiddleHvDecel { hv, accel, dv } => (hv, -accel, dv),
            ScenarioKind::MiddleHvAccel { hv, accel, dv } => (hv, accel, dv),
        };
        let end = self.t0 + dv / accel.abs();
        (t >= self.t0 && t <= end).then_some(AccelOverride {
            vehicle: Vehicle::Hv(hv),
            accel,
        })
    }
}

/// Leader speed and forced HV acceleration at `t`.
pub fn disturbance_speed(scenario: &Scenario, t: f64) -> (f64, Option<AccelOverride>) {
    (scenario.leader_speed(t), scenario.forced_accel(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Nominal,
    /// Min-form filters on both CAVs.
    CbfCav,
    /// Relaxed HV-safety QP on the head CAV, min filter on the tail CAV.
    CbfCavHv,
    /// Joint QP over both CAVs with the platoon-length barrier.
    CbfFull,
    /// As `CbfCavHv` with the model-error margin on the HV rows.
    RobustCbfCavHv,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 5] = [
        ControllerMode::Nominal,
        ControllerMode::CbfCav,
        ControllerMode::CbfCavHv,
        ControllerMode::CbfFull,
        ControllerMode::RobustCbfCavHv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerMode::Nominal => "nominal",
            ControllerMode::CbfCav => "cbf_cav",
            ControllerMode::CbfCavHv => "cbf_cav_hv",
            ControllerMode::CbfFull => "cbf_full",
            ControllerMode::RobustCbfCavHv => "robust_cbf_cav_hv",
        }
    }

    /// Safety functions this mode enforces (HV entries only for HVs with a barrier).
    pub fn enforced(&self, cbf: &CbfParams) -> Vec<SafetyKey> {
        let mut keys = match self {
            ControllerMode::Nominal => return Vec::new(),
            _ => vec![SafetyKey::Head, SafetyKey::Tail],
        };
        if matches!(
            self,
            ControllerMode::CbfCavHv | ControllerMode::CbfFull | ControllerMode::RobustCbfCavHv
        ) {
            keys.extend(cbf.hv.keys().map(|&i| SafetyKey::Hv(i)));
        }
        if *self == ControllerMode::CbfFull {
            keys.push(SafetyKey::Platoon);
        }
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SafetyKey {
    Head,
    Tail,
    Hv(usize),
    Platoon,
}

impl SafetyKey {
    pub fn label(&self) -> String {
        match self {
            SafetyKey::Head => "h_H".into(),
            SafetyKey::Tail => "h_T".into(),
            SafetyKey::Hv(i) => format!("h_{i}"),
            SafetyKey::Platoon => "h_p".into(),
        }
    }

    pub fn value(&self, r: &SafetyReadout) -> f64 {
        match *self {
            SafetyKey::Head => r.h_head,
            SafetyKey::Tail => r.h_tail,
            SafetyKey::Hv(i) => r.h_hv[i - 1],
            SafetyKey::Platoon => r.h_platoon,
        }
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub platoon: PlatoonConfig,
    /// Driver parameters of the simulated HVs.
    pub plant_hv: Vec<HvParams>,
    /// Driver model the safety filters believe in.
    pub design_hv: Vec<HvParams>,
    pub range_policy: RangePolicy,
    pub gains: CavGains,
    pub cbf: CbfParams,
    pub limits: ActuationLimits,
    /// Constant additive HV acceleration error.
    pub disturbance: Disturbance,
    pub scenario: Scenario,
    pub mode: ControllerMode,
    /// Starting state; the plant equilibrium at `v_star` when absent.
    pub initial: Option<PlatoonState>,
}

impl Experiment {
    /// Four calibrated HVs, ACC gains with `(0.5, 1.2)` cooperation, head-HV braking.
    pub fn standard(mode: ControllerMode) -> Self {
        let n = 4;
        Self {
            platoon: PlatoonConfig::new(n),
            plant_hv: vec![HvParams::CALIBRATED; n],
            design_hv: vec![HvParams::CALIBRATED; n],
            range_policy: RangePolicy::CAV_DEFAULT,
            gains: CavGains::acc_only().with_cooperation(0.5, 1.2),
            cbf: CbfParams::standard(n),
            limits: ActuationLimits::default(),
            disturbance: Disturbance::zero(n),
            scenario: Scenario::head_decel(5.0, 20.0),
            mode,
            initial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.platoon.validate()?;
        check_fleet(&self.platoon, &self.plant_hv)?;
        check_fleet(&self.platoon, &self.design_hv)?;
        for p in self.plant_hv.iter().chain(&self.design_hv) {
            p.validate()?;
        }
        self.range_policy.validate()?;
        self.gains.check_topology(&self.platoon)?;
        self.cbf.validate(&self.platoon)?;
        self.limits.validate()?;
        if !self.disturbance.d.is_empty() && self.disturbance.d.len() != self.platoon.n_hv {
            return Err(Error::invalid("disturbance needs one entry per HV"));
        }
        self.scenario.validate(self.platoon.n_hv)?;
        if let Some(x) = &self.initial {
            if x.as_slice().len() != self.platoon.state_dim() {
                return Err(Error::StateLength(x.as_slice().len()));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<PlatoonState> {
        match &self.initial {
            Some(x) => Ok(x.clone()),
            None => assemble_equilibrium(
                &self.platoon,
                &self.plant_hv,
                &self.range_policy,
                self.scenario.v_star,
            ),
        }
    }
}

/// Control decision held over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub u_head_nominal: f64,
    pub u_tail_nominal: f64,
    /// Filter output before saturation.
    pub u_head: f64,
    pub u_tail: f64,
    pub slacks: BTreeMap<usize, f64>,
}

/// Nominal controllers followed by the mode's safety filter.
pub fn control(exp: &Experiment, x: &PlatoonState, v_d: f64) -> Result<ControlAction> {
    let (cfg, g, rp, p) = (&exp.platoon, &exp.gains, &exp.range_policy, &exp.cbf);
    let kh = nominal_head(x, v_d, g, rp, cfg);
    let kt = nominal_tail(x, g, rp, cfg);
    let (u_head, u_tail, slacks) = match exp.mode {
        ControllerMode::Nominal => (kh, kt, BTreeMap::new()),
        ControllerMode::CbfCav => (
            filter_head_min(kh, ub_head(x, v_d, p)),
            filter_tail_min(kt, ub_tail(x, p)),
            BTreeMap::new(),
        ),
        ControllerMode::CbfCavHv | ControllerMode::RobustCbfCavHv => {
            let robust = exp.mode == ControllerMode::RobustCbfCavHv;
            let head = qp_head(x, v_d, kh, p, &exp.design_hv, robust);
            (head.u_head, filter_tail_min(kt, ub_tail(x, p)), head.slacks)
        }
        ControllerMode::CbfFull => {
            let d = qp_joint(x, v_d, kh, kt, p, cfg, &exp.design_hv, false)?;
            (d.u_head, d.u_tail, d.slacks)
        }
    };
    Ok(ControlAction {
        u_head_nominal: kh,
        u_tail_nominal: kt,
        u_head,
        u_tail,
        slacks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v_d: f64,
    pub x: PlatoonState,
    pub action: ControlAction,
    pub u_head_applied: f64,
    pub u_tail_applied: f64,
    pub safety: SafetyReadout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub n_hv: usize,
    pub v_star: f64,
    pub samples: Vec<Sample>,
    /// Diagnostics raised during the run (forced-profile clamps, negative speeds).
    pub events: Vec<String>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, f: impl Fn(&Sample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    pub fn min_of(&self, f: impl Fn(&Sample) -> f64) -> f64 {
        self.samples.iter().map(f).fold(f64::INFINITY, f64::min)
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has samples")
    }
}

/// Classical RK4 at fixed `dt`; the control is computed once per step at the
/// step start and held, while the leader speed and forced HV profiles are
/// evaluated at every stage.
pub fn integrate(exp: &Experiment, initial: &PlatoonState) -> Result<TrajectoryRecord> {
    exp.validate()?;
    let sc = &exp.scenario;
    let n = exp.platoon.state_dim();
    let steps = sc.steps();
    let etas = exp.cbf.etas();
    let mut x = initial.clone();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    let mut clamp_logged = false;
    let mut negative_logged = false;

    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut stage = vec![0.0; n];

    for step in 0..=steps {
        let t = step as f64 * sc.dt;
        if let Some(bad) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                t,
                detail: format!("state entry {bad} is {}", x.as_slice()[bad]),
            });
        }
        if !negative_logged && x.speeds().any(|v| v < 0.0) {
            negative_logged = true;
            events.push(format!("negative speed first seen at t = {t:.2} s"));
        }
        let v_d = sc.leader_speed(t);
        let action = control(exp, &x, v_d)?;
        if !(action.u_head.is_finite() && action.u_tail.is_finite()) {
            return Err(Error::NonFiniteState {
                t,
                detail: "controller output is not finite".into(),
            });
        }
        let u_head_applied = exp.limits.sat(action.u_head);
        let u_tail_applied = exp.limits.sat(action.u_tail);
        samples.push(Sample {
            t,
            v_d,
            x: x.clone(),
            safety: SafetyReadout::new(&x, &exp.platoon, &exp.cbf.headways, &etas),
            action: action.clone(),
            u_head_applied,
            u_tail_applied,
        });
        if step == steps {
            break;
        }

        let offsets = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            let ts = t + offsets[s] * sc.dt;
            stage.copy_from_slice(x.as_slice());
            if s > 0 {
                for (j, v) in stage.iter_mut().enumerate() {
                    *v += offsets[s] * sc.dt * k[s - 1][j];
                }
            }
            let mut forced = sc.forced_accel(ts);
            if let Some(f) = forced.as_mut() {
                if let Vehicle::Hv(i) = f.vehicle {
                    if f.accel < 0.0 && stage[2 * i + 1] <= 0.0 {
                        f.accel = 0.0;
                        if !clamp_logged {
                            clamp_logged = true;
                            events.push(format!(
                                "forced deceleration of HV {i} clamped at standstill near t = {ts:.2} s"
                            ));
                        }
                    }
                }
            }
            let drive = Drive {
                v_d: sc.leader_speed(ts),
                u_head: action.u_head,
                u_tail: action.u_tail,
                hv: &exp.plant_hv,
                disturbance: &exp.disturbance,
                limits: exp.limits,
                accel_override: forced,
            };
            closed_loop_rhs_into(&stage, &drive, &mut k[s]);
        }
        let xs = x.as_mut_slice();
        for j in 0..n {
            xs[j] += sc.dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
    }
    Ok(TrajectoryRecord {
        n_hv: exp.platoon.n_hv,
        v_star: sc.v_star,
        samples,
        events,
    })
}

/// Integrates from the experiment's initial state and evaluates the metrics.
pub fn run_experiment(exp: &Experiment) -> Result<(TrajectoryRecord, Metrics)> {
    let x0 = exp.initial_state()?;
    let traj = integrate(exp, &x0)?;
    let metrics = Metrics::evaluate(&traj, exp);
    Ok((traj, metrics))
}
