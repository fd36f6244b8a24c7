//! TOML experiment files. Every field is optional and falls back to the
//! standard setup: four calibrated HVs, ACC gains 0.4/0.6 on both CAVs,
//! headways 0.8 s / 1 s, CBF rates 5 1/s, +-7 m/s^2 actuation, and the
//! leader braking 5 m/s^2 from 20 m/s to a stop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::{CbfParams, HvBarrier};
use crate::error::{Error, Result};
use crate::platoon::{ActuationLimits, CavGains, Disturbance, HvParams, PlatoonConfig, RangePolicy};
use crate::safety::{GainKnob, SafetyHeadways};
use crate::sim::sweep::HvParamKind;
use crate::sim::{ControllerMode, Experiment, Scenario, ScenarioKind};
use crate::stability::GainAxis;

/// Experiment files shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig2a", include_str!("../configs/fig2a.toml")),
    ("fig2b", include_str!("../configs/fig2b.toml")),
    ("fig2c", include_str!("../configs/fig2c.toml")),
    ("fig3d", include_str!("../configs/fig3d.toml")),
    ("fig4_nominal", include_str!("../configs/fig4_nominal.toml")),
    ("fig4_cbf", include_str!("../configs/fig4_cbf.toml")),
    ("fig5", include_str!("../configs/fig5.toml")),
    ("fig6", include_str!("../configs/fig6.toml")),
    ("fig7", include_str!("../configs/fig7.toml")),
    ("robust", include_str!("../configs/robust.toml")),
    ("sweep_gains", include_str!("../configs/sweep_gains.toml")),
    ("sweep_hv_count", include_str!("../configs/sweep_hv_count.toml")),
    ("sweep_hv_params", include_str!("../configs/sweep_hv_params.toml")),
];

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonSpec {
    pub n_hv: usize,
    pub vehicle_length: f64,
    pub platoon_base_length: f64,
}

impl Default for PlatoonSpec {
    fn default() -> Self {
        Self {
            n_hv: 4,
            vehicle_length: 5.0,
            platoon_base_length: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSpec {
    pub alpha_head: f64,
    pub beta_head_d: f64,
    pub beta_head_tail: f64,
    pub alpha_tail: f64,
    pub beta_tail_n: f64,
    pub beta_tail_head: f64,
    /// Keys are HV indices; their presence connects that HV to the head CAV.
    pub beta_head_hv: BTreeMap<String, f64>,
    pub beta_tail_hv: BTreeMap<String, f64>,
}

impl Default for GainSpec {
    fn default() -> Self {
        Self {
            alpha_head: 0.4,
            beta_head_d: 0.6,
            beta_head_tail: 0.0,
            alpha_tail: 0.4,
            beta_tail_n: 0.6,
            beta_tail_head: 0.0,
            beta_head_hv: BTreeMap::new(),
            beta_tail_hv: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfSpec {
    pub tau_head: f64,
    pub tau_tail: f64,
    /// Applied to every HV.
    pub tau_hv: f64,
    pub tau_platoon: f64,
    pub gamma_head: f64,
    pub gamma_tail: f64,
    pub gamma_platoon: f64,
    /// HV barriers keyed by HV index.
    pub hv: BTreeMap<String, HvBarrier>,
}

impl Default for CbfSpec {
    fn default() -> Self {
        Self {
            tau_head: 0.8,
            tau_tail: 0.8,
            tau_hv: 1.0,
            tau_platoon: 1.0,
            gamma_head: 5.0,
            gamma_tail: 5.0,
            gamma_platoon: 5.0,
            hv: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    HeadHvDecel,
    MiddleHvDecel,
    MiddleHvAccel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioName,
    /// Disturbed HV; ignored for the leader scenario.
    pub hv: usize,
    pub accel: f64,
    pub dv: f64,
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub v_star: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioName::HeadHvDecel,
            hv: 1,
            accel: 5.0,
            dv: 20.0,
            t0: 2.0,
            horizon: 50.0,
            dt: 0.01,
            v_star: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Stability,
    Safety,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub x_axis: GainAxis,
    pub y_axis: GainAxis,
    /// Swept gains of a safety chart; a stability chart always uses the
    /// two cooperation gains.
    pub x_gain: String,
    pub y_gain: String,
}

impl Default for ChartSpec {
    fn default() -> Self {
        Self {
            kind: ChartKind::Stability,
            x_axis: GainAxis::new(-1.0, 2.0, 61),
            y_axis: GainAxis::new(-1.0, 3.0, 61),
            x_gain: "beta_head_tail".into(),
            y_gain: "beta_tail_head".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Gains,
    HvCount,
    HvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub modes: Vec<ControllerMode>,
    pub x_axis: GainAxis,
    pub y_axis: GainAxis,
    /// Upper end of the tolerable speed-drop search.
    pub dv_max: u32,
    pub n_min: usize,
    pub n_max: usize,
    pub param: HvParamKind,
    pub values: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kind: SweepKind::Gains,
            modes: vec![ControllerMode::Nominal, ControllerMode::CbfCav],
            x_axis: GainAxis::new(-1.0, 2.0, 7),
            y_axis: GainAxis::new(-1.0, 3.0, 9),
            dv_max: 20,
            n_min: 1,
            n_max: 10,
            param: HvParamKind::A,
            values: vec![0.16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub description: String,
    pub mode: ControllerMode,
    pub platoon: PlatoonSpec,
    /// Drivers in the simulated plant.
    pub hv: HvParams,
    /// Driver model used inside the safety filters; the plant drivers when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hv_model: Option<HvParams>,
    pub range_policy: RangePolicy,
    pub gains: GainSpec,
    pub cbf: CbfSpec,
    pub limits: ActuationLimits,
    /// Constant model error added to every HV acceleration.
    pub hv_accel_error: f64,
    pub scenario: ScenarioSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "default".into(),
            description: String::new(),
            mode: ControllerMode::Nominal,
            platoon: PlatoonSpec::default(),
            hv: HvParams::CALIBRATED,
            hv_model: None,
            range_policy: RangePolicy::CAV_DEFAULT,
            gains: GainSpec::default(),
            cbf: CbfSpec::default(),
            limits: ActuationLimits::default(),
            hv_accel_error: 0.0,
            scenario: ScenarioSpec::default(),
            chart: None,
            sweep: None,
        }
    }
}

fn parse_hv_keys<T: Copy>(
    map: &BTreeMap<String, T>,
    path: &str,
    max: usize,
) -> Result<BTreeMap<usize, T>> {
    map.iter()
        .map(|(k, &v)| match k.trim().parse::<usize>() {
            Ok(i) if (1..=max).contains(&i) => Ok((i, v)),
            _ => Err(cfg_err(
                format!("{path}.{k}"),
                format!("HV index must be an integer in 1..={max}"),
            )),
        })
        .collect()
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            cfg_err(if path == "." { String::new() } else { path }, inner.message().trim().to_string())
        })
    }

    /// Reads a file, or a bundled experiment when `source` names one and no
    /// such file exists.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| cfg_err("", format!("{source}: {e}")))?;
            return Self::from_toml(&text);
        }
        match BUNDLED.iter().find(|(name, _)| *name == source) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(cfg_err(
                "",
                format!("{source} is neither a readable file nor a bundled experiment"),
            )),
        }
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| cfg_err("", format!("no bundled experiment named {name}")))?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment spec serializes")
    }

    /// Builds the experiment and checks every parameter, reporting the
    /// offending field.
    pub fn experiment(&self) -> Result<Experiment> {
        let n = self.platoon.n_hv;
        if n == 0 {
            return Err(cfg_err("platoon.n_hv", "at least one HV is required"));
        }
        let head_hv = parse_hv_keys(&self.gains.beta_head_hv, "gains.beta_head_hv", n)?;
        let tail_hv = parse_hv_keys(&self.gains.beta_tail_hv, "gains.beta_tail_hv", n.saturating_sub(1))?;
        let barriers = parse_hv_keys(&self.cbf.hv, "cbf.hv", n)?;
        for i in barriers.keys() {
            if !head_hv.contains_key(i) {
                return Err(cfg_err(
                    format!("cbf.hv.{i}"),
                    "an HV barrier needs the HV connected to the head CAV (add it to gains.beta_head_hv)",
                ));
            }
        }
        let field = |path: &str, r: Result<()>| r.map_err(|e| cfg_err(path, e.to_string()));
        field("hv", self.hv.validate())?;
        if let Some(m) = &self.hv_model {
            field("hv_model", m.validate())?;
        }
        field("range_policy", self.range_policy.validate())?;
        field("limits", self.limits.validate())?;
        if !(self.platoon.vehicle_length >= 0.0 && self.platoon.platoon_base_length.is_finite()) {
            return Err(cfg_err("platoon", "vehicle lengths must be nonnegative"));
        }

        let platoon = PlatoonConfig {
            n_hv: n,
            head_connected: head_hv.keys().copied().collect::<BTreeSet<_>>(),
            tail_connected: tail_hv.keys().copied().collect::<BTreeSet<_>>(),
            hv_lengths: vec![self.platoon.vehicle_length; n],
            tail_cav_length: self.platoon.vehicle_length,
            platoon_base_length: self.platoon.platoon_base_length,
        };
        let g = &self.gains;
        let gains = CavGains {
            alpha_head: g.alpha_head,
            beta_head_d: g.beta_head_d,
            beta_head_hv: head_hv,
            beta_head_tail: g.beta_head_tail,
            alpha_tail: g.alpha_tail,
            beta_tail_n: g.beta_tail_n,
            beta_tail_hv: tail_hv,
            beta_tail_head: g.beta_tail_head,
        };
        let c = &self.cbf;
        let cbf = CbfParams {
            headways: SafetyHeadways {
                tau_head: c.tau_head,
                tau_tail: c.tau_tail,
                tau_hv: vec![c.tau_hv; n],
                tau_platoon: c.tau_platoon,
            },
            gamma_head: c.gamma_head,
            gamma_tail: c.gamma_tail,
            gamma_platoon: c.gamma_platoon,
            hv: barriers,
        };
        field("cbf", cbf.validate(&platoon))?;

        let s = &self.scenario;
        if s.kind != ScenarioName::HeadHvDecel && !(1..=n).contains(&s.hv) {
            return Err(cfg_err("scenario.hv", format!("HV index must be in 1..={n}")));
        }
        let kind = match s.kind {
            ScenarioName::HeadHvDecel => ScenarioKind::HeadHvDecel { accel: s.accel, dv: s.dv },
            ScenarioName::MiddleHvDecel => ScenarioKind::MiddleHvDecel { hv: s.hv, accel: s.accel, dv: s.dv },
            ScenarioName::MiddleHvAccel => ScenarioKind::MiddleHvAccel { hv: s.hv, accel: s.accel, dv: s.dv },
        };
        let scenario = Scenario {
            kind,
            t0: s.t0,
            horizon: s.horizon,
            dt: s.dt,
            v_star: s.v_star,
        };
        field("scenario", scenario.validate(n))?;

        let exp = Experiment {
            platoon,
            plant_hv: vec![self.hv; n],
            design_hv: vec![self.hv_model.unwrap_or(self.hv); n],
            range_policy: self.range_policy,
            gains,
            cbf,
            limits: self.limits,
            disturbance: Disturbance {
                d: vec![self.hv_accel_error; n],
            },
            scenario,
            mode: self.mode,
            initial: None,
        };
        field("", exp.validate())?;
        exp.initial_state().map_err(|e| cfg_err("scenario.v_star", e.to_string()))?;
        Ok(exp)
    }

    pub fn chart_spec(&self) -> Result<ChartSpec> {
        let c = self.chart.clone().unwrap_or_default();
        for (path, ax) in [("chart.x_axis", c.x_axis), ("chart.y_axis", c.y_axis)] {
            ax.validate().map_err(|e| cfg_err(path, e.to_string()))?;
        }
        if c.kind == ChartKind::Safety {
            parse_knob(&c.x_gain).ok_or_else(|| cfg_err("chart.x_gain", format!("unknown gain {}", c.x_gain)))?;
            parse_knob(&c.y_gain).ok_or_else(|| cfg_err("chart.y_gain", format!("unknown gain {}", c.y_gain)))?;
            if c.x_gain == c.y_gain {
                return Err(cfg_err("chart.y_gain", "must differ from chart.x_gain"));
            }
        }
        Ok(c)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let s = self
            .sweep
            .clone()
            .ok_or_else(|| cfg_err("sweep", "the experiment has no [sweep] table"))?;
        for (path, ax) in [("sweep.x_axis", s.x_axis), ("sweep.y_axis", s.y_axis)] {
            ax.validate().map_err(|e| cfg_err(path, e.to_string()))?;
        }
        match s.kind {
            SweepKind::Gains | SweepKind::HvCount if s.modes.is_empty() => {
                Err(cfg_err("sweep.modes", "at least one mode is required"))
            }
            SweepKind::HvCount if !(1 <= s.n_min && s.n_min <= s.n_max) => {
                Err(cfg_err("sweep.n_min", "need 1 <= n_min <= n_max"))
            }
            SweepKind::HvParams if s.values.is_empty() => {
                Err(cfg_err("sweep.values", "at least one value is required"))
            }
            _ => Ok(s),
        }
    }
}

/// Gain names accepted by safety charts: the six scalar gains or
/// `beta_head_<i>` / `beta_tail_<i>`.
pub fn parse_knob(name: &str) -> Option<GainKnob> {
    Some(match name {
        "alpha_head" => GainKnob::AlphaHead,
        "beta_head_d" => GainKnob::BetaHeadD,
        "beta_head_tail" => GainKnob::BetaHeadTail,
        "alpha_tail" => GainKnob::AlphaTail,
        "beta_tail_n" => GainKnob::BetaTailN,
        "beta_tail_head" => GainKnob::BetaTailHead,
        _ => {
            if let Some(i) = name.strip_prefix("beta_head_") {
                GainKnob::BetaHeadHv(i.parse().ok()?)
            } else if let Some(i) = name.strip_prefix("beta_tail_") {
                GainKnob::BetaTailHv(i.parse().ok()?)
            } else {
                return None;
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_standard_setup() {
        let spec = ExperimentSpec::from_toml("").unwrap();
        let exp = spec.experiment().unwrap();
        let mut std = Experiment::standard(ControllerMode::Nominal);
        std.gains = CavGains::acc_only();
        assert_eq!(exp, std);
    }

    #[test]
    fn round_trip_through_toml() {
        for (name, _) in BUNDLED {
            let spec = ExperimentSpec::bundled(name).unwrap();
            let again = ExperimentSpec::from_toml(&spec.to_toml()).unwrap();
            assert_eq!(spec, again, "{name}");
            spec.experiment().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = ExperimentSpec::from_toml("[gains]\nalpha_head = \"x\"").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "gains.alpha_head"), "{e}");
        let e = ExperimentSpec::from_toml("[cbf]\nbogus = 1").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path.starts_with("cbf")), "{e}");
        let spec = ExperimentSpec::from_toml("[gains.beta_head_hv]\n7 = 0.1").unwrap();
        let e = spec.experiment().unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "gains.beta_head_hv.7"), "{e}");
        let spec = ExperimentSpec::from_toml("[scenario]\nkind = \"middle_hv_accel\"\nhv = 9").unwrap();
        let e = spec.experiment().unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "scenario.hv"), "{e}");
    }

    #[test]
    fn knob_names() {
        assert_eq!(parse_knob("beta_head_tail"), Some(GainKnob::BetaHeadTail));
        assert_eq!(parse_knob("beta_tail_3"), Some(GainKnob::BetaTailHv(3)));
        assert_eq!(parse_knob("gamma"), None);
        for k in [GainKnob::AlphaTail, GainKnob::BetaHeadHv(2), GainKnob::BetaTailN] {
            assert_eq!(parse_knob(&k.name()), Some(k));
        }
    }
}
