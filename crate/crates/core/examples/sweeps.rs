//! The three parameter studies at reduced resolution: cooperation gains with
//! the largest tolerable speed drop, number of HVs, and HV driver gain `a`.
//!
//! `cargo run --release --example sweeps`

use cav_platoon::platoon::{CavGains, HvParams, PlatoonConfig, RangePolicy};
use cav_platoon::sim::sweep::{sweep_gains, sweep_hv_count, sweep_hv_params, HvParamKind};
use cav_platoon::sim::{ControllerMode, Experiment, Scenario};
use cav_platoon::stability::GainAxis;

fn main() -> Result<(), cav_platoon::error::Error> {
    let mut base = Experiment::standard(ControllerMode::Nominal);
    base.scenario = Scenario::head_decel(5.0, 12.0);

    let modes = [ControllerMode::Nominal, ControllerMode::CbfCav];
    let grid = sweep_gains(&base, GainAxis::new(0.0, 1.0, 3), GainAxis::new(0.0, 2.0, 3), &modes, 20)?;
    println!("gain grid ({} events logged)", grid.events.len());
    for c in &grid.cells {
        println!(
            "  {:<8} beta_H,T = {:.1} beta_T,H = {:.1}: I = {:.3}, max safe dv head/tail = {}/{} m/s",
            c.mode.name(),
            c.beta_head_tail,
            c.beta_tail_head,
            c.metrics.as_ref().and_then(|m| m.i).unwrap_or(f64::NAN),
            c.max_safe_dv_head,
            c.max_safe_dv_tail
        );
    }

    base.scenario = Scenario::head_decel(5.0, 20.0);
    println!("number of HVs");
    for r in sweep_hv_count(&base, 1..=6, &modes)? {
        println!("  N = {} {:<8} I = {:.3}, min h = {:.2}", r.n_hv, r.mode.name(), r.metrics.i.unwrap_or(f64::NAN), r.min_h());
    }

    let fam = sweep_hv_params(
        HvParamKind::A,
        &[0.3, 0.5, 0.7],
        GainAxis::new(-1.0, 2.0, 16),
        GainAxis::new(-1.0, 3.0, 21),
        &CavGains::acc_only(),
        &PlatoonConfig::new(4),
        &[HvParams::CALIBRATED; 4],
        &RangePolicy::CAV_DEFAULT,
        20.0,
    )?;
    for (v, c) in fam.values.iter().zip(&fam.charts) {
        println!("  a = {v}: {} string-stable cells", c.string_stable_count());
    }
    println!("  stable for every a: {} cells", fam.overlap_count());
    Ok(())
}
