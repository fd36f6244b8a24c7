//! Leader braking run under each controller mode.
//!
//! `cargo run --example simulate`

use cav_platoon::sim::{run_experiment, ControllerMode, Experiment, SafetyKey};

fn main() -> Result<(), cav_platoon::error::Error> {
    for mode in ControllerMode::ALL {
        let mut exp = Experiment::standard(mode);
        if mode == ControllerMode::RobustCbfCavHv || mode == ControllerMode::CbfCavHv {
            // these modes only differ from cbf_cav once an HV barrier exists
            continue;
        }
        if mode == ControllerMode::CbfFull {
            exp.platoon.platoon_base_length = 100.0;
        }
        let (traj, m) = run_experiment(&exp)?;
        println!(
            "{:<10} I = {:.3}  I_bar = {:.3}  min h_H = {:7.3}  min h_T = {:7.3}  min u_T = {:6.2}  collision = {}",
            mode.name(),
            m.i.unwrap_or(f64::NAN),
            m.i_bar.unwrap_or(f64::NAN),
            m.h(SafetyKey::Head),
            m.h(SafetyKey::Tail),
            m.min_u_tail_applied,
            m.collision,
        );
        let last = traj.last();
        println!("           final speeds: {:?}", last.x.speeds().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
