//! Loads a bundled experiment, edits it, and prints the effective TOML.
//!
//! `cargo run --example config -- fig6`

use cav_platoon::config::{ExperimentSpec, BUNDLED};
use cav_platoon::sim::run_experiment;

fn main() -> Result<(), cav_platoon::error::Error> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "fig4_cbf".into());
    println!("bundled: {}", BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "));

    let mut spec = ExperimentSpec::load(&name)?;
    spec.scenario.horizon = 30.0;
    print!("{}", spec.to_toml());

    let exp = spec.experiment()?;
    let (_, m) = run_experiment(&exp)?;
    println!("# I = {:?}, min gap = {:.2}, collision = {}", m.i, m.min_gap, m.collision);

    match ExperimentSpec::from_toml("[scenario]\ndt = -1\n").and_then(|s| s.experiment()) {
        Ok(_) => println!("# unexpectedly accepted"),
        Err(e) => println!("# rejected: {e}"),
    }
    Ok(())
}
