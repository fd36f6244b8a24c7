//! Head-to-tail string stability over the two cooperation gains, printed as
//! an ASCII map (`#` string stable, `.` plant stable only, ` ` unstable).
//!
//! `cargo run --release --example stability_chart -- [a] [b]` overrides the
//! HV driver gains, which default to a responsive driver.

use cav_platoon::platoon::{CavGains, HvParams, PlatoonConfig, RangePolicy};
use cav_platoon::stability::{stability_chart, string_stability, transfer_function, GainAxis};

fn main() -> Result<(), cav_platoon::error::Error> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let hv = HvParams {
        a: args.first().copied().unwrap_or(0.6),
        b: args.get(1).copied().unwrap_or(0.9),
        ..HvParams::CALIBRATED
    };
    let cfg = PlatoonConfig::new(4);
    let fleet = vec![hv; 4];
    let rp = RangePolicy::CAV_DEFAULT;
    let base = CavGains::acc_only();

    let tf = transfer_function(&cfg, &fleet, &base, &rp, 20.0)?;
    let r = string_stability(&tf);
    println!("ACC only: peak |G| = {:.3} at w = {:.3} rad/s", r.peak_gain, r.peak_omega);

    let (nx, ny) = (31, 21);
    let chart = stability_chart(GainAxis::new(-1.0, 2.0, nx), GainAxis::new(-1.0, 3.0, ny), &base, &cfg, &fleet, &rp, 20.0)?;
    println!("beta_T,H (rows, top = 3) vs beta_H,T (columns, -1 .. 2)");
    for row in (0..ny).rev() {
        let line: String = (0..nx)
            .map(|col| {
                let c = chart.cell(col, row);
                match (c.plant_stable, c.string_stable) {
                    (_, true) => '#',
                    (true, false) => '.',
                    _ => ' ',
                }
            })
            .collect();
        println!("{:5.2} |{line}|", chart.cell(0, row).beta_tail_head);
    }
    println!("{} of {} cells string stable", chart.string_stable_count(), chart.cells.len());
    Ok(())
}
