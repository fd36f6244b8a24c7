//! Gain certificates for the nominal CAV controllers.
//!
//! `cargo run --example safety_chart`

use cav_platoon::platoon::{CavGains, RangePolicy};
use cav_platoon::safety::{head_alpha_bound, safety_chart, theorem2_head_safe, GainKnob, SafetyHeadways};
use cav_platoon::stability::GainAxis;

fn main() -> Result<(), cav_platoon::error::Error> {
    let rp = RangePolicy::CAV_DEFAULT;
    let tau = SafetyHeadways::standard(4);

    let g = CavGains::acc_only().with_cooperation(0.5, 1.2);
    println!(
        "ACC + cooperation: alpha_H = {} needs >= {:.2}, certified = {}",
        g.alpha_head,
        head_alpha_bound(&g, tau.tau_head, &rp),
        theorem2_head_safe(&g, tau.tau_head, &rp)
    );

    let mut tuned = CavGains::acc_only();
    tuned.alpha_head = 1.0;
    tuned.alpha_tail = 1.0;
    tuned.beta_head_d = 1.0 / tau.tau_head;
    tuned.beta_tail_n = 1.0 / tau.tau_tail;
    let chart = safety_chart(
        GainKnob::BetaHeadTail,
        GainAxis::new(-0.2, 0.2, 41),
        GainKnob::BetaTailHead,
        GainAxis::new(-0.2, 0.2, 41),
        &tuned,
        &tau,
        &rp,
    )?;
    let both: Vec<_> = chart.cells.iter().filter(|c| c.head_safe && c.tail_safe).collect();
    let span = |f: fn(&&cav_platoon::safety::SafetyCell) -> f64| {
        both.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    println!("tuned feedforward: {} of {} cells certified for both CAVs", both.len(), chart.cells.len());
    println!("  beta_H,T in {:?}, beta_T,H in {:?}", span(|c| c.x), span(|c| c.y));
    Ok(())
}
