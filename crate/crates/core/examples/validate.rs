//! Runs the oracle suite with a seed from the command line.
//!
//! `cargo run --release --example validate -- 42`

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = cav_platoon::validate::run_all(seed);
    for c in &report.checks {
        println!("{} {:<28} worst {:.2e} (tol {:.0e})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.worst, c.tolerance);
    }
    std::process::exit(if report.all_passed() { 0 } else { 1 });
}
