//! Command-line front end: `simulate`, `chart`, `sweep` and `validate`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_knob, ChartKind, ExperimentSpec, SweepKind};
use crate::error::{Error, Result};
use crate::safety::safety_chart;
use crate::sim::export::{write_metrics_json, write_trajectory_csv};
use crate::sim::run_experiment;
use crate::sim::sweep::{sweep_gains, sweep_hv_count, sweep_hv_params, write_hv_count_csv};
use crate::stability::stability_chart;
use crate::validate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cav-platoon", version, about = "Mixed-platoon stability and safety experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment file, or the name of a bundled experiment.
    #[arg(long, value_name = "PATH")]
    pub config: String,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for parallel cells.
    #[arg(long, value_name = "K")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write the trajectory and metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the integration step.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Classify a grid of gains for stability or safety.
    Chart {
        #[command(flatten)]
        common: Common,
        /// Override the chart kind given in the file.
        #[arg(long, value_parser = ["stability", "safety"])]
        kind: Option<String>,
    },
    /// Run the sweep described in the experiment file.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run the oracle suite.
    Validate {
        /// Seed for the random instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write `validation.json` here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "K")]
        workers: Option<usize>,
    },
}

fn set_workers(k: Option<usize>) {
    if let Some(k) = k {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
    }
}

fn load(common: &Common, dt: Option<f64>) -> Result<ExperimentSpec> {
    set_workers(common.workers);
    let mut spec = ExperimentSpec::load(&common.config)?;
    if let Some(dt) = dt {
        spec.scenario.dt = dt;
    }
    Ok(spec)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn prepare_out(out: &Path, spec: &ExperimentSpec) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("effective_config.toml"), spec.to_toml())?;
    Ok(())
}

fn simulate(common: &Common, dt: Option<f64>) -> std::result::Result<(), (i32, Error)> {
    let spec = load(common, dt).map_err(|e| (EXIT_CONFIG, e))?;
    let exp = spec.experiment().map_err(|e| (EXIT_CONFIG, e))?;
    let (traj, metrics) = run_experiment(&exp).map_err(|e| (EXIT_NUMERICAL, e))?;
    let io = |e: Error| (EXIT_NUMERICAL, e);
    prepare_out(&common.out, &spec).map_err(io)?;
    write_trajectory_csv(&traj, create(&common.out, "trajectory.csv").map_err(io)?).map_err(io)?;
    write_metrics_json(&metrics, create(&common.out, "metrics.json").map_err(io)?).map_err(io)?;
    for ev in &traj.events {
        eprintln!("note: {ev}");
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: I = {}, I_bar = {}, min gap = {:.3} m, collision = {}",
        spec.name,
        fmt(metrics.i),
        fmt(metrics.i_bar),
        metrics.min_gap,
        metrics.collision
    );
    for (k, v) in &metrics.min_h {
        println!("  min {k} = {v:.4}");
    }
    Ok(())
}

fn chart(common: &Common, kind: Option<&str>) -> std::result::Result<(), (i32, Error)> {
    let cfg_e = |e: Error| (EXIT_CONFIG, e);
    let mut spec = load(common, None).map_err(cfg_e)?;
    let mut c = spec.chart_spec().map_err(cfg_e)?;
    if let Some(k) = kind {
        c.kind = if k == "safety" { ChartKind::Safety } else { ChartKind::Stability };
    }
    spec.chart = Some(c.clone());
    let c = spec.chart_spec().map_err(cfg_e)?;
    let exp = spec.experiment().map_err(cfg_e)?;
    let num = |e: Error| (EXIT_NUMERICAL, e);
    match c.kind {
        ChartKind::Stability => {
            let chart = stability_chart(
                c.x_axis,
                c.y_axis,
                &exp.gains,
                &exp.platoon,
                &exp.plant_hv,
                &exp.range_policy,
                exp.scenario.v_star,
            )
            .map_err(num)?;
            prepare_out(&common.out, &spec).map_err(num)?;
            chart
                .write_csv(create(&common.out, "stability_chart.csv").map_err(num)?)
                .map_err(num)?;
            println!(
                "{}: {} of {} cells string stable",
                spec.name,
                chart.string_stable_count(),
                chart.cells.len()
            );
        }
        ChartKind::Safety => {
            let xk = parse_knob(&c.x_gain).expect("checked by chart_spec");
            let yk = parse_knob(&c.y_gain).expect("checked by chart_spec");
            let chart = safety_chart(xk, c.x_axis, yk, c.y_axis, &exp.gains, &exp.cbf.headways, &exp.range_policy)
                .map_err(num)?;
            prepare_out(&common.out, &spec).map_err(num)?;
            chart
                .write_csv(create(&common.out, "safety_chart.csv").map_err(num)?)
                .map_err(num)?;
            let both = chart.cells.iter().filter(|c| c.head_safe && c.tail_safe).count();
            println!("{}: {} of {} cells certified safe for both CAVs", spec.name, both, chart.cells.len());
        }
    }
    Ok(())
}

fn sweep(common: &Common, dt: Option<f64>) -> std::result::Result<(), (i32, Error)> {
    let cfg_e = |e: Error| (EXIT_CONFIG, e);
    let spec = load(common, dt).map_err(cfg_e)?;
    let s = spec.sweep_spec().map_err(cfg_e)?;
    let exp = spec.experiment().map_err(cfg_e)?;
    let num = |e: Error| (EXIT_NUMERICAL, e);
    match s.kind {
        SweepKind::Gains => {
            let res = sweep_gains(&exp, s.x_axis, s.y_axis, &s.modes, s.dv_max).map_err(num)?;
            prepare_out(&common.out, &spec).map_err(num)?;
            res.write_csv(create(&common.out, "gain_sweep.csv").map_err(num)?).map_err(num)?;
            fs::write(common.out.join("sweep_events.txt"), res.events.join("\n")).map_err(|e| num(e.into()))?;
            println!("{}: {} cells, {} events", spec.name, res.cells.len(), res.events.len());
        }
        SweepKind::HvCount => {
            let rows = sweep_hv_count(&exp, s.n_min..=s.n_max, &s.modes).map_err(num)?;
            prepare_out(&common.out, &spec).map_err(num)?;
            write_hv_count_csv(&rows, create(&common.out, "hv_count.csv").map_err(num)?).map_err(num)?;
            for r in &rows {
                println!(
                    "N = {:2} {:>18}: I = {}, min h = {:.3}",
                    r.n_hv,
                    r.mode.name(),
                    r.metrics.i.map_or("n/a".into(), |x| format!("{x:.4}")),
                    r.min_h()
                );
            }
        }
        SweepKind::HvParams => {
            let fam = sweep_hv_params(
                s.param,
                &s.values,
                s.x_axis,
                s.y_axis,
                &exp.gains,
                &exp.platoon,
                &exp.plant_hv,
                &exp.range_policy,
                exp.scenario.v_star,
            )
            .map_err(num)?;
            prepare_out(&common.out, &spec).map_err(num)?;
            fam.write_csv(create(&common.out, "hv_params.csv").map_err(num)?).map_err(num)?;
            for (v, c) in fam.values.iter().zip(&fam.charts) {
                println!("{} = {v}: {} string-stable cells", s.param.name(), c.string_stable_count());
            }
            println!("overlap: {} cells", fam.overlap_count());
        }
    }
    Ok(())
}

fn run_validate(seed: u64, out: Option<&Path>, workers: Option<usize>) -> std::result::Result<(), (i32, Error)> {
    set_workers(workers);
    let report = validate::run_all(seed);
    for c in &report.checks {
        println!(
            "{} {:<28} cases = {:4}  worst = {:.3e}  tol = {:.0e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.worst,
            c.tolerance,
            c.detail
        );
    }
    if let Some(dir) = out {
        let num = |e: Error| (EXIT_NUMERICAL, e);
        fs::create_dir_all(dir).map_err(|e| num(e.into()))?;
        let f = create(dir, "validation.json").map_err(num)?;
        serde_json::to_writer_pretty(f, &report).map_err(|e| num(Error::Io(e.to_string())))?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err((EXIT_NUMERICAL, Error::Singular("oracle suite reported failures".into())))
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate { common, dt } => simulate(common, *dt),
        Command::Chart { common, kind } => chart(common, kind.as_deref()),
        Command::Sweep { common, dt } => sweep(common, *dt),
        Command::Validate { seed, out, workers } => run_validate(*seed, out.as_deref(), *workers),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err((code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}

pub fn main() -> i32 {
    run(Cli::parse())
}
