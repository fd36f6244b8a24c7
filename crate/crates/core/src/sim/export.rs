//! Trajectory CSV and metrics JSON writers.

use std::io::Write;

use super::{Metrics, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::stability::chart::csv_err;

/// Column names of the trajectory CSV for `n` HVs.
pub fn trajectory_columns(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = vec!["t".into(), "v_d".into(), "s_H".into(), "v_H".into()];
    cols.extend((1..=n).map(|i| format!("s_{i}")));
    cols.extend((1..=n).map(|i| format!("v_{i}")));
    cols.extend(["s_T", "v_T", "u_H_applied", "u_T_applied", "h_H", "h_T"].map(String::from));
    cols.extend((1..=n).map(|i| format!("h_{i}")));
    cols.push("h_p".into());
    cols.extend((1..=n).map(|i| format!("sigma_{i}")));
    cols
}

pub fn write_trajectory_csv<W: Write>(traj: &TrajectoryRecord, w: W) -> Result<()> {
    let n = traj.n_hv;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_columns(n)).map_err(csv_err)?;
    for s in &traj.samples {
        let x = &s.x;
        let mut row = vec![s.t, s.v_d, x.s_head(), x.v_head()];
        row.extend((1..=n).map(|i| x.s_hv(i)));
        row.extend((1..=n).map(|i| x.v_hv(i)));
        row.extend([
            x.s_tail(),
            x.v_tail(),
            s.u_head_applied,
            s.u_tail_applied,
            s.safety.h_head,
            s.safety.h_tail,
        ]);
        row.extend(s.safety.h_hv.iter().copied());
        row.push(s.safety.h_platoon);
        row.extend((1..=n).map(|i| s.action.slacks.get(&i).copied().unwrap_or(0.0)));
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics_json<W: Write>(metrics: &Metrics, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, metrics).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_experiment, ControllerMode, Experiment};

    #[test]
    fn csv_shape_matches_columns() {
        let mut exp = Experiment::standard(ControllerMode::CbfCav);
        exp.scenario = exp.scenario.with_dv(2.0);
        exp.scenario.horizon = 3.0;
        let (traj, m) = run_experiment(&exp).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), trajectory_columns(4).len());
        assert!(header.starts_with("t,v_d,s_H,v_H,s_1,s_2,s_3,s_4,v_1"));
        assert!(header.ends_with("h_p,sigma_1,sigma_2,sigma_3,sigma_4"));
        assert_eq!(lines.count(), 301);

        let mut buf = Vec::new();
        write_metrics_json(&m, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert!(v["I"].as_f64().unwrap() > 0.0);
        assert!(v["min_h"]["h_H"].is_number());
        assert_eq!(v["collision"], false);
    }
}
