//! The safety filters on a single state: a head CAV closing fast on a
//! braking leader, with one protected HV.
//!
//! `cargo run --example cbf_filter`

use cav_platoon::cbf::{qp_head, qp_joint, ub_head, ub_tail, CbfParams, HvBarrier};
use cav_platoon::platoon::{assemble_equilibrium, nominal_head, nominal_tail, CavGains, HvParams, PlatoonConfig, RangePolicy};

fn main() -> Result<(), cav_platoon::error::Error> {
    let cfg = PlatoonConfig {
        platoon_base_length: 60.0,
        ..PlatoonConfig::new(2).with_head_connected([1])
    };
    let hv = vec![HvParams::CALIBRATED; 2];
    let rp = RangePolicy::CAV_DEFAULT;
    let mut g = CavGains::acc_only().with_cooperation(0.5, 1.2);
    g.beta_head_hv.insert(1, 0.1);
    let mut p = CbfParams::standard(2);
    p.hv.insert(1, HvBarrier { gamma: 5.0, eta: 0.5, penalty: 100.0, d_bar: 0.0 });

    let mut x = assemble_equilibrium(&cfg, &hv, &rp, 20.0)?;
    x.set_head(17.0, 20.0);
    x.set_hv(1, 22.0, 24.0);
    let v_d = 12.0;

    let kh = nominal_head(&x, v_d, &g, &rp, &cfg);
    let kt = nominal_tail(&x, &g, &rp, &cfg);
    println!("nominal  u_H = {kh:7.3}  u_T = {kt:7.3}");
    println!("bounds   ub_H = {:7.3}  ub_T = {:7.3}", ub_head(&x, v_d, &p), ub_tail(&x, &p));

    let head = qp_head(&x, v_d, kh, &p, &hv, false);
    println!("qp_head  u_H = {:7.3}  slacks = {:?}", head.u_head, head.slacks);

    let joint = qp_joint(&x, v_d, kh, kt, &p, &cfg, &hv, false)?;
    println!("qp_joint u_H = {:7.3}  u_T = {:7.3}  active = {:?}", joint.u_head, joint.u_tail, joint.active);
    Ok(())
}
