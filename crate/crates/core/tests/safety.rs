mod common;

use cav_platoon::platoon::{CavGains, PlatoonConfig, PlatoonState, RangePolicy};
use cav_platoon::safety::{
    head_alpha_bound, head_barrier_rate, safety_chart, tail_alpha_bound, tail_barrier_rate,
    theorem2_head_safe, theorem3_tail_safe, GainKnob, SafetyHeadways,
};
use cav_platoon::stability::GainAxis;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use common::{random_box_state, random_cav_gains as random_gains};

const TAU: f64 = 0.8;

#[test]
fn certified_head_gains_keep_boundary_invariant() {
    let rp = RangePolicy::CAV_DEFAULT;
    let cfg = PlatoonConfig::new(3).with_head_connected([1, 2]).with_tail_connected([3]);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    for _ in 0..200 {
        let mut g = random_gains(&mut rng, &cfg);
        g.alpha_head = head_alpha_bound(&g, TAU, &rp) + rng.gen_range(0.0..2.0);
        assert!(theorem2_head_safe(&g, TAU, &rp));
        let mut x = random_box_state(&mut rng, 3, &rp);
        // boundary h_H = 0 with the gap still in the policy's linear range
        let v_h = rng.gen_range(rp.s_st / TAU..rp.v_max);
        x.set_head(TAU * v_h, v_h);
        let v_d = rng.gen_range(0.0..rp.v_max);
        let rate = head_barrier_rate(&x, v_d, &g, &rp, &cfg, TAU);
        assert!(rate >= -1e-9, "dh_H/dt = {rate} at v_H = {v_h}");
        checked += 1;
    }
    assert_eq!(checked, 200);
}

#[test]
fn certified_tail_gains_keep_boundary_invariant() {
    let rp = RangePolicy::CAV_DEFAULT;
    let cfg = PlatoonConfig::new(3).with_head_connected([1]).with_tail_connected([1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let mut g = random_gains(&mut rng, &cfg);
        g.alpha_tail = tail_alpha_bound(&g, TAU, &rp) + rng.gen_range(0.0..2.0);
        assert!(theorem3_tail_safe(&g, TAU, &rp));
        let mut x = random_box_state(&mut rng, 3, &rp);
        let v_t = rng.gen_range(rp.s_st / TAU..rp.v_max);
        x.set_tail(TAU * v_t, v_t);
        let rate = tail_barrier_rate(&x, &g, &rp, &cfg, TAU);
        assert!(rate >= -1e-9, "dh_T/dt = {rate} at v_T = {v_t}");
    }
}

#[test]
fn uncertified_acc_gains_admit_a_counterexample() {
    // ACC gains fail the certificate; a slow leader at the boundary drives h_H negative
    let rp = RangePolicy::CAV_DEFAULT;
    let cfg = PlatoonConfig::new(1);
    let g = CavGains::acc_only();
    assert!(!theorem2_head_safe(&g, TAU, &rp));
    let mut x = PlatoonState::zeros(1);
    x.set_head(TAU * 20.0, 20.0);
    x.set_hv(1, 24.1, 20.0);
    x.set_tail(21.0, 20.0);
    assert!(head_barrier_rate(&x, 0.0, &g, &rp, &cfg, TAU) < 0.0);
}

#[test]
fn acc_gains_need_large_alpha() {
    let rp = RangePolicy::CAV_DEFAULT;
    let g = CavGains::acc_only().with_cooperation(0.5, 0.0);
    let expect = ((1.0f64 - TAU * 0.6).abs() + TAU * 0.5) * 40.0 / 2.0;
    assert!((head_alpha_bound(&g, TAU, &rp) - expect).abs() < 1e-12);
    assert!((expect - 18.4).abs() < 1e-12);
}

#[test]
fn tuned_feedforward_chart_certifies_a_small_box() {
    // alpha = 1, beta_d = beta_N = 1/tau: the bound reduces to tau |beta| v_max / s_st <= 1,
    // so only |beta_H,T|, |beta_T,H| <= s_st / (tau v_max) = 0.0625 are certified
    let rp = RangePolicy::CAV_DEFAULT;
    let mut g = CavGains::acc_only();
    g.alpha_head = 1.0;
    g.alpha_tail = 1.0;
    g.beta_head_d = 1.25;
    g.beta_tail_n = 1.25;
    let tau = SafetyHeadways::standard(4);
    let chart = safety_chart(
        GainKnob::BetaHeadTail,
        GainAxis::new(-1.0, 1.0, 81),
        GainKnob::BetaTailHead,
        GainAxis::new(-1.0, 1.0, 81),
        &g,
        &tau,
        &rp,
    )
    .unwrap();
    let limit = rp.s_st / (TAU * rp.v_max);
    for c in &chart.cells {
        assert_eq!(c.head_safe, c.x.abs() <= limit + 1e-12, "x = {}", c.x);
        assert_eq!(c.tail_safe, c.y.abs() <= limit + 1e-12, "y = {}", c.y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn certificate_is_monotone_in_alpha(bd in -1.0f64..3.0, bt in -1.0f64..2.0, a in 0.0f64..40.0, extra in 0.0f64..10.0) {
        let rp = RangePolicy::CAV_DEFAULT;
        let mut g = CavGains::acc_only().with_cooperation(bt, 0.0);
        g.beta_head_d = bd;
        g.alpha_head = a;
        let safe = theorem2_head_safe(&g, TAU, &rp);
        g.alpha_head = a + extra;
        prop_assert!(!safe || theorem2_head_safe(&g, TAU, &rp));
    }

    #[test]
    fn steep_policy_is_never_certified(s_go in 2.5f64..33.0) {
        // kappa > 1/tau
        let rp = RangePolicy::new(2.0, s_go, 40.0);
        let mut g = CavGains::acc_only();
        g.alpha_head = 1e6;
        prop_assert!(!theorem2_head_safe(&g, TAU, &rp));
    }
}
