//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use cav_platoon::cbf::{JointBounds, QpProblem, SoftBound};
use cav_platoon::platoon::{
    closed_loop_rhs, nominal_head, nominal_tail, ActuationLimits, CavGains, Disturbance,
    PlatoonConfig, PlatoonState, RangePolicy,
};
use cav_platoon::validate::RandomPlatoon;
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

pub type C = Complex<f64>;

/// Weierstrass / Durand-Kerner iteration on the monic normalization.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<C> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |z: C| monic.iter().rev().fold(C::new(0.0, 0.0), |acc, &c| acc * z + c);
    let radius = 1.0 + monic[..n].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let seed = C::new(0.4, 0.9);
    let mut z: Vec<C> = (0..n).map(|k| seed.powu(k as u32) * radius.min(10.0) * 0.5).collect();
    for _ in 0..5000 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut den = C::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= z[i] - z[j];
                }
            }
            let step = eval(z[i]) / den;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    z
}

/// Largest relative distance between two multisets under greedy pairing.
pub fn spectral_distance(a: &[C], b: &[C]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d / x.norm().max(1.0));
    }
    worst
}

/// Solves `M z = r` by Gaussian elimination with partial pivoting.
pub fn complex_solve(mut m: Vec<Vec<C>>, mut r: Vec<C>) -> Vec<C> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].norm().total_cmp(&m[b][col].norm())).unwrap();
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let v = r[col];
            r[row] -= f * v;
        }
    }
    let mut z = vec![C::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = r[row];
        for k in row + 1..n {
            acc -= m[row][k] * z[k];
        }
        z[row] = acc / m[row][row];
    }
    z
}

/// Tail-speed response `e_last^T (j w I - A)^{-1} B`.
pub fn state_space_response(a: &DMatrix<f64>, b: &DVector<f64>, omega: f64) -> C {
    let n = a.nrows();
    let m: Vec<Vec<C>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j { C::new(0.0, omega) } else { C::new(0.0, 0.0) };
                    d - a[(i, j)]
                })
                .collect()
        })
        .collect();
    let r: Vec<C> = b.iter().map(|&x| C::new(x, 0.0)).collect();
    complex_solve(m, r)[n - 1]
}

/// Unsaturated closed-loop vector field of a random platoon at constant leader speed.
pub fn vector_field(p: &RandomPlatoon, x: &PlatoonState) -> Vec<f64> {
    let d = Disturbance::zero(p.cfg.n_hv);
    closed_loop_rhs(
        x,
        p.v_star,
        nominal_head(x, p.v_star, &p.gains, &p.rp, &p.cfg),
        nominal_tail(x, &p.gains, &p.rp, &p.cfg),
        &p.hv,
        &d,
        ActuationLimits::new(-1e12, 1e12),
        None,
    )
    .to_vector()
}

/// Central differences with step `h`.
pub fn fd_jacobian(p: &RandomPlatoon, x0: &PlatoonState, h: f64) -> DMatrix<f64> {
    let n = x0.as_slice().len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp.as_mut_slice()[j] += h;
        xm.as_mut_slice()[j] -= h;
        let (fp, fm) = (vector_field(p, &xp), vector_field(p, &xm));
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Optimal value by enumerating every candidate active set.
pub fn qp_by_enumeration(p: &QpProblem) -> Option<(f64, Vec<f64>)> {
    let m = p.weights.len();
    let r = p.rows.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u64..(1u64 << r) {
        let set: Vec<usize> = (0..r).filter(|i| mask >> i & 1 == 1).collect();
        if set.len() > m {
            continue;
        }
        let k = set.len();
        let mut z = p.targets.clone();
        if k > 0 {
            let g = DMatrix::from_fn(k, k, |a, b| {
                (0..m).map(|j| p.rows[set[a]][j] * p.rows[set[b]][j] / p.weights[j]).sum::<f64>()
            });
            let rhs = DVector::from_fn(k, |a, _| {
                p.rhs[set[a]] - (0..m).map(|j| p.rows[set[a]][j] * p.targets[j]).sum::<f64>()
            });
            let Some(mu) = g.clone().full_piv_lu().solve(&rhs) else { continue };
            if (&g * &mu - &rhs).norm() > 1e-9 * (1.0 + rhs.norm()) {
                continue;
            }
            for j in 0..m {
                z[j] += (0..k).map(|a| p.rows[set[a]][j] * mu[a]).sum::<f64>() / p.weights[j];
            }
        }
        let feasible = p
            .rows
            .iter()
            .zip(&p.rhs)
            .all(|(row, c)| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() >= c - 1e-9 * (1.0 + c.abs()));
        if feasible {
            let f = p.objective(&z);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, z));
            }
        }
    }
    best
}

/// Head-filter objective with the slacks at their optimum for a given `u`.
pub fn head_objective(k: f64, rows: &[SoftBound], u: f64) -> f64 {
    (u - k).powi(2)
        + rows
            .iter()
            .map(|r| r.penalty * ((r.lb - u) * r.scale).max(0.0).powi(2))
            .sum::<f64>()
}

/// Head filter optimum by golden-section search on the convex reduced cost.
pub fn head_by_search(k: f64, ub: f64, rows: &[SoftBound]) -> f64 {
    let lo = rows.iter().map(|r| r.lb).fold(k.min(ub), f64::min) - 1.0;
    let hi = ub;
    let f = |u: f64| head_objective(k, rows, u);
    let (mut a, mut b) = (lo, hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let u = 0.5 * (a + b);
    f(u).min(f(hi))
}

pub fn random_soft_rows(rng: &mut impl Rng, max: usize) -> Vec<SoftBound> {
    (0..rng.gen_range(0..=max))
        .map(|i| SoftBound {
            hv: i + 1,
            lb: rng.gen_range(-15.0..15.0),
            scale: rng.gen_range(0.05..2.0),
            penalty: rng.gen_range(0.1..500.0),
        })
        .collect()
}

pub fn random_joint_bounds(rng: &mut impl Rng) -> JointBounds {
    JointBounds {
        ub_head: rng.gen_range(-20.0..20.0),
        ub_tail: rng.gen_range(-20.0..20.0),
        ub_platoon: rng.gen_range(-20.0..20.0),
        hv: random_soft_rows(rng, 3),
    }
}

/// Cooperative gains drawn around the certificate's region, on the connected sets of `cfg`.
pub fn random_cav_gains(rng: &mut impl Rng, cfg: &PlatoonConfig) -> CavGains {
    let mut g = CavGains::acc_only();
    g.beta_head_d = rng.gen_range(-1.0..3.0);
    g.beta_head_tail = rng.gen_range(-1.0..2.0);
    g.beta_tail_n = rng.gen_range(-1.0..3.0);
    g.beta_tail_head = rng.gen_range(-1.0..3.0);
    for &i in &cfg.head_connected {
        g.beta_head_hv.insert(i, rng.gen_range(-1.0..1.0));
    }
    for &i in &cfg.tail_connected {
        g.beta_tail_hv.insert(i, rng.gen_range(-1.0..1.0));
    }
    g
}

/// State with every speed in `[0, v_max]` and every gap in `[s_st, s_go]`.
pub fn random_box_state(rng: &mut impl Rng, n: usize, rp: &RangePolicy) -> PlatoonState {
    let mut x = PlatoonState::zeros(n);
    let mut pick = || (rng.gen_range(rp.s_st..rp.s_go), rng.gen_range(0.0..rp.v_max));
    let (s, v) = pick();
    x.set_head(s, v);
    for i in 1..=n {
        let (s, v) = pick();
        x.set_hv(i, s, v);
    }
    let (s, v) = pick();
    x.set_tail(s, v);
    x
}
