//! Runtime oracle suite: each check recomputes a quantity by an independent
//! route on seeded random instances and compares.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cbf::{qp_head_bounds, solve_qp, QpProblem, SoftBound};
use crate::error::Result;
use crate::platoon::{
    assemble_equilibrium, closed_loop_rhs, nominal_head, nominal_tail, ActuationLimits, CavGains,
    Disturbance, HvParams, PlatoonConfig, RangePolicy,
};
use crate::stability::{freq_response_oracle, linearize, transfer_function, TransferFunction};

/// A random linearizable platoon: heterogeneous drivers, random topology and gains.
#[derive(Debug, Clone)]
pub struct RandomPlatoon {
    pub cfg: PlatoonConfig,
    pub hv: Vec<HvParams>,
    pub gains: CavGains,
    pub rp: RangePolicy,
    pub v_star: f64,
}

pub fn random_platoon(rng: &mut impl Rng, max_hv: usize) -> RandomPlatoon {
    let n = rng.gen_range(1..=max_hv);
    let v_max = rng.gen_range(30.0..40.0);
    let hv: Vec<HvParams> = (0..n)
        .map(|_| {
            let s_st = rng.gen_range(1.0..6.0);
            HvParams {
                a: rng.gen_range(0.1..0.8),
                b: rng.gen_range(0.1..1.0),
                s_st,
                s_go: s_st + rng.gen_range(25.0..50.0),
                v_max,
            }
        })
        .collect();
    let rp = {
        let s_st = rng.gen_range(1.0..5.0);
        RangePolicy::new(s_st, s_st + rng.gen_range(25.0..45.0), v_max)
    };
    let v_star = rng.gen_range(0.2..0.8) * v_max;
    let head: Vec<usize> = (1..=n).filter(|_| rng.gen_bool(0.4)).collect();
    let tail: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.4)).collect();
    let cfg = PlatoonConfig::new(n)
        .with_head_connected(head.iter().copied())
        .with_tail_connected(tail.iter().copied());
    let mut gains = CavGains {
        alpha_head: rng.gen_range(0.2..1.2),
        beta_head_d: rng.gen_range(0.1..1.2),
        alpha_tail: rng.gen_range(0.2..1.2),
        beta_tail_n: rng.gen_range(0.1..1.2),
        ..CavGains::acc_only()
    }
    .with_cooperation(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..3.0));
    gains.beta_head_hv = head.iter().map(|&i| (i, rng.gen_range(-0.3..0.6))).collect();
    gains.beta_tail_hv = tail.iter().map(|&i| (i, rng.gen_range(-0.3..0.6))).collect();
    RandomPlatoon {
        cfg,
        hv,
        gains,
        rp,
        v_star,
    }
}

impl RandomPlatoon {
    pub fn transfer_function(&self) -> Result<TransferFunction> {
        transfer_function(&self.cfg, &self.hv, &self.gains, &self.rp, self.v_star)
    }

    pub fn linearize(&self) -> Result<(DMatrix<f64>, nalgebra::DVector<f64>)> {
        linearize(&self.cfg, &self.hv, &self.gains, &self.rp, self.v_star)
    }
}

/// Largest distance from an eigenvalue to its matched root, relative to
/// `max(1, |eigenvalue|)`, pairing greedily by nearest unused root.
pub fn match_spectra(eigs: &[Complex<f64>], roots: &[Complex<f64>]) -> f64 {
    if eigs.len() != roots.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; roots.len()];
    let mut worst: f64 = 0.0;
    for e in eigs {
        let (j, d) = roots
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, r)| (j, (r - e).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(d / e.norm().max(1.0));
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed error against the oracle.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn finish(name: &'static str, cases: usize, worst: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tolerance,
        cases,
        worst,
        tolerance,
        detail,
    }
}

/// Roots of `D(s)` against the eigenvalues of the state matrix. `perturb` is
/// added to the constant coefficient of `D`; nonzero only for the negative control.
pub fn check_roots_vs_eigenvalues(seed: u64, cases: usize, perturb: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..cases {
        let rpl = random_platoon(&mut rng, 5);
        let outcome = (|| -> Result<f64> {
            let tf = rpl.transfer_function()?;
            let mut den = tf.den.coeffs().to_vec();
            den[0] += perturb;
            let roots = crate::stability::RealPolynomial::new(den).roots()?;
            let (a, _) = rpl.linearize()?;
            let eigs: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
            Ok(match_spectra(&eigs, &roots))
        })();
        let err = outcome.unwrap_or(f64::INFINITY);
        if err > worst {
            worst = err;
            detail = format!("case {k}, N = {}", rpl.cfg.n_hv);
        }
    }
    finish("roots_vs_eigenvalues", cases, worst, 1e-6, detail)
}

/// `|N/D|` at random frequencies against `|e_T^T (jwI - A)^{-1} B|`.
pub fn check_transfer_vs_state_space(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..cases {
        let rpl = random_platoon(&mut rng, 5);
        let omega = 10f64.powf(rng.gen_range(-3.0..2.0));
        let outcome = (|| -> Result<f64> {
            let tf = rpl.transfer_function()?;
            let (a, b) = rpl.linearize()?;
            let ss = freq_response_oracle(&a, &b, a.nrows() - 1, omega)?;
            Ok((tf.gain(omega) - ss.norm()).abs() / ss.norm().max(1.0))
        })();
        let err = outcome.unwrap_or(f64::INFINITY);
        if err > worst {
            worst = err;
            detail = format!("case {k}, omega = {omega:.4}");
        }
    }
    finish("transfer_vs_state_space", cases, worst, 1e-8, detail)
}

/// `|G(0)| = 1`.
pub fn check_dc_gain(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let rpl = random_platoon(&mut rng, 5);
        let err = rpl
            .transfer_function()
            .map(|tf| (tf.dc_gain() - 1.0).abs())
            .unwrap_or(f64::INFINITY);
        worst = worst.max(err);
    }
    finish("dc_gain_unity", cases, worst, 1e-12, String::new())
}

/// Central-difference Jacobian of the unsaturated closed loop at equilibrium
/// against the assembled state matrix.
pub fn check_jacobian(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..cases {
        let rpl = random_platoon(&mut rng, 5);
        let outcome = (|| -> Result<f64> {
            let (a, _) = rpl.linearize()?;
            let x0 = assemble_equilibrium(&rpl.cfg, &rpl.hv, &rpl.rp, rpl.v_star)?;
            let dist = Disturbance::zero(rpl.cfg.n_hv);
            let rhs = |x: &crate::platoon::PlatoonState| {
                closed_loop_rhs(
                    x,
                    rpl.v_star,
                    nominal_head(x, rpl.v_star, &rpl.gains, &rpl.rp, &rpl.cfg),
                    nominal_tail(x, &rpl.gains, &rpl.rp, &rpl.cfg),
                    &rpl.hv,
                    &dist,
                    ActuationLimits::new(-1e9, 1e9),
                    None,
                )
            };
            let n = a.nrows();
            let h = 1e-6;
            let mut err: f64 = 0.0;
            for j in 0..n {
                let (mut xp, mut xm) = (x0.clone(), x0.clone());
                xp.as_mut_slice()[j] += h;
                xm.as_mut_slice()[j] -= h;
                let (fp, fm) = (rhs(&xp), rhs(&xm));
                for i in 0..n {
                    let fd = (fp.as_slice()[i] - fm.as_slice()[i]) / (2.0 * h);
                    err = err.max((fd - a[(i, j)]).abs());
                }
            }
            Ok(err)
        })();
        let err = outcome.unwrap_or(f64::INFINITY);
        if err > worst {
            worst = err;
            detail = format!("case {k}, N = {}", rpl.cfg.n_hv);
        }
    }
    finish("jacobian_finite_difference", cases, worst, 1e-5, detail)
}

/// A feasible random QP: the rows are satisfied at a random point.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let m = rng.gen_range(1..=4);
    let rows = rng.gen_range(1..=6);
    let weights = (0..m).map(|_| rng.gen_range(0.1..10.0)).collect();
    let targets = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut p = QpProblem::new(weights, targets);
    let z0: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
    for _ in 0..rows {
        let row: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let at: f64 = row.iter().zip(&z0).map(|(a, z)| a * z).sum();
        p.constrain(row, at - rng.gen_range(0.0..3.0));
    }
    p
}

/// Minimum objective over all equality-constrained subproblems whose
/// solution is feasible.
pub fn enumerate_qp(p: &QpProblem) -> Option<f64> {
    let m = p.dim();
    let r = p.rows.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << r) {
        let set: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > m {
            continue;
        }
        let k = set.len();
        // z = t + W^-1 A_S^T mu, with (A_S W^-1 A_S^T) mu = c_S - A_S t
        let gram = DMatrix::from_fn(k, k, |a, b| {
            (0..m)
                .map(|j| p.rows[set[a]][j] * p.rows[set[b]][j] / p.weights[j])
                .sum::<f64>()
        });
        let rhs = nalgebra::DVector::from_iterator(
            k,
            set.iter().map(|&i| p.rhs[i] - p.rows[i].iter().zip(&p.targets).map(|(a, t)| a * t).sum::<f64>()),
        );
        let mu = if k == 0 {
            nalgebra::DVector::zeros(0)
        } else {
            match gram.clone().lu().solve(&rhs) {
                Some(mu) if (&gram * &mu - &rhs).norm() <= 1e-9 * (1.0 + rhs.norm()) => mu,
                _ => continue,
            }
        };
        let z: Vec<f64> = (0..m)
            .map(|j| p.targets[j] + set.iter().enumerate().map(|(a, &i)| p.rows[i][j] * mu[a]).sum::<f64>() / p.weights[j])
            .collect();
        if p.max_violation(&z) <= 1e-9 {
            let f = p.objective(&z);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    }
    best
}

/// Dual active-set solver against subset enumeration.
pub fn check_qp_vs_enumeration(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..cases {
        let p = random_qp(&mut rng);
        let err = match (solve_qp(&p), enumerate_qp(&p)) {
            (Ok(s), Some(f)) => (s.objective - f).abs() / f.abs().max(1.0) + p.max_violation(&s.z),
            _ => f64::INFINITY,
        };
        if err > worst {
            worst = err;
            detail = format!("case {k}");
        }
    }
    finish("qp_vs_enumeration", cases, worst, 1e-6, detail)
}

/// Breakpoint solution of the head-CAV filter against the general QP solver
/// on the same problem.
pub fn check_head_filter_vs_qp(seed: u64, cases: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for k in 0..cases {
        let rows: Vec<SoftBound> = (0..rng.gen_range(0..=5))
            .map(|i| SoftBound {
                hv: i + 1,
                lb: rng.gen_range(-10.0..10.0),
                scale: rng.gen_range(0.1..1.5),
                penalty: rng.gen_range(0.1..200.0),
            })
            .collect();
        let (kn, ub) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let f = qp_head_bounds(kn, ub, &rows);
        let m = 1 + rows.len();
        let mut w = vec![1.0];
        w.extend(rows.iter().map(|r| r.penalty));
        let mut t = vec![kn];
        t.extend(std::iter::repeat(0.0).take(rows.len()));
        let mut p = QpProblem::new(w, t);
        let mut e = vec![0.0; m];
        e[0] = -1.0;
        p.constrain(e, -ub);
        for (j, r) in rows.iter().enumerate() {
            let mut row = vec![0.0; m];
            row[0] = r.scale;
            row[1 + j] = 1.0;
            p.constrain(row, r.scale * r.lb);
            let mut floor = vec![0.0; m];
            floor[1 + j] = 1.0;
            p.constrain(floor, 0.0);
        }
        let mut z = vec![f.u_head];
        z.extend(rows.iter().map(|r| f.slacks[&r.hv]));
        let err = match solve_qp(&p) {
            Ok(s) => (p.objective(&z) - s.objective).abs() / s.objective.abs().max(1.0) + p.max_violation(&z),
            Err(_) => f64::INFINITY,
        };
        if err > worst {
            worst = err;
            detail = format!("case {k}");
        }
    }
    finish("head_filter_vs_qp", cases, worst, 1e-6, detail)
}

/// Runs every check, plus a negative control: the roots check must fail once
/// `D(s)` is perturbed by `1e-3`.
pub fn run_all(seed: u64) -> ValidationReport {
    let mut checks = vec![
        check_roots_vs_eigenvalues(seed, 100, 0.0),
        check_transfer_vs_state_space(seed, 50),
        check_dc_gain(seed, 100),
        check_jacobian(seed, 50),
        check_qp_vs_enumeration(seed, 500),
        check_head_filter_vs_qp(seed, 500),
    ];
    let control = check_roots_vs_eigenvalues(seed, 20, 1e-3);
    checks.push(CheckResult {
        name: "negative_control",
        passed: !control.passed,
        cases: control.cases,
        worst: control.worst,
        tolerance: control.tolerance,
        detail: "perturbed D(s) must fail roots_vs_eigenvalues".into(),
    });
    ValidationReport { seed, checks }
}
