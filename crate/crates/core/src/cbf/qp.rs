//! Small dense convex QP with a diagonal objective, solved by a dual
//! active-set method (Goldfarb–Idnani) after whitening the objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 500;
const DEPENDENCE_TOL: f64 = 1e-12;

/// `min sum_k w_k (z_k - t_k)^2  s.t.  rows[i] . z >= rhs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl QpProblem {
    pub fn new(weights: Vec<f64>, targets: Vec<f64>) -> Self {
        Self {
            weights,
            targets,
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    /// Adds `row . z >= rhs`.
    pub fn constrain(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.rows.push(row);
        self.rhs.push(rhs);
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.targets)
            .zip(z)
            .map(|((w, t), z)| w * (z - t) * (z - t))
            .sum()
    }

    /// `rows[i] . z - rhs[i]`; nonnegative when row `i` holds.
    pub fn slack(&self, i: usize, z: &[f64]) -> f64 {
        dot(&self.rows[i], z) - self.rhs[i]
    }

    pub fn max_violation(&self, z: &[f64]) -> f64 {
        (0..self.rows.len())
            .map(|i| -self.slack(i, z))
            .fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.targets.len() != m {
            return Err(Error::invalid("QP targets and weights differ in length"));
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("QP weights must be positive and finite"));
        }
        if self.rows.len() != self.rhs.len() {
            return Err(Error::invalid("QP rows and right-hand sides differ in length"));
        }
        for (row, c) in self.rows.iter().zip(&self.rhs) {
            if row.len() != m || row.iter().any(|a| !a.is_finite()) || !c.is_finite() {
                return Err(Error::invalid("QP constraint row is malformed or non-finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Indices of rows in the final active set, ascending.
    pub active: Vec<usize>,
    /// One multiplier per row (zero off the active set), scaled so that
    /// `2 W (z - t) = sum_i lambda_i rows[i]`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves a strictly convex diagonal QP exactly.
///
/// Errors on an inconsistent constraint set or when the iteration cap is hit;
/// there is no fallback answer.
pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution> {
    prob.validate()?;
    let m = prob.dim();
    let inv_sqrt_w: Vec<f64> = prob.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    // y = sqrt(W) (z - t): minimize |y|^2 / 2 subject to n_i . y >= b_i
    let normals: Vec<DVector<f64>> = prob
        .rows
        .iter()
        .map(|row| DVector::from_iterator(m, row.iter().zip(&inv_sqrt_w).map(|(a, s)| a * s)))
        .collect();
    let offsets: Vec<f64> = prob
        .rows
        .iter()
        .zip(&prob.rhs)
        .map(|(row, c)| c - dot(row, &prob.targets))
        .collect();
    let tol: Vec<f64> = offsets
        .iter()
        .zip(&normals)
        .map(|(b, n)| 1e-12 * (1.0 + b.abs()).max(n.norm()))
        .collect();

    let mut y = DVector::<f64>::zeros(m);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    while let Some(p) = (0..normals.len()).find(|&i| normals[i].dot(&y) - offsets[i] < -tol[i]) {
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return Err(Error::QpIterationLimit { iterations });
            }
            let (z, r) = directions(&normals, &active, &normals[p])?;
            let blocking = r
                .iter()
                .enumerate()
                .filter(|(_, &rj)| rj > DEPENDENCE_TOL)
                .map(|(j, &rj)| (j, u[j] / rj))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(active[a.0].cmp(&active[b.0])));

            if z.norm() <= DEPENDENCE_TOL * (1.0 + normals[p].norm()) {
                let Some((j, t)) = blocking else {
                    return Err(Error::QpInfeasible(format!(
                        "row {p} contradicts the active rows {active:?}"
                    )));
                };
                for (uj, rj) in u.iter_mut().zip(&r) {
                    *uj -= t * rj;
                }
                u_p += t;
                active.remove(j);
                u.remove(j);
                continue;
            }

            let s_p = normals[p].dot(&y) - offsets[p];
            let t_full = -s_p / z.dot(&normals[p]);
            let (t, drop) = match blocking {
                Some((j, t_part)) if t_part < t_full => (t_part, Some(j)),
                _ => (t_full, None),
            };
            y += &z * t;
            for (uj, rj) in u.iter_mut().zip(&r) {
                *uj -= t * rj;
            }
            u_p += t;
            match drop {
                Some(j) => {
                    active.remove(j);
                    u.remove(j);
                }
                None => {
                    active.push(p);
                    u.push(u_p);
                    break;
                }
            }
        }
    }

    let z: Vec<f64> = (0..m)
        .map(|k| prob.targets[k] + y[k] * inv_sqrt_w[k])
        .collect();
    let mut multipliers = vec![0.0; normals.len()];
    for (&i, &ui) in active.iter().zip(&u) {
        multipliers[i] = 2.0 * ui.max(0.0);
    }
    active.sort_unstable();
    Ok(QpSolution {
        objective: prob.objective(&z),
        z,
        active,
        multipliers,
        iterations,
    })
}

/// Primal step `z = (I - N^T (N N^T)^{-1} N) n_p` and dual step
/// `r = (N N^T)^{-1} N n_p` for active normals `N`.
fn directions(
    normals: &[DVector<f64>],
    active: &[usize],
    np: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>)> {
    if active.is_empty() {
        return Ok((np.clone(), Vec::new()));
    }
    let k = active.len();
    let gram = DMatrix::from_fn(k, k, |a, b| normals[active[a]].dot(&normals[active[b]]));
    let rhs = DVector::from_iterator(k, active.iter().map(|&i| normals[i].dot(np)));
    let r = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("active constraint normals are dependent".into()))?;
    let mut z = np.clone();
    for (a, &i) in active.iter().enumerate() {
        z -= &normals[i] * r[a];
    }
    Ok((z, r.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unconstrained_returns_targets() {
        let p = QpProblem::new(vec![1.0, 3.0], vec![0.5, -2.0]);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.z, vec![0.5, -2.0]);
        assert!(s.active.is_empty());
    }

    #[test]
    fn weighted_halfspace_projection() {
        // min (z0-0)^2 + 4 (z1-0)^2  s.t.  z0 + z1 >= 1
        let mut p = QpProblem::new(vec![1.0, 4.0], vec![0.0, 0.0]);
        p.constrain(vec![1.0, 1.0], 1.0);
        let s = solve_qp(&p).unwrap();
        // z = W^-1 a / (a^T W^-1 a)
        assert_abs_diff_eq!(s.z[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], 0.2, epsilon = 1e-12);
        assert_eq!(s.active, vec![0]);
        assert_abs_diff_eq!(s.multipliers[0], 1.6, epsilon = 1e-12);
    }

    #[test]
    fn inactive_rows_are_ignored() {
        let mut p = QpProblem::new(vec![1.0], vec![2.0]);
        p.constrain(vec![-1.0], -5.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.z, vec![2.0]);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = QpProblem::new(vec![1.0], vec![0.0]);
        p.constrain(vec![1.0], 1.0).constrain(vec![-1.0], 0.0);
        assert!(matches!(solve_qp(&p), Err(Error::QpInfeasible(_))));
    }

    #[test]
    fn duplicated_rows_are_handled() {
        let mut p = QpProblem::new(vec![1.0, 1.0], vec![0.0, 0.0]);
        p.constrain(vec![1.0, 0.0], 1.0)
            .constrain(vec![2.0, 0.0], 2.0)
            .constrain(vec![0.0, 1.0], 1.0);
        let s = solve_qp(&p).unwrap();
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn malformed_problems_rejected() {
        let p = QpProblem::new(vec![0.0], vec![0.0]);
        assert!(solve_qp(&p).is_err());
        let mut p = QpProblem::new(vec![1.0], vec![0.0]);
        p.constrain(vec![1.0, 2.0], 0.0);
        assert!(solve_qp(&p).is_err());
    }
}
