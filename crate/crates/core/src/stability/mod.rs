//! Linearization about the uniform-flow equilibrium, the head-to-tail
//! transfer function, and plant / string stability classification.

pub mod chart;
pub mod poly;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::platoon::{
    cav_equilibrium_gap, check_fleet, hv_equilibrium_gap, CavGains, HvParams, PlatoonConfig,
    RangePolicy,
};
pub use chart::{stability_chart, ChartCell, GainAxis, StabilityChart};
pub use poly::RealPolynomial;

/// Real parts at or above this count as not decaying.
pub const PLANT_MARGIN: f64 = -1e-9;

const SWEEP_POINTS: usize = 400;
const SWEEP_LO: f64 = 1e-3;
const SWEEP_HI: f64 = 1e2;

/// Partials of the OVM at equilibrium: `a1 = dF/ds`, `a2 = -dF/dv`, `a3 = dF/dv_ahead`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvLinearCoeffs {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavLinearCoeffs {
    pub xi_head: f64,
    pub eta_head: f64,
    pub xi_tail: f64,
    pub eta_tail: f64,
}

pub fn hv_linear_coeffs(p: &HvParams, s_star: f64, _v_star: f64) -> Result<HvLinearCoeffs> {
    let slope = p
        .range_policy()
        .slope(s_star)
        .ok_or(Error::RangePolicyKink { gap: s_star })?;
    Ok(HvLinearCoeffs {
        a1: p.a * slope,
        a2: p.a + p.b,
        a3: p.b,
    })
}

pub fn cav_linear_coeffs(g: &CavGains, rp: &RangePolicy, v_star: f64) -> Result<CavLinearCoeffs> {
    let s_star = cav_equilibrium_gap(rp, v_star)?;
    let slope = rp.slope(s_star).ok_or(Error::RangePolicyKink { gap: s_star })?;
    Ok(CavLinearCoeffs {
        xi_head: g.alpha_head * slope,
        eta_head: g.head_damping(),
        xi_tail: g.alpha_tail * slope,
        eta_tail: g.tail_damping(),
    })
}

/// Linear coefficients of every HV at the `v_star` equilibrium.
pub fn fleet_linear_coeffs(hv: &[HvParams], v_star: f64) -> Result<Vec<HvLinearCoeffs>> {
    hv.iter()
        .map(|p| hv_linear_coeffs(p, hv_equilibrium_gap(p, v_star)?, v_star))
        .collect()
}

/// State matrix `A` and leader-input vector `B` of the linearized closed loop
/// (nominal controllers, no saturation), input being the leader speed.
pub fn linearize(
    cfg: &PlatoonConfig,
    hv: &[HvParams],
    g: &CavGains,
    rp: &RangePolicy,
    v_star: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    cfg.validate()?;
    check_fleet(cfg, hv)?;
    g.check_topology(cfg)?;
    let cav = cav_linear_coeffs(g, rp, v_star)?;
    let hvc = fleet_linear_coeffs(hv, v_star)?;
    let n_hv = cfg.n_hv;
    let n = cfg.state_dim();
    let (v_head, s_tail, v_tail, v_last) = (1, n - 2, n - 1, 2 * n_hv + 1);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);

    a[(0, v_head)] = -1.0;
    b[0] = 1.0;
    a[(v_head, 0)] = cav.xi_head;
    a[(v_head, v_head)] = -cav.eta_head;
    for (&i, &beta) in &g.beta_head_hv {
        a[(v_head, 2 * i + 1)] += beta;
    }
    a[(v_head, v_tail)] += g.beta_head_tail;
    b[v_head] = g.beta_head_d;

    for (i, c) in (1..=n_hv).zip(&hvc) {
        let (s, v) = (2 * i, 2 * i + 1);
        a[(s, v - 2)] = 1.0;
        a[(s, v)] = -1.0;
        a[(v, s)] = c.a1;
        a[(v, v)] = -c.a2;
        a[(v, v - 2)] = c.a3;
    }

    a[(s_tail, v_last)] = 1.0;
    a[(s_tail, v_tail)] = -1.0;
    a[(v_tail, v_head)] += g.beta_tail_head;
    for (&i, &beta) in &g.beta_tail_hv {
        a[(v_tail, 2 * i + 1)] += beta;
    }
    a[(v_tail, v_last)] += g.beta_tail_n;
    a[(v_tail, s_tail)] = cav.xi_tail;
    a[(v_tail, v_tail)] = -cav.eta_tail;
    Ok((a, b))
}

/// Leader-speed to tail-CAV-speed transfer function `N(s) / D(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub num: RealPolynomial,
    pub den: RealPolynomial,
}

impl TransferFunction {
    pub fn eval(&self, s: Complex<f64>) -> Complex<f64> {
        self.num.eval_complex(s) / self.den.eval_complex(s)
    }

    /// `|G(j omega)|`.
    pub fn gain(&self, omega: f64) -> f64 {
        let s = Complex::new(0.0, omega);
        self.num.eval_complex(s).norm() / self.den.eval_complex(s).norm()
    }

    pub fn dc_gain(&self) -> f64 {
        self.num.coeff(0) / self.den.coeff(0)
    }

    /// Coefficient of `omega^2` in `|D(j omega)|^2 - |N(j omega)|^2`.
    ///
    /// With `|G(0)| = 1` the constant terms cancel and this sign decides
    /// whether `|G|` dips below or rises above one near zero frequency.
    pub fn low_frequency_margin(&self) -> f64 {
        let quad = |p: &RealPolynomial| {
            let (c0, c1, c2) = (p.coeff(0), p.coeff(1), p.coeff(2));
            c1 * c1 - 2.0 * c0 * c2
        };
        quad(&self.den) - quad(&self.num)
    }
}

/// Assembles `N(s)` and `D(s)` from the linear coefficients.
pub fn build_transfer_function(
    hv: &[HvLinearCoeffs],
    cav: &CavLinearCoeffs,
    g: &CavGains,
    cfg: &PlatoonConfig,
) -> TransferFunction {
    let n = cfg.n_hv;
    let second: Vec<RealPolynomial> = hv
        .iter()
        .map(|c| RealPolynomial::quadratic(c.a1, c.a2, 1.0))
        .collect();
    let first: Vec<RealPolynomial> = hv
        .iter()
        .map(|c| RealPolynomial::linear(c.a1, c.a3))
        .collect();
    // P_i: HVs 1..=i contribute their numerator factor, the rest their denominator.
    let p = |i: usize| {
        RealPolynomial::product(first[..i].iter().chain(second[i..].iter()))
    };
    let p0 = p(0);
    let s = RealPolynomial::s();

    let mut tail_num = &RealPolynomial::linear(cav.xi_tail, g.beta_tail_n) * &p(n);
    tail_num = &tail_num + &(&s * &p0).scale(g.beta_tail_head);
    for (&i, &beta) in &g.beta_tail_hv {
        tail_num = &tail_num + &(&s * &p(i)).scale(beta);
    }

    let mut head_bracket = &RealPolynomial::quadratic(cav.xi_head, cav.eta_head, 1.0) * &p0;
    for (&i, &beta) in &g.beta_head_hv {
        head_bracket = &head_bracket - &(&s * &p(i)).scale(beta);
    }
    let tail_char = RealPolynomial::quadratic(cav.xi_tail, cav.eta_tail, 1.0);

    let num = &RealPolynomial::linear(cav.xi_head, g.beta_head_d) * &tail_num;
    let den = &(&head_bracket * &tail_char) - &(&s * &tail_num).scale(g.beta_head_tail);
    TransferFunction { num, den }
}

/// Linearizes and builds the transfer function in one call.
pub fn transfer_function(
    cfg: &PlatoonConfig,
    hv: &[HvParams],
    g: &CavGains,
    rp: &RangePolicy,
    v_star: f64,
) -> Result<TransferFunction> {
    cfg.validate()?;
    check_fleet(cfg, hv)?;
    g.check_topology(cfg)?;
    let hvc = fleet_linear_coeffs(hv, v_star)?;
    let cav = cav_linear_coeffs(g, rp, v_star)?;
    Ok(build_transfer_function(&hvc, &cav, g, cfg))
}

pub fn polynomial_roots(p: &RealPolynomial) -> Result<Vec<Complex<f64>>> {
    p.roots()
}

pub fn spectral_abscissa(tf: &TransferFunction) -> Result<f64> {
    Ok(tf
        .den
        .roots()?
        .iter()
        .map(|r| r.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn plant_stable(tf: &TransferFunction) -> Result<bool> {
    Ok(spectral_abscissa(tf)? < PLANT_MARGIN)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringStabilityReport {
    /// Largest sampled-and-refined `|G(j omega)|` over `omega > 0`.
    pub peak_gain: f64,
    pub peak_omega: f64,
    pub low_frequency_margin: f64,
    pub string_stable: bool,
}

/// Frequency sweep of `|G(j omega)|` with golden-section refinement around
/// the sampled peak, combined with the analytic small-frequency test.
pub fn string_stability(tf: &TransferFunction) -> StringStabilityReport {
    let log_lo = SWEEP_LO.log10();
    let step = (SWEEP_HI.log10() - log_lo) / (SWEEP_POINTS - 1) as f64;
    let omega_at = |k: usize| 10f64.powf(log_lo + step * k as f64);
    let (mut k_best, mut g_best) = (0, f64::NEG_INFINITY);
    for k in 0..SWEEP_POINTS {
        let gk = tf.gain(omega_at(k));
        if gk > g_best {
            k_best = k;
            g_best = gk;
        }
    }
    let lo = omega_at(k_best.saturating_sub(1)).log10();
    let hi = omega_at((k_best + 1).min(SWEEP_POINTS - 1)).log10();
    let (w_ref, g_ref) = golden_max(|lw| tf.gain(10f64.powf(lw)), lo, hi);
    let (peak_omega, peak_gain) = if g_ref > g_best {
        (10f64.powf(w_ref), g_ref)
    } else {
        (omega_at(k_best), g_best)
    };
    let margin = tf.low_frequency_margin();
    StringStabilityReport {
        peak_gain,
        peak_omega,
        low_frequency_margin: margin,
        string_stable: peak_gain < 1.0 && margin > 0.0,
    }
}

pub fn string_stable(tf: &TransferFunction) -> bool {
    string_stability(tf).string_stable
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `e_out^T (j omega I - A)^{-1} B`, an independent route to `G(j omega)`.
pub fn freq_response_oracle(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    output_index: usize,
    omega: f64,
) -> Result<Complex<f64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { Complex::new(0.0, omega) } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(a[(i, j)], 0.0)
    });
    let rhs = b.map(|x| Complex::new(x, 0.0));
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("j*{omega}*I - A")))?;
    let out = sol[output_index];
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Singular(format!("j*{omega}*I - A")))
    }
}

/// Residual `|D(j omega) - N(j omega) e^{j theta}| / |D(j omega)|` of the
/// boundary condition `|G(j omega)| = 1` with phase `theta`.
pub fn boundary_residual(tf: &TransferFunction, omega: f64, theta: f64) -> f64 {
    let s = Complex::new(0.0, omega);
    let d = tf.den.eval_complex(s);
    let n = tf.num.eval_complex(s);
    (d - n * Complex::from_polar(1.0, theta)).norm() / d.norm()
}

/// Phase that best aligns `N e^{j theta}` with `D` at `omega`.
pub fn boundary_phase(tf: &TransferFunction, omega: f64) -> f64 {
    let s = Complex::new(0.0, omega);
    (tf.den.eval_complex(s) / tf.num.eval_complex(s)).arg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn calibrated_hv_coefficients() {
        let c = hv_linear_coeffs(&HvParams::CALIBRATED, 24.1, 20.0).unwrap();
        assert_abs_diff_eq!(c.a1, 0.16 * 40.0 / 44.4, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a2, 0.32, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a3, 0.16, epsilon = 1e-12);
        let kink = hv_linear_coeffs(&HvParams::CALIBRATED, 1.9, 0.0);
        assert_eq!(kink, Err(Error::RangePolicyKink { gap: 1.9 }));
        let lazy = HvParams {
            a: 0.0,
            b: 0.0,
            ..HvParams::CALIBRATED
        };
        let c = hv_linear_coeffs(&lazy, 24.1, 20.0).unwrap();
        assert_eq!((c.a1, c.a2, c.a3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn b_vector_has_two_entries() {
        let cfg = PlatoonConfig::new(3);
        let g = CavGains::acc_only().with_cooperation(0.5, 1.2);
        let (_, b) = linearize(&cfg, &[HvParams::CALIBRATED; 3], &g, &RangePolicy::CAV_DEFAULT, 20.0)
            .unwrap();
        let nz: Vec<(usize, f64)> = b.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();
        assert_eq!(nz, vec![(0, 1.0), (1, 0.6)]);
    }

    #[test]
    fn transfer_function_shape() {
        let cfg = PlatoonConfig::new(4);
        let g = CavGains::acc_only().with_cooperation(0.5, 1.2);
        let tf = transfer_function(&cfg, &[HvParams::CALIBRATED; 4], &g, &RangePolicy::CAV_DEFAULT, 20.0)
            .unwrap();
        assert_eq!(tf.den.degree(), 12);
        assert!(tf.num.degree() < 12);
        assert_abs_diff_eq!(tf.den.leading(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(tf.dc_gain(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn plant_stability_threshold() {
        let stable = TransferFunction {
            num: RealPolynomial::constant(2.0),
            den: RealPolynomial::quadratic(2.0, 3.0, 1.0),
        };
        assert!(plant_stable(&stable).unwrap());
        let unstable = TransferFunction {
            num: RealPolynomial::constant(1.0),
            den: &RealPolynomial::linear(-0.1, 1.0) * &RealPolynomial::linear(1.0, 1.0),
        };
        assert!(!plant_stable(&unstable).unwrap());
    }

    #[test]
    fn first_order_lag_is_string_stable() {
        let tf = TransferFunction {
            num: RealPolynomial::constant(1.0),
            den: RealPolynomial::linear(1.0, 1.0),
        };
        let rep = string_stability(&tf);
        assert!(rep.string_stable);
        assert_abs_diff_eq!(rep.low_frequency_margin, 1.0, epsilon = 1e-14);
        assert!(rep.peak_gain < 1.0);
    }

    #[test]
    fn resonant_second_order_is_not() {
        // omega_n = 1, zeta = 0.1 peaks well above one
        let tf = TransferFunction {
            num: RealPolynomial::constant(1.0),
            den: RealPolynomial::quadratic(1.0, 0.2, 1.0),
        };
        let rep = string_stability(&tf);
        assert!(!rep.string_stable);
        assert_abs_diff_eq!(rep.peak_omega, (1.0f64 - 2.0 * 0.01).sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(rep.peak_gain, 1.0 / (2.0 * 0.1 * (1.0f64 - 0.01).sqrt()), epsilon = 1e-8);
    }

    #[test]
    fn oracle_rejects_singular_pencil() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert!(freq_response_oracle(&a, &b, 0, 1.0).is_err());
        assert!(freq_response_oracle(&a, &b, 0, 2.0).is_ok());
    }
}
