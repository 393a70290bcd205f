//! Special functions, quadrature and finite-difference checks.
//!
//! Everything here runs in `f64`. The quadrature and finite-difference helpers
//! are the reference routes used to verify closed forms and reverse-mode
//! gradients elsewhere in the crate.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Floor on the relative-error denominator of [`GradCheckReport`].
pub const REL_ERROR_FLOOR: f64 = 1e-8;

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} requires a positive finite argument, got {x}")))
    }
}

/// Natural log of the gamma function (Lanczos approximation, reflection below 1/2).
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x − 1/(2x) − Σ B_{2k} / (2k x^{2k})
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    shift + x.ln() - 0.5 * inv - series
}

/// Trigamma ψ'(x), the gradient of [`digamma`].
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 10.0 {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    shift + series
}

/// ln B(a, b).
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    check_positive("log_beta", a)?;
    check_positive("log_beta", b)?;
    Ok(ln_beta_unchecked(a, b))
}

pub(crate) fn ln_beta_unchecked(a: f64, b: f64) -> f64 {
    ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b)
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    check_positive("reg_inc_beta", a)?;
    check_positive("reg_inc_beta", b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("reg_inc_beta requires x in [0, 1], got {x}")));
    }
    Ok(reg_inc_beta_unchecked(x, a, b))
}

pub(crate) fn reg_inc_beta_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta_unchecked(a, b)).exp();
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    };
    value.clamp(0.0, 1.0)
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 20_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Beta(a, b) density at `x`, zero outside (0, 1).
pub(crate) fn beta_pdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta_unchecked(a, b)).exp()
}

/// Inverse of `x ↦ I_x(a, b)`: Newton steps safeguarded by bisection.
pub fn inv_reg_inc_beta(u: f64, a: f64, b: f64) -> Result<f64> {
    check_positive("inv_reg_inc_beta", a)?;
    check_positive("inv_reg_inc_beta", b)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::domain(format!("inv_reg_inc_beta requires u in [0, 1], got {u}")));
    }
    Ok(inv_reg_inc_beta_unchecked(u, a, b))
}

pub(crate) fn inv_reg_inc_beta_unchecked(u: f64, a: f64, b: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b);
    for _ in 0..400 {
        let f = reg_inc_beta_unchecked(x, a, b) - u;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = beta_pdf_unchecked(x, a, b);
        let mut next = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}

/// Evaluation grid for quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::contract(format!("grid requires lower < upper, got [{lower}, {upper}]")));
        }
        if points < 2 {
            return Err(Error::contract(format!("grid requires at least 2 points, got {points}")));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.points).map(move |i| {
            if i + 1 == self.points {
                self.upper
            } else {
                self.lower + i as f64 * h
            }
        })
    }
}

/// Composite Simpson quadrature of sampled values on a uniform grid.
///
/// An even number of samples closes the last interval with a trapezoid.
pub fn simpson(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * step * (values[0] + values[1]);
    }
    let simpson_end = if n % 2 == 1 { n - 1 } else { n - 2 };
    let mut acc = values[0] + values[simpson_end];
    for (i, v) in values.iter().enumerate().take(simpson_end).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = acc * step / 3.0;
    if simpson_end != n - 1 {
        total += 0.5 * step * (values[n - 2] + values[n - 1]);
    }
    total
}

/// Integrates `f` over `grid`; fails on any non-finite sample.
pub fn integrate(mut f: impl FnMut(f64) -> f64, grid: &GridSpec) -> Result<f64> {
    let mut values = Vec::with_capacity(grid.points);
    for x in grid.nodes() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::numeric(format!("integrand is {v} at x = {x}")));
        }
        values.push(v);
    }
    Ok(simpson(&values, grid.step()))
}

/// Quadrature estimate of KL(p ‖ q) from log-densities.
///
/// Points where p vanishes contribute nothing; a point where p > 0 but q
/// vanishes (or any NaN/+∞ log-density) is a numeric error.
pub fn numeric_kl(
    log_p: impl Fn(f64) -> f64,
    log_q: impl Fn(f64) -> f64,
    grid: &GridSpec,
) -> Result<f64> {
    let mut values = Vec::with_capacity(grid.points);
    for x in grid.nodes() {
        let lp = log_p(x);
        let lq = log_q(x);
        if lp.is_nan() || lp == f64::INFINITY || lq.is_nan() || lq == f64::INFINITY {
            return Err(Error::numeric(format!("non-finite density at x = {x}: log p = {lp}, log q = {lq}")));
        }
        let p = lp.exp();
        if p == 0.0 {
            values.push(0.0);
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Err(Error::numeric(format!("q vanishes where p > 0 at x = {x}")));
        }
        values.push(p * (lp - lq));
    }
    Ok(simpson(&values, grid.step()))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(&point)?;
        point[i] = orig - h;
        let down = f(&point)?;
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!("function not finite near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Side-by-side analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::contract(format!(
                "gradient lengths differ: {} analytic vs {} numeric",
                analytic.len(),
                numeric.len()
            )));
        }
        let max_rel_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR))
            .fold(0.0, f64::max);
        Ok(Self { analytic, numeric, max_rel_error })
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}
