//! Gaussian, Beta, Binary Concrete and Spike-and-Slab distributions.
//!
//! Value-level functions work on plain `f64` vectors. The [`graph`] submodule
//! builds the same quantities on a [`Graph`] so they can be differentiated.
//! Spike-and-Slab gates follow the convention that `γ_i` is the probability
//! of the spike, i.e. of dimension `i` being switched off.

use crate::diff::{Graph, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::numerics::{
    beta_pdf_unchecked, digamma_unchecked, inv_reg_inc_beta_unchecked, ln_beta_unchecked,
    reg_inc_beta_unchecked,
};

/// Default spike standard deviation.
pub const DEFAULT_SPIKE_STD: f64 = 1e-2;
/// Default Binary Concrete temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Beta samples are clamped into `[BETA_CLAMP, 1 − BETA_CLAMP]`.
pub const BETA_CLAMP: f64 = 1e-6;
/// Uniform noise for the Binary Concrete logit is clamped into `[U_CLAMP, 1 − U_CLAMP]`.
pub const U_CLAMP: f64 = 1e-7;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_dims(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::contract(format!("{what}: dimension {a} vs {b}")))
    }
}

/// Factorised Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dims("gaussian params", mean.len(), std.len())?;
        if mean.iter().any(|m| !m.is_finite()) || std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::domain("gaussian needs finite means and positive finite stds"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Factorised Beta.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        check_dims("beta params", alpha.len(), beta.len())?;
        if alpha.iter().chain(&beta).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::domain("beta needs positive finite α and β"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn constant(alpha: f64, beta: f64, dim: usize) -> Result<Self> {
        Self::new(vec![alpha; dim], vec![beta; dim])
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a / (a + b)).collect()
    }
}

/// Binary Concrete relaxation of Bernoulli(γ).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryConcreteParams {
    pub gate: Vec<f64>,
    pub temperature: f64,
}

impl BinaryConcreteParams {
    pub fn new(gate: Vec<f64>, temperature: f64) -> Result<Self> {
        if gate.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::domain("binary concrete gate must lie strictly inside (0, 1)"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::domain(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { gate, temperature })
    }
}

/// Per-dimension mixture `(1 − γ) N(μ, σ) + γ N(0, σ_spike)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabParams {
    pub gate: Vec<f64>,
    pub slab: GaussianParams,
    pub spike_std: f64,
}

impl SpikeSlabParams {
    pub fn new(gate: Vec<f64>, slab: GaussianParams, spike_std: f64) -> Result<Self> {
        check_dims("spike-and-slab gate", gate.len(), slab.dim())?;
        if gate.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::domain("spike-and-slab gate must lie in [0, 1]"));
        }
        if !(spike_std > 0.0 && spike_std.is_finite()) {
            return Err(Error::domain(format!("spike std must be positive, got {spike_std}")));
        }
        Ok(Self { gate, slab, spike_std })
    }

    pub fn dim(&self) -> usize {
        self.gate.len()
    }
}

pub(crate) fn normal_log_pdf(z: f64, mean: f64, std: f64) -> f64 {
    let t = (z - mean) / std;
    -0.5 * t * t - std.ln() - HALF_LN_2PI
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------- Gaussian

/// `z = μ + σ ⊙ ε` with ε standard normal.
pub fn gaussian_sample(params: &GaussianParams, rng: &mut RngStream) -> Vec<f64> {
    params.mean.iter().zip(&params.std).map(|(m, s)| m + s * rng.normal()).collect()
}

pub fn gaussian_log_prob(z: &[f64], params: &GaussianParams) -> Result<f64> {
    check_dims("gaussian log prob", z.len(), params.dim())?;
    Ok(z.iter().zip(params.mean.iter().zip(&params.std)).map(|(&z, (&m, &s))| normal_log_pdf(z, m, s)).sum())
}

/// KL(q ‖ p) summed over dimensions.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    check_dims("gaussian kl", q.dim(), p.dim())?;
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (mq, sq, mp, sp) = (q.mean[i], q.std[i], p.mean[i], p.std[i]);
        if mq == mp && sq == sp {
            continue;
        }
        let d = mq - mp;
        total += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total)
}

// -------------------------------------------------------------------- Beta

/// How Beta variates are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaSampler {
    /// Ratio of two Gamma variates.
    Gamma,
    /// Inverse CDF of a uniform draw. Slower, but a smooth function of (α, β)
    /// at fixed noise, which is what finite-difference checks need.
    InverseCdf,
}

impl std::str::FromStr for BetaSampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "inverse-cdf" => Ok(Self::InverseCdf),
            other => Err(Error::Config(format!("unknown beta sampler '{other}' (gamma | inverse-cdf)"))),
        }
    }
}

impl std::fmt::Display for BetaSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gamma => "gamma",
            Self::InverseCdf => "inverse-cdf",
        })
    }
}

/// Beta samples together with their pathwise gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaDraw {
    pub values: Vec<f64>,
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<f64>,
    /// Number of samples that hit the `[BETA_CLAMP, 1 − BETA_CLAMP]` bounds.
    pub clamped: usize,
}

/// Implicit reparameterisation gradient `(∂z/∂α, ∂z/∂β)` of a Beta sample.
///
/// `∂z/∂α = −(∂I_z(α,β)/∂α) / p(z; α, β)`; the CDF derivative is taken by
/// central differences in 64-bit.
pub fn beta_implicit_grad(z: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let pdf = beta_pdf_unchecked(z, alpha, beta);
    if !(pdf > 0.0) {
        return (0.0, 0.0);
    }
    // Relative step for small shapes keeps α − h positive.
    let ha = 1e-5 * alpha.min(1.0);
    let hb = 1e-5 * beta.min(1.0);
    let d_cdf_a = (reg_inc_beta_unchecked(z, alpha + ha, beta) - reg_inc_beta_unchecked(z, alpha - ha, beta)) / (2.0 * ha);
    let d_cdf_b = (reg_inc_beta_unchecked(z, alpha, beta + hb) - reg_inc_beta_unchecked(z, alpha, beta - hb)) / (2.0 * hb);
    (-d_cdf_a / pdf, -d_cdf_b / pdf)
}

fn beta_draw_one(alpha: f64, beta: f64, sampler: BetaSampler, rng: &mut RngStream) -> f64 {
    match sampler {
        BetaSampler::Gamma => {
            let x = rng.gamma(alpha);
            let y = rng.gamma(beta);
            if x + y > 0.0 {
                x / (x + y)
            } else if alpha >= beta {
                1.0
            } else {
                0.0
            }
        }
        BetaSampler::InverseCdf => inv_reg_inc_beta_unchecked(rng.uniform(), alpha, beta),
    }
}

/// Draws `z ~ Beta(α, β)` per dimension with pathwise gradients.
///
/// Samples outside `[BETA_CLAMP, 1 − BETA_CLAMP]` are clamped, counted, and
/// given zero gradient.
pub fn beta_sample_pathwise(params: &BetaParams, sampler: BetaSampler, rng: &mut RngStream) -> BetaDraw {
    let n = params.dim();
    let mut draw = BetaDraw { values: Vec::with_capacity(n), d_alpha: Vec::with_capacity(n), d_beta: Vec::with_capacity(n), clamped: 0 };
    for i in 0..n {
        let (a, b) = (params.alpha[i], params.beta[i]);
        let z = beta_draw_one(a, b, sampler, rng);
        if !(BETA_CLAMP..=1.0 - BETA_CLAMP).contains(&z) {
            draw.values.push(z.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP));
            draw.d_alpha.push(0.0);
            draw.d_beta.push(0.0);
            draw.clamped += 1;
        } else {
            let (da, db) = beta_implicit_grad(z, a, b);
            draw.values.push(z);
            draw.d_alpha.push(da);
            draw.d_beta.push(db);
        }
    }
    draw
}

pub fn beta_log_prob(z: &[f64], params: &BetaParams) -> Result<f64> {
    check_dims("beta log prob", z.len(), params.dim())?;
    let mut total = 0.0;
    for (i, &x) in z.iter().enumerate() {
        let (a, b) = (params.alpha[i], params.beta[i]);
        total += (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta_unchecked(a, b);
    }
    Ok(total)
}

/// KL(q ‖ p) between factorised Betas, summed over dimensions.
pub fn beta_kl(q: &BetaParams, p: &BetaParams) -> Result<f64> {
    check_dims("beta kl", q.dim(), p.dim())?;
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (aq, bq, ap, bp) = (q.alpha[i], q.beta[i], p.alpha[i], p.beta[i]);
        if aq == ap && bq == bp {
            continue;
        }
        total += ln_beta_unchecked(ap, bp) - ln_beta_unchecked(aq, bq)
            + (aq - ap) * digamma_unchecked(aq)
            + (bq - bp) * digamma_unchecked(bq)
            + (ap - aq + bp - bq) * digamma_unchecked(aq + bq);
    }
    Ok(total)
}

// --------------------------------------------------------- Binary Concrete

/// `σ((logit γ + logit u) / τ)` with u clamped away from 0 and 1.
pub fn binary_concrete_relax(gate: f64, u: f64, temperature: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    let s = ((gate / (1.0 - gate)).ln() + (u / (1.0 - u)).ln()) / temperature;
    1.0 / (1.0 + (-s).exp())
}

pub fn binary_concrete_sample(params: &BinaryConcreteParams, rng: &mut RngStream) -> Vec<f64> {
    params.gate.iter().map(|&g| binary_concrete_relax(g, rng.uniform(), params.temperature)).collect()
}

// ---------------------------------------------------------- Spike-and-Slab

fn relaxed_gate(gate: f64, u: f64, temperature: f64) -> (f64, f64) {
    if gate <= 0.0 || gate >= 1.0 {
        return (gate.clamp(0.0, 1.0), 0.0);
    }
    let b = binary_concrete_relax(gate, u, temperature);
    (b, b * (1.0 - b) / (temperature * gate * (1.0 - gate)))
}

/// Relaxed sample `z = (1 − b) (μ + σ ε) + b σ_spike η`, `b ~ BinaryConcrete(γ, τ)`.
///
/// Noise is drawn as all uniforms, then all ε, then all η. Gates of exactly 0
/// or 1 skip the relaxation.
pub fn spike_slab_sample(params: &SpikeSlabParams, temperature: f64, rng: &mut RngStream) -> Vec<f64> {
    let d = params.dim();
    let u = rng.uniforms(d);
    let eps = rng.normals(d);
    let eta = rng.normals(d);
    (0..d)
        .map(|i| {
            let (b, _) = relaxed_gate(params.gate[i], u[i], temperature);
            let slab = params.slab.mean[i] + params.slab.std[i] * eps[i];
            (1.0 - b) * slab + b * params.spike_std * eta[i]
        })
        .collect()
}

/// Exact sample: Bernoulli(γ) picks spike or slab, then that component is sampled.
pub fn spike_slab_sample_exact(params: &SpikeSlabParams, rng: &mut RngStream) -> Vec<f64> {
    (0..params.dim())
        .map(|i| {
            let spike = rng.bernoulli(params.gate[i]);
            let e = rng.normal();
            if spike {
                params.spike_std * e
            } else {
                params.slab.mean[i] + params.slab.std[i] * e
            }
        })
        .collect()
}

/// Log-density of the per-dimension mixture, summed over dimensions.
pub fn spike_slab_log_prob(z: &[f64], params: &SpikeSlabParams) -> Result<f64> {
    check_dims("spike-and-slab log prob", z.len(), params.dim())?;
    let mut total = 0.0;
    for (i, &x) in z.iter().enumerate() {
        let g = params.gate[i];
        let slab = (1.0 - g).ln() + normal_log_pdf(x, params.slab.mean[i], params.slab.std[i]);
        let spike = g.ln() + normal_log_pdf(x, 0.0, params.spike_std);
        total += log_add_exp(slab, spike);
    }
    Ok(total)
}

fn check_shared_gate(q: &SpikeSlabParams, p: &SpikeSlabParams) -> Result<()> {
    check_dims("spike-and-slab kl", q.dim(), p.dim())?;
    if q.gate != p.gate {
        return Err(Error::contract("spike-and-slab kl needs posterior and prior to share γ"));
    }
    if q.spike_std != p.spike_std {
        return Err(Error::contract("spike-and-slab kl needs equal spike std"));
    }
    Ok(())
}

/// Paired-component bound `Σ_i (1 − γ_i) KL(q.slab_i ‖ p.slab_i)`.
///
/// Both mixtures share γ and the spike, so the spike-to-spike term vanishes.
/// This upper-bounds the exact mixture KL.
pub fn spike_slab_kl(q: &SpikeSlabParams, p: &SpikeSlabParams) -> Result<f64> {
    check_shared_gate(q, p)?;
    let mut total = 0.0;
    for i in 0..q.dim() {
        let w = 1.0 - q.gate[i];
        if w == 0.0 {
            continue;
        }
        let qi = GaussianParams { mean: vec![q.slab.mean[i]], std: vec![q.slab.std[i]] };
        let pi = GaussianParams { mean: vec![p.slab.mean[i]], std: vec![p.slab.std[i]] };
        total += w * gaussian_kl(&qi, &pi)?;
    }
    Ok(total)
}

/// Single-sample estimate `log q(z) − log p(z)` at an exact draw `z ~ q`.
pub fn spike_slab_kl_mc(q: &SpikeSlabParams, p: &SpikeSlabParams, rng: &mut RngStream) -> Result<f64> {
    check_shared_gate(q, p)?;
    let z = spike_slab_sample_exact(q, rng);
    Ok(spike_slab_log_prob(&z, q)? - spike_slab_log_prob(&z, p)?)
}

// --------------------------------------------------------------------- MMD

/// RBF bandwidth choice for [`mmd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance over the pooled sample (1 if that is zero).
    Median,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows of `x` and `y`.
pub fn median_heuristic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn resolve_bandwidth(bandwidth: Bandwidth, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => median_heuristic(x, y),
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("RBF bandwidth must be positive, got {h}")));
    }
    Ok(h)
}

fn mean_kernel(x: &[Vec<f64>], y: &[Vec<f64>], inv_two_h2: f64) -> f64 {
    let mut total = 0.0;
    for a in x {
        for b in y {
            total += (-sq_dist(a, b) * inv_two_h2).exp();
        }
    }
    total / (x.len() * y.len()) as f64
}

/// Biased (V-statistic) MMD² with kernel `exp(−‖a − b‖² / (2h²))`.
pub fn mmd(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Bandwidth) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::contract("mmd needs two non-empty sample sets"));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|r| r.len() != d) {
        return Err(Error::contract("mmd samples must share one dimensionality"));
    }
    let h = resolve_bandwidth(bandwidth, x, y)?;
    let c = 1.0 / (2.0 * h * h);
    let value = mean_kernel(x, x, c) + mean_kernel(y, y, c) - 2.0 * mean_kernel(x, y, c);
    Ok(value.max(0.0))
}

/// Differentiable counterparts of the value-level functions.
pub mod graph {
    use super::*;

    /// Elementwise KL(N(μ, σ) ‖ N(0, 1)) = −ln σ + (σ² + μ²)/2 − 1/2.
    pub fn gaussian_kl_standard(g: &mut Graph, mean: Var, std: Var) -> Result<Var> {
        let log_s = g.log(std);
        let s2 = g.mul(std, std)?;
        let m2 = g.mul(mean, mean)?;
        let sq = g.add(s2, m2)?;
        let half = g.affine(sq, 0.5, -0.5);
        g.sub(half, log_s)
    }

    /// Elementwise Gaussian log-density of `z` under N(μ, σ).
    pub fn gaussian_log_prob(g: &mut Graph, z: Var, mean: Var, std: Var) -> Result<Var> {
        let diff = g.sub(z, mean)?;
        let log_s = g.log(std);
        let neg_log_s = g.scale(log_s, -1.0);
        let inv_s = g.exp(neg_log_s);
        let t = g.mul(diff, inv_s)?;
        let t2 = g.mul(t, t)?;
        let quad = g.affine(t2, -0.5, -HALF_LN_2PI);
        g.sub(quad, log_s)
    }

    /// Elementwise KL(Beta(α, β) ‖ Beta(α_p, β_p)) for a constant prior.
    pub fn beta_kl(g: &mut Graph, alpha: Var, beta: Var, prior_alpha: f64, prior_beta: f64) -> Result<Var> {
        let sum = g.add(alpha, beta)?;
        let lg_a = g.lgamma(alpha);
        let lg_b = g.lgamma(beta);
        let lg_s = g.lgamma(sum);
        // −ln B(α, β) + ln B(α_p, β_p)
        let t = g.add(lg_a, lg_b)?;
        let log_b = g.sub(t, lg_s)?;
        let kl = g.affine(log_b, -1.0, ln_beta_unchecked(prior_alpha, prior_beta));
        let psi_a = g.digamma(alpha);
        let psi_b = g.digamma(beta);
        let psi_s = g.digamma(sum);
        let da = g.affine(alpha, 1.0, -prior_alpha);
        let db = g.affine(beta, 1.0, -prior_beta);
        let ta = g.mul(da, psi_a)?;
        let tb = g.mul(db, psi_b)?;
        let ds = g.affine(sum, -1.0, prior_alpha + prior_beta);
        let ts = g.mul(ds, psi_s)?;
        let kl = g.add(kl, ta)?;
        let kl = g.add(kl, tb)?;
        g.add(kl, ts)
    }

    /// Pathwise Beta sample node; returns the sample and the clamp count.
    pub fn beta_sample(
        g: &mut Graph,
        alpha: Var,
        beta: Var,
        sampler: BetaSampler,
        rng: &mut RngStream,
    ) -> Result<(Var, usize)> {
        let a = g.value(alpha).clone();
        let b = g.value(beta).clone();
        if a.shape() != b.shape() {
            return Err(Error::contract("beta sample: α and β shapes differ"));
        }
        let params = BetaParams::new(a.data().to_vec(), b.data().to_vec())?;
        let draw = beta_sample_pathwise(&params, sampler, rng);
        let value = Tensor::new(a.rows(), a.cols(), draw.values)?;
        let v = g.elementwise(value, &[alpha, beta], vec![draw.d_alpha, draw.d_beta])?;
        Ok((v, draw.clamped))
    }

    /// Relaxed gate `b ~ BinaryConcrete(γ, τ)` for fixed uniform noise `u`.
    /// Entries with γ exactly 0 or 1 pass through unrelaxed.
    pub fn binary_concrete(g: &mut Graph, gate: Var, temperature: f64, u: &[f64]) -> Result<Var> {
        let gv = g.value(gate).clone();
        if u.len() != gv.len() {
            return Err(Error::contract("binary concrete: one uniform per gate entry"));
        }
        let mut values = Vec::with_capacity(gv.len());
        let mut partial = Vec::with_capacity(gv.len());
        for (&gamma, &ui) in gv.data().iter().zip(u) {
            let (b, d) = relaxed_gate(gamma, ui, temperature);
            values.push(b);
            partial.push(d);
        }
        let value = Tensor::new(gv.rows(), gv.cols(), values)?;
        g.elementwise(value, &[gate], vec![partial])
    }

    /// Relaxed Spike-and-Slab sample, drawing noise in the same order as
    /// [`super::spike_slab_sample`].
    pub fn spike_slab_sample(
        g: &mut Graph,
        gate: Var,
        mean: Var,
        std: Var,
        spike_std: f64,
        temperature: f64,
        rng: &mut RngStream,
    ) -> Result<Var> {
        let [r, c] = g.value(gate).shape();
        let n = r * c;
        let u = rng.uniforms(n);
        let eps = Tensor::new(r, c, rng.normals(n))?;
        let eta = Tensor::new(r, c, rng.normals(n))?;
        let b = binary_concrete(g, gate, temperature, &u)?;
        let eps = g.constant(eps);
        let noise = g.mul(std, eps)?;
        let slab = g.add(mean, noise)?;
        let spike = g.constant(eta.map(|e| e * spike_std));
        // z = slab + b ⊙ (spike − slab)
        let delta = g.sub(spike, slab)?;
        let mix = g.mul(b, delta)?;
        g.add(slab, mix)
    }

    /// Elementwise mixture log-density with a gate given per entry.
    ///
    /// `gate` must lie strictly inside (0, 1); degenerate mixtures are the
    /// caller's job (use [`gaussian_log_prob`] directly).
    pub fn spike_slab_log_prob(
        g: &mut Graph,
        z: Var,
        gate: Var,
        mean: Var,
        std: Var,
        spike_std: f64,
    ) -> Result<Var> {
        let slab = gaussian_log_prob(g, z, mean, std)?;
        let log_keep = {
            let keep = g.one_minus(gate);
            g.log(keep)
        };
        let slab = g.add(slab, log_keep)?;
        let z2 = g.mul(z, z)?;
        let spike = g.affine(z2, -0.5 / (spike_std * spike_std), -spike_std.ln() - HALF_LN_2PI);
        let log_gate = g.log(gate);
        let spike = g.add(spike, log_gate)?;
        g.log_add_exp(slab, spike)
    }

    /// Biased MMD² between rows of `x` and rows of `y`.
    pub fn mmd(g: &mut Graph, x: Var, y: Var, bandwidth: f64) -> Result<Var> {
        if !(bandwidth > 0.0) {
            return Err(Error::domain("mmd bandwidth must be positive"));
        }
        let c = -1.0 / (2.0 * bandwidth * bandwidth);
        let kernel_mean = |g: &mut Graph, a: Var, b: Var| -> Result<Var> {
            let d = g.sq_dist(a, b)?;
            let k = g.scale(d, c);
            let k = g.exp(k);
            Ok(g.mean(k))
        };
        let kxx = kernel_mean(g, x, x)?;
        let kyy = kernel_mean(g, y, y)?;
        let kxy = kernel_mean(g, x, y)?;
        let s = g.add(kxx, kyy)?;
        let kxy2 = g.scale(kxy, 2.0);
        g.sub(s, kxy2)
    }
}
