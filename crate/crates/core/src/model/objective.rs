//! Training objectives of the model family.
//!
//! Every objective is the per-sentence average of
//! `reconstruction − ψ·kl_z − λ·(kl_gamma + mmd) − penalty`, where each term
//! is built by its own function below.

use serde::Serialize;

use super::config::{KlEstimator, MatKl, ModelConfig, Variant};
use super::network::{beta_head, encode_graph, gaussian_head, reconstruction_graph, slab_head, Batch, HEAD_FLOOR};
use super::params::{inv_softplus, Bound, ParameterStore};
use crate::diff::{Graph, RngStream, Tensor, Var};
use crate::distributions::{self as dist, graph as dg, GaussianParams, SpikeSlabParams};
use crate::error::{Error, Result};

/// Per-sentence averages of the objective's components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ElboTerms {
    /// Log-likelihood of the sentence (maximised).
    pub reconstruction: f64,
    pub kl_z: f64,
    /// KL(q(γ|x) ‖ p(γ)); zero outside HSVAE.
    pub kl_gamma: f64,
    /// MMD between aggregated posterior and prior; zero outside MAT-VAE.
    pub mmd: f64,
    pub penalty: f64,
    pub objective: f64,
}

impl ElboTerms {
    /// Recombines the components with the given weights.
    pub fn assembled(&self, weights: Weights) -> f64 {
        self.reconstruction - weights.psi * self.kl_z - weights.lambda * (self.kl_gamma + self.mmd) - self.penalty
    }

    pub fn is_finite(&self) -> bool {
        [self.reconstruction, self.kl_z, self.kl_gamma, self.mmd, self.penalty, self.objective].iter().all(|v| v.is_finite())
    }
}

/// KL weights in effect for one step (they may follow a schedule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights {
    pub psi: f64,
    pub lambda: f64,
}

impl Weights {
    pub fn of(config: &ModelConfig) -> Self {
        Self { psi: config.psi, lambda: config.lambda }
    }
}

/// Nodes and values of an objective built on some graph.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNode {
    /// `−objective`, averaged over the batch.
    pub loss: Var,
    pub terms: ElboTerms,
    /// Mean posterior gate mean `α/(α+β)` over batch and dimensions (HSVAE).
    pub gate_mean: Option<f64>,
    /// Beta samples clamped away from {0, 1}.
    pub clamped: usize,
}

/// A built objective graph, ready for `backward(loss)`.
pub struct Forward {
    pub graph: Graph,
    pub bound: Bound,
    pub loss: Var,
    pub terms: ElboTerms,
    /// Mean posterior gate mean `α/(α+β)` over batch and dimensions (HSVAE).
    pub gate_mean: Option<f64>,
    /// Beta samples clamped away from {0, 1}.
    pub clamped: usize,
}

// ---------------------------------------------------------------- terms

/// Σ log p(x | z) over the batch.
pub fn reconstruction_term(g: &mut Graph, p: &Bound, batch: &Batch, z: Var) -> Result<Var> {
    reconstruction_graph(g, p, batch, z)
}

/// Σ KL(N(μ, σ) ‖ N(0, 1)) over batch and dimensions.
pub fn gaussian_kl_term(g: &mut Graph, mean: Var, std: Var) -> Result<Var> {
    let kl = dg::gaussian_kl_standard(g, mean, std)?;
    Ok(g.sum(kl))
}

/// Σ (1 − γ) KL(N(μ, σ) ‖ N(0, 1)): the paired Spike-and-Slab bound.
pub fn spike_slab_kl_term(g: &mut Graph, gate: Var, mean: Var, std: Var) -> Result<Var> {
    let kl = dg::gaussian_kl_standard(g, mean, std)?;
    let keep = g.one_minus(gate);
    let w = g.mul(keep, kl)?;
    Ok(g.sum(w))
}

/// Σ [log q(z|γ) − log p(z|γ)] at one exact draw `z ~ q(z|γ)`.
///
/// The gate is drawn hard, so gradients reach γ only through the densities.
pub fn spike_slab_kl_mc_term(g: &mut Graph, gate: Var, mean: Var, std: Var, spike_std: f64, rng: &mut RngStream) -> Result<Var> {
    let gv = g.value(gate).clone();
    let [r, c] = gv.shape();
    let spike: Vec<f64> = gv.data().iter().map(|&p| if rng.bernoulli(p) { 1.0 } else { 0.0 }).collect();
    let eps = Tensor::new(r, c, rng.normals(r * c))?;
    let eta = Tensor::new(r, c, rng.normals(r * c))?;
    let eps = g.constant(eps);
    let noise = g.mul(std, eps)?;
    let slab = g.add(mean, noise)?;
    let keep = g.constant(Tensor::new(r, c, spike.iter().map(|b| 1.0 - b).collect())?);
    let slab = g.mul(slab, keep)?;
    let spike_part: Vec<f64> = spike.iter().zip(eta.data()).map(|(b, e)| b * spike_std * e).collect();
    let spike_part = g.constant(Tensor::new(r, c, spike_part)?);
    let z = g.add(slab, spike_part)?;
    let lq = dg::spike_slab_log_prob(g, z, gate, mean, std, spike_std)?;
    let zero = g.constant(Tensor::zeros(r, c));
    let one = g.constant(Tensor::full(r, c, 1.0));
    let lp = dg::spike_slab_log_prob(g, z, gate, zero, one, spike_std)?;
    let d = g.sub(lq, lp)?;
    Ok(g.sum(d))
}

/// Σ KL(Beta(α, β) ‖ Beta(α_p, β_p)).
pub fn gamma_kl_term(g: &mut Graph, alpha: Var, beta: Var, prior_alpha: f64, prior_beta: f64) -> Result<Var> {
    let kl = dg::beta_kl(g, alpha, beta, prior_alpha, prior_beta)?;
    Ok(g.sum(kl))
}

fn abs(g: &mut Graph, a: Var) -> Result<Var> {
    let v = g.value(a).clone();
    let sign: Vec<f64> = v.data().iter().map(|x| x.signum()).collect();
    g.elementwise(v.map(f64::abs), &[a], vec![sign])
}

/// `w·Σ(|μ| + |σ|)` for VAE_L1, `w·Σ(μ² + σ²)` for VAE_L2, `None` otherwise.
pub fn penalty_term(g: &mut Graph, variant: Variant, weight: f64, mean: Var, std: Var) -> Result<Option<Var>> {
    let (m, s) = match variant {
        Variant::VaeL1 => (abs(g, mean)?, abs(g, std)?),
        Variant::VaeL2 => (g.mul(mean, mean)?, g.mul(std, std)?),
        _ => return Ok(None),
    };
    let ms = g.sum(m);
    let ss = g.sum(s);
    let total = g.add(ms, ss)?;
    Ok(Some(g.scale(total, weight)))
}

/// Single-sample `Σ [log q(z) − log p(z)]` for a Gaussian q and MAT-VAE's
/// Spike-and-Slab prior with spike weight `w`.
fn mat_kl_mc(g: &mut Graph, z: Var, mean: Var, std: Var, w: f64, spike_std: f64) -> Result<Var> {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    let lq = dg::gaussian_log_prob(g, z, mean, std)?;
    let z2 = g.mul(z, z)?;
    let slab = |g: &mut Graph, shift: f64| g.affine(z2, -0.5, -HALF_LN_2PI + shift);
    let spike = |g: &mut Graph, shift: f64| g.affine(z2, -0.5 / (spike_std * spike_std), -spike_std.ln() - HALF_LN_2PI + shift);
    let lp = if w == 0.0 {
        slab(g, 0.0)
    } else if w == 1.0 {
        spike(g, 0.0)
    } else {
        let a = slab(g, (1.0 - w).ln());
        let b = spike(g, w.ln());
        g.log_add_exp(a, b)?
    };
    let d = g.sub(lq, lp)?;
    Ok(g.sum(d))
}

/// Biased MMD² between posterior draws `z` and prior draws.
pub fn mmd_term(g: &mut Graph, z: Var, prior: &Tensor, bandwidth: Option<f64>) -> Result<Var> {
    let h = match bandwidth {
        Some(h) => h,
        None => dist::median_heuristic(&g.value(z).to_rows(), &prior.to_rows()),
    };
    let y = g.constant(prior.clone());
    dg::mmd(g, z, y, h)
}

// ----------------------------------------------------------- objectives

fn scalar(g: &Graph, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| g.item(v))
}

struct Parts {
    rec: Var,
    kl_z: Var,
    kl_gamma: Option<Var>,
    mmd: Option<Var>,
    penalty: Option<Var>,
}

fn finish(g: &mut Graph, batch: &Batch, weights: Weights, parts: Parts, gate_mean: Option<f64>, clamped: usize) -> Result<ObjectiveNode> {
    let b = batch.size() as f64;
    // Sum-form objective; the MMD is a batch statistic so it is scaled by B.
    let mut obj = g.affine(parts.kl_z, -weights.psi, 0.0);
    obj = g.add(parts.rec, obj)?;
    if let Some(k) = parts.kl_gamma {
        let t = g.scale(k, -weights.lambda);
        obj = g.add(obj, t)?;
    }
    if let Some(m) = parts.mmd {
        let t = g.scale(m, -weights.lambda * b);
        obj = g.add(obj, t)?;
    }
    if let Some(p) = parts.penalty {
        obj = g.sub(obj, p)?;
    }
    let loss = g.scale(obj, -1.0 / b);
    g.check_finite()?;
    let terms = ElboTerms {
        reconstruction: g.item(parts.rec) / b,
        kl_z: g.item(parts.kl_z) / b,
        kl_gamma: scalar(g, parts.kl_gamma) / b,
        mmd: scalar(g, parts.mmd),
        penalty: scalar(g, parts.penalty) / b,
        objective: g.item(obj) / b,
    };
    Ok(ObjectiveNode { loss, terms, gate_mean, clamped })
}

fn mean_of(g: &mut Graph, acc: Vec<Var>) -> Result<Var> {
    let n = acc.len() as f64;
    let all = g.concat(&acc)?;
    let s = g.sum(all);
    Ok(g.scale(s, 1.0 / n))
}

fn hsvae_forward(g: &mut Graph, p: &Bound, config: &ModelConfig, batch: &Batch, weights: Weights, rng: &mut RngStream) -> Result<ObjectiveNode> {
    let feature = encode_graph(g, p, batch)?;
    let (alpha, beta) = beta_head(g, p, feature)?;
    let gate_mean = {
        let (a, b) = (g.value(alpha), g.value(beta));
        a.data().iter().zip(b.data()).map(|(a, b)| a / (a + b)).sum::<f64>() / a.len() as f64
    };
    let kl_gamma = gamma_kl_term(g, alpha, beta, config.prior_alpha, config.prior_beta)?;
    let mut recs = Vec::with_capacity(config.gamma_samples * config.z_samples);
    let mut kls = Vec::with_capacity(config.gamma_samples);
    let mut clamped = 0;
    for _ in 0..config.gamma_samples {
        let (gate, c) = dg::beta_sample(g, alpha, beta, config.beta_sampler, rng)?;
        clamped += c;
        let (mu, sigma) = slab_head(g, p, feature, gate)?;
        kls.push(match config.kl_estimator {
            KlEstimator::Paired => spike_slab_kl_term(g, gate, mu, sigma)?,
            KlEstimator::MonteCarlo => spike_slab_kl_mc_term(g, gate, mu, sigma, config.spike_std, rng)?,
        });
        for _ in 0..config.z_samples {
            let z = dg::spike_slab_sample(g, gate, mu, sigma, config.spike_std, config.temperature, rng)?;
            recs.push(reconstruction_term(g, p, batch, z)?);
        }
    }
    let rec = mean_of(g, recs)?;
    let kl_z = mean_of(g, kls)?;
    let parts = Parts { rec, kl_z, kl_gamma: Some(kl_gamma), mmd: None, penalty: None };
    finish(g, batch, weights, parts, Some(gate_mean), clamped)
}

fn gaussian_forward(g: &mut Graph, p: &Bound, config: &ModelConfig, batch: &Batch, weights: Weights, rng: &mut RngStream) -> Result<ObjectiveNode> {
    let mat = config.variant == Variant::MatVae;
    if mat && batch.size() < 2 {
        return Err(Error::contract("MAT-VAE needs a batch of at least 2 sentences for the MMD term"));
    }
    let feature = encode_graph(g, p, batch)?;
    let (mu, sigma) = gaussian_head(g, p, feature)?;
    let [b, d] = g.value(mu).shape();
    let mut recs = Vec::with_capacity(config.z_samples);
    let mut mc_kls = Vec::new();
    let mut first_z = None;
    for _ in 0..config.z_samples {
        let eps = g.constant(Tensor::new(b, d, rng.normals(b * d))?);
        let noise = g.mul(sigma, eps)?;
        let z = g.add(mu, noise)?;
        first_z.get_or_insert(z);
        recs.push(reconstruction_term(g, p, batch, z)?);
        if mat && config.mat_kl == MatKl::MonteCarlo {
            mc_kls.push(mat_kl_mc(g, z, mu, sigma, config.mat_prior_weight, config.spike_std)?);
        }
    }
    let rec = mean_of(g, recs)?;
    let kl_z = if mc_kls.is_empty() { gaussian_kl_term(g, mu, sigma)? } else { mean_of(g, mc_kls)? };
    let mmd = if mat {
        let prior = SpikeSlabParams::new(vec![config.mat_prior_weight; d], GaussianParams::standard(d), config.spike_std)?;
        let rows: Vec<Vec<f64>> = (0..b).map(|_| dist::spike_slab_sample_exact(&prior, rng)).collect();
        Some(mmd_term(g, first_z.expect("z_samples ≥ 1"), &Tensor::from_rows(&rows)?, config.mmd_bandwidth)?)
    } else {
        None
    };
    let penalty = penalty_term(g, config.variant, config.penalty_weight, mu, sigma)?;
    finish(g, batch, weights, Parts { rec, kl_z, kl_gamma: None, mmd, penalty }, None, 0)
}

/// Builds the variant's objective over `batch`, with every parameter for
/// which `trainable` holds tracked.
pub fn forward_with(
    store: &ParameterStore,
    config: &ModelConfig,
    batch: &Batch,
    weights: Weights,
    rng: &mut RngStream,
    trainable: impl Fn(&str) -> bool,
) -> Result<Forward> {
    let mut g = Graph::new();
    let p = store.bind_with(&mut g, trainable);
    forward_bound(g, p, config, batch, weights, rng)
}

/// Builds the objective on an existing graph and binding.
pub fn objective_graph(g: &mut Graph, p: &Bound, config: &ModelConfig, batch: &Batch, weights: Weights, rng: &mut RngStream) -> Result<ObjectiveNode> {
    match config.variant {
        Variant::Hsvae => hsvae_forward(g, p, config, batch, weights, rng),
        _ => gaussian_forward(g, p, config, batch, weights, rng),
    }
}

fn forward_bound(mut g: Graph, p: Bound, config: &ModelConfig, batch: &Batch, weights: Weights, rng: &mut RngStream) -> Result<Forward> {
    let n = objective_graph(&mut g, &p, config, batch, weights, rng)?;
    Ok(Forward { graph: g, bound: p, loss: n.loss, terms: n.terms, gate_mean: n.gate_mean, clamped: n.clamped })
}

pub fn forward(store: &ParameterStore, config: &ModelConfig, batch: &Batch, weights: Weights, rng: &mut RngStream) -> Result<Forward> {
    forward_with(store, config, batch, weights, rng, |_| true)
}

fn terms_for(store: &ParameterStore, config: &ModelConfig, seqs: &[Vec<usize>], rng: &mut RngStream, ok: &[Variant]) -> Result<ElboTerms> {
    if !ok.contains(&config.variant) {
        return Err(Error::contract(format!("objective does not apply to variant {}", config.variant)));
    }
    let batch = Batch::new(seqs)?;
    let mut g = Graph::new();
    let p = store.bind_with(&mut g, |_| false);
    Ok(forward_bound(g, p, config, &batch, Weights::of(config), rng)?.terms)
}

/// HSVAE objective terms for a batch of sentences.
pub fn hsvae_elbo(store: &ParameterStore, config: &ModelConfig, seqs: &[Vec<usize>], rng: &mut RngStream) -> Result<ElboTerms> {
    terms_for(store, config, seqs, rng, &[Variant::Hsvae])
}

/// VAE / VAE_L1 / VAE_L2 objective terms.
pub fn vae_elbo(store: &ParameterStore, config: &ModelConfig, seqs: &[Vec<usize>], rng: &mut RngStream) -> Result<ElboTerms> {
    terms_for(store, config, seqs, rng, &[Variant::Vae, Variant::VaeL1, Variant::VaeL2])
}

/// MAT-VAE objective terms; needs at least two sentences.
pub fn matvae_objective(store: &ParameterStore, config: &ModelConfig, seqs: &[Vec<usize>], rng: &mut RngStream) -> Result<ElboTerms> {
    terms_for(store, config, seqs, rng, &[Variant::MatVae])
}

/// Sets the posterior heads' output layers so every posterior equals the prior:
/// Beta(α_p, β_p) over γ and N(0, 1) for the (slab) Gaussian.
pub fn pin_posterior_to_prior(store: &mut ParameterStore, config: &ModelConfig) -> Result<()> {
    let d = config.latent_dim;
    let mut set = |name: &str, first: f64, second: f64| -> Result<()> {
        store.get_mut(&format!("{name}.w2"))?.data_mut().fill(0.0);
        let b = store.get_mut(&format!("{name}.b2"))?.data_mut();
        b[..d].fill(first);
        b[d..].fill(second);
        Ok(())
    };
    let unit = inv_softplus(1.0 - HEAD_FLOOR);
    if config.variant == Variant::Hsvae {
        set("beta", inv_softplus(config.prior_alpha - HEAD_FLOOR), inv_softplus(config.prior_beta - HEAD_FLOOR))?;
        set("slab", 0.0, unit)
    } else {
        set("gauss", 0.0, unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny(variant: Variant) -> (ModelConfig, ParameterStore) {
        let mut c = ModelConfig::new(variant, 12);
        c.latent_dim = 4;
        c.hidden_dim = 6;
        c.embed_dim = 3;
        let s = ParameterStore::init(&c, &mut RngStream::new(11)).unwrap();
        (c, s)
    }

    fn seqs() -> Vec<Vec<usize>> {
        vec![vec![3, 4, 5], vec![6, 7], vec![8, 9, 10, 11]]
    }

    #[test]
    fn pinned_posterior_has_zero_kl() {
        for variant in [Variant::Hsvae, Variant::Vae] {
            let (mut c, mut s) = tiny(variant);
            c.prior_alpha = 8.0;
            c.prior_beta = 2.0;
            pin_posterior_to_prior(&mut s, &c).unwrap();
            let t = forward(&s, &c, &Batch::new(&seqs()).unwrap(), Weights::of(&c), &mut RngStream::new(1)).unwrap().terms;
            assert!(t.kl_z.abs() < 1e-6, "{variant}: {t:?}");
            assert!(t.kl_gamma.abs() < 1e-6, "{variant}: {t:?}");
        }
    }

    #[test]
    fn zero_weights_leave_reconstruction() {
        for variant in Variant::ALL {
            let (mut c, s) = tiny(variant);
            c.psi = 0.0;
            c.lambda = 0.0;
            c.penalty_weight = 0.0;
            let t = forward(&s, &c, &Batch::new(&seqs()).unwrap(), Weights::of(&c), &mut RngStream::new(2)).unwrap().terms;
            assert_eq!(t.objective, t.reconstruction, "{variant}");
        }
    }

    #[test]
    fn decomposition_sums_to_objective() {
        for variant in Variant::ALL {
            let (c, s) = tiny(variant);
            let t = forward(&s, &c, &Batch::new(&seqs()).unwrap(), Weights::of(&c), &mut RngStream::new(3)).unwrap().terms;
            assert!(t.is_finite());
            assert_abs_diff_eq!(t.assembled(Weights::of(&c)), t.objective, epsilon = 1e-12 * t.objective.abs().max(1.0));
        }
    }

    #[test]
    fn penalty_arithmetic() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::row_vector(vec![1.0, -1.0]).unwrap());
        let sd = g.constant(Tensor::row_vector(vec![1.0, 1.0]).unwrap());
        let l2 = penalty_term(&mut g, Variant::VaeL2, 0.1, mu, sd).unwrap().unwrap();
        assert_abs_diff_eq!(g.item(l2), 0.4, epsilon = 1e-15);
        let l1 = penalty_term(&mut g, Variant::VaeL1, 0.1, mu, sd).unwrap().unwrap();
        assert_abs_diff_eq!(g.item(l1), 0.4, epsilon = 1e-15);
        let zero = g.constant(Tensor::zeros(1, 2));
        let l1 = penalty_term(&mut g, Variant::VaeL1, 0.1, zero, zero).unwrap().unwrap();
        assert_eq!(g.item(l1), 0.0);
        assert!(penalty_term(&mut g, Variant::Vae, 0.1, mu, sd).unwrap().is_none());
    }

    #[test]
    fn matvae_degenerate_prior_matches_vae() {
        let (mut c, s) = tiny(Variant::MatVae);
        c.lambda = 0.0;
        c.mat_prior_weight = 0.0;
        c.mat_kl = MatKl::Gaussian;
        let mat = matvae_objective(&s, &c, &seqs(), &mut RngStream::new(5)).unwrap();
        let mut vc = c.clone();
        vc.variant = Variant::Vae;
        let vae = vae_elbo(&s, &vc, &seqs(), &mut RngStream::new(5)).unwrap();
        assert!((mat.objective - vae.objective).abs() < 1e-6, "{mat:?} vs {vae:?}");
        assert!(mat.mmd >= 0.0);
    }

    #[test]
    fn matvae_needs_two_sentences() {
        let (c, s) = tiny(Variant::MatVae);
        assert!(matches!(matvae_objective(&s, &c, &[vec![3, 4]], &mut RngStream::new(5)), Err(Error::Contract(_))));
        assert!(matches!(vae_elbo(&s, &c, &seqs(), &mut RngStream::new(5)), Err(Error::Contract(_))));
    }

    #[test]
    fn hsvae_objective_standard_error_is_small() {
        let (c, s) = tiny(Variant::Hsvae);
        let root = RngStream::new(17);
        let draws: Vec<f64> =
            (0..200).map(|i| hsvae_elbo(&s, &c, &seqs(), &mut root.derive(9, i)).unwrap().objective).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(se < 0.05 * mean.abs(), "se {se} mean {mean}");
    }

    #[test]
    fn mc_kl_is_consistent_with_paired_bound() {
        let (mut c, s) = tiny(Variant::Hsvae);
        let root = RngStream::new(23);
        let run = |c: &ModelConfig, i: u32| hsvae_elbo(&s, c, &seqs(), &mut root.derive(10, i)).unwrap().kl_z;
        let n = 10_000;
        let paired: Vec<f64> = (0..n).map(|i| run(&c, i)).collect();
        c.kl_estimator = KlEstimator::MonteCarlo;
        let mc: Vec<f64> = (0..n).map(|i| run(&c, i)).collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, (var / v.len() as f64).sqrt())
        };
        let (pm, pse) = stats(&paired);
        let (mm, mse) = stats(&mc);
        assert!(mm <= pm + 3.0 * (mse * mse + pse * pse).sqrt(), "mc {mm}±{mse} vs paired {pm}±{pse}");
    }

    #[test]
    fn matvae_mmd_vanishes_when_posterior_is_the_prior() {
        // Posterior draws taken from the prior itself: the MMD term is only sampling noise.
        let d = 4;
        let prior = SpikeSlabParams::new(vec![0.5; d], GaussianParams::standard(d), 0.01).unwrap();
        let mut values = Vec::new();
        for seed in 0..10 {
            let mut rng = RngStream::new(seed);
            let x: Vec<Vec<f64>> = (0..200).map(|_| dist::spike_slab_sample_exact(&prior, &mut rng)).collect();
            let y: Vec<Vec<f64>> = (0..200).map(|_| dist::spike_slab_sample_exact(&prior, &mut rng)).collect();
            let mut g = Graph::new();
            let xv = g.param(Tensor::from_rows(&x).unwrap());
            let m = mmd_term(&mut g, xv, &Tensor::from_rows(&y).unwrap(), None).unwrap();
            values.push(g.item(m));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // V-statistic bias is O(1/n); 200 + 200 draws keep it well under 0.05.
        assert!(mean < 0.05, "{values:?}");
    }
}
