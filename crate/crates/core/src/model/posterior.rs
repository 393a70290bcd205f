//! Value-level access to the approximate posterior: features, gate means and
//! latent codes for a frozen model.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::config::ModelConfig;
use super::network::{beta_head, encode_graph, gaussian_head, slab_head, Batch};
use super::params::ParameterStore;
use crate::diff::{Graph, RngStream, Tensor};
use super::config::Variant;
use crate::distributions::{beta_sample_pathwise, spike_slab_sample_exact, BetaParams, GaussianParams, SpikeSlabParams};
use crate::error::{Error, Result};

/// Sentences encoded per graph when extracting codes.
const CHUNK: usize = 64;

/// One sentence's latent code; `gamma` is the gate draw (HSVAE only).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
}

/// How a code is read off the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeMode {
    /// Gaussian: μ. HSVAE: `(1 − γ̄) ⊙ μ(x, γ̄)` with `γ̄ = α/(α+β)`.
    PosteriorMean,
    /// One exact draw: γ ~ Beta, b ~ Bernoulli(γ), z from spike or slab.
    PosteriorSample,
}

impl fmt::Display for CodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeMode::PosteriorMean => "posterior-mean",
            CodeMode::PosteriorSample => "posterior-sample",
        })
    }
}

impl FromStr for CodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior-mean" | "mean" => Ok(CodeMode::PosteriorMean),
            "posterior-sample" | "sample" => Ok(CodeMode::PosteriorSample),
            _ => Err(Error::Config(format!("unknown code mode '{s}' (posterior-mean | posterior-sample)"))),
        }
    }
}

/// HSVAE posterior for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvaePosterior {
    pub gate: BetaParams,
    /// Pathwise γ draw.
    pub gamma: Vec<f64>,
    /// q(z | γ, x) at the drawn γ.
    pub z: SpikeSlabParams,
}

fn rows_of(seqs_len: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..seqs_len).step_by(CHUNK).map(move |s| s..(s + CHUNK).min(seqs_len))
}

/// Final encoder states, one row per sentence.
pub fn features<S: AsRef<[usize]>>(store: &ParameterStore, seqs: &[S]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for r in rows_of(seqs.len()) {
        let batch = Batch::new(&seqs[r])?;
        let mut g = Graph::new();
        let p = store.bind_with(&mut g, |_| false);
        let h = encode_graph(&mut g, &p, &batch)?;
        g.check_finite()?;
        out.extend(g.value(h).to_rows());
    }
    Ok(out)
}

fn need_hsvae(config: &ModelConfig) -> Result<()> {
    if config.variant.gaussian_posterior() {
        return Err(Error::contract(format!("{} has no gate posterior", config.variant)));
    }
    Ok(())
}

/// Beta parameters `(α, β)` of q(γ | x) for each feature row.
fn beta_params(store: &ParameterStore, feats: &[Vec<f64>]) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let p = store.bind_with(&mut g, |_| false);
    let f = g.constant(Tensor::from_rows(feats)?);
    let (a, b) = beta_head(&mut g, &p, f)?;
    g.check_finite()?;
    Ok((g.value(a).clone(), g.value(b).clone()))
}

/// Slab `(μ, σ)` at gates `gamma`.
fn slab_params(store: &ParameterStore, feats: &[Vec<f64>], gamma: Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let p = store.bind_with(&mut g, |_| false);
    let f = g.constant(Tensor::from_rows(feats)?);
    let gv = g.constant(gamma);
    let (m, s) = slab_head(&mut g, &p, f, gv)?;
    g.check_finite()?;
    Ok((g.value(m).clone(), g.value(s).clone()))
}

fn gaussian_params(store: &ParameterStore, feats: &[Vec<f64>]) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let p = store.bind_with(&mut g, |_| false);
    let f = g.constant(Tensor::from_rows(feats)?);
    let (m, s) = gaussian_head(&mut g, &p, f)?;
    g.check_finite()?;
    Ok((g.value(m).clone(), g.value(s).clone()))
}

fn gate_mean_tensor(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(a, b)| a / (a + b)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

/// Pathwise Beta draws, row by row.
fn draw_gates(config: &ModelConfig, a: &Tensor, b: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
    let params = BetaParams::new(a.data().to_vec(), b.data().to_vec())?;
    let draw = beta_sample_pathwise(&params, config.beta_sampler, rng);
    Tensor::new(a.rows(), a.cols(), draw.values)
}

/// q(γ | x), a pathwise γ draw and q(z | γ, x) for one encoder feature.
pub fn hsvae_posterior(store: &ParameterStore, config: &ModelConfig, feature: &[f64], rng: &mut RngStream) -> Result<HsvaePosterior> {
    need_hsvae(config)?;
    let feats = [feature.to_vec()];
    let (a, b) = beta_params(store, &feats)?;
    let gamma = draw_gates(config, &a, &b, rng)?;
    let (m, s) = slab_params(store, &feats, gamma.clone())?;
    Ok(HsvaePosterior {
        gate: BetaParams::new(a.into_data(), b.into_data())?,
        gamma: gamma.data().to_vec(),
        z: SpikeSlabParams::new(gamma.into_data(), GaussianParams::new(m.into_data(), s.into_data())?, config.spike_std)?,
    })
}

/// Posterior gate means `α/(α+β)`, one row per sentence.
pub fn gate_means<S: AsRef<[usize]>>(store: &ParameterStore, config: &ModelConfig, seqs: &[S]) -> Result<Vec<Vec<f64>>> {
    need_hsvae(config)?;
    let feats = features(store, seqs)?;
    let mut out = Vec::with_capacity(seqs.len());
    for r in rows_of(feats.len()) {
        let (a, b) = beta_params(store, &feats[r])?;
        out.extend(gate_mean_tensor(&a, &b).to_rows());
    }
    Ok(out)
}

/// Codes for precomputed features; `rng` is used only in sample mode.
pub fn codes_from_features(
    store: &ParameterStore,
    config: &ModelConfig,
    feats: &[Vec<f64>],
    mode: CodeMode,
    rng: &mut RngStream,
) -> Result<Vec<LatentCode>> {
    let mut out = Vec::with_capacity(feats.len());
    for r in rows_of(feats.len()) {
        let chunk = &feats[r];
        if config.variant.gaussian_posterior() {
            let (m, s) = gaussian_params(store, chunk)?;
            for i in 0..m.rows() {
                let z = match mode {
                    CodeMode::PosteriorMean => m.row(i).to_vec(),
                    CodeMode::PosteriorSample => m.row(i).iter().zip(s.row(i)).map(|(m, s)| m + s * rng.normal()).collect(),
                };
                out.push(LatentCode { z, gamma: None });
            }
            continue;
        }
        let (a, b) = beta_params(store, chunk)?;
        let gamma = match mode {
            CodeMode::PosteriorMean => gate_mean_tensor(&a, &b),
            CodeMode::PosteriorSample => draw_gates(config, &a, &b, rng)?,
        };
        let (m, s) = slab_params(store, chunk, gamma.clone())?;
        for i in 0..m.rows() {
            let gi = gamma.row(i);
            let z = match mode {
                CodeMode::PosteriorMean => gi.iter().zip(m.row(i)).map(|(g, m)| (1.0 - g) * m).collect(),
                CodeMode::PosteriorSample => {
                    let mut z = Vec::with_capacity(gi.len());
                    for ((&g, &m), &s) in gi.iter().zip(m.row(i)).zip(s.row(i)) {
                        let spike = rng.bernoulli(g);
                        let e = rng.normal();
                        z.push(if spike { config.spike_std * e } else { m + s * e });
                    }
                    z
                }
            };
            out.push(LatentCode { z, gamma: Some(gi.to_vec()) });
        }
    }
    if out.iter().any(|c| c.z.iter().any(|v| !v.is_finite())) {
        return Err(Error::numeric("non-finite latent code"));
    }
    Ok(out)
}

/// One draw from the variant's prior over z: N(0, I) for the Gaussian
/// family, Spike-and-Slab for MAT-VAE (fixed spike weight) and HSVAE
/// (gates from the Beta prior).
pub fn prior_sample(config: &ModelConfig, rng: &mut RngStream) -> Result<Vec<f64>> {
    let d = config.latent_dim;
    let gate = match config.variant {
        Variant::Hsvae => {
            let prior = BetaParams::constant(config.prior_alpha, config.prior_beta, d)?;
            beta_sample_pathwise(&prior, config.beta_sampler, rng).values
        }
        Variant::MatVae => vec![config.mat_prior_weight; d],
        _ => return Ok(rng.normals(d)),
    };
    let p = SpikeSlabParams::new(gate, GaussianParams::standard(d), config.spike_std)?;
    Ok(spike_slab_sample_exact(&p, rng))
}

/// One code per sentence.
pub fn latent_codes<S: AsRef<[usize]>>(
    store: &ParameterStore,
    config: &ModelConfig,
    seqs: &[S],
    mode: CodeMode,
    rng: &mut RngStream,
) -> Result<Vec<LatentCode>> {
    codes_from_features(store, config, &features(store, seqs)?, mode, rng)
}
