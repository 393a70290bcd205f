//! The model family: VAE, VAE_L1, VAE_L2, MAT-VAE and HSVAE.

mod checkpoint;
mod config;
mod network;
mod objective;
mod params;
mod posterior;

pub use checkpoint::{load_model, save_model, Checkpoint, HEADER as CHECKPOINT_HEADER};
pub use config::{KlEstimator, MatKl, ModelConfig, Variant};
pub use network::{
    beta_head, decode, decode_logits_graph, encode, encode_graph, gaussian_head, generate, reconstruction_graph, reconstruction_loglik,
    slab_head, targets, Batch, BETA_CAP, HEAD_FLOOR,
};
pub use objective::{
    forward, forward_with, gamma_kl_term, gaussian_kl_term, hsvae_elbo, matvae_objective, mmd_term, objective_graph,
    penalty_term, pin_posterior_to_prior, reconstruction_term, spike_slab_kl_mc_term, spike_slab_kl_term, vae_elbo, ElboTerms,
    Forward, ObjectiveNode, Weights,
};
pub(crate) use config::parse as parse_value;
pub use params::{is_encoder_param, Bound, ParameterStore};
pub use posterior::{codes_from_features, features, gate_means, hsvae_posterior, latent_codes, prior_sample, CodeMode, HsvaePosterior, LatentCode};

use crate::diff::{RngStream, Tensor};
use crate::distributions::{graph as dg, BetaSampler};
use crate::error::Result;
use crate::gradcheck::{case, check_graph, GradCase};

fn tiny_hsvae(seed: u64) -> Result<(ModelConfig, ParameterStore)> {
    let mut c = ModelConfig::new(Variant::Hsvae, 8);
    c.embed_dim = 3;
    c.hidden_dim = 4;
    c.latent_dim = 4;
    c.beta_sampler = BetaSampler::InverseCdf;
    let s = ParameterStore::init(&c, &mut RngStream::new(seed))?;
    Ok((c, s))
}

/// Full-model gradient checks: the HSVAE objective on a 3-token sentence
/// with respect to every parameter, and a sampled z with respect to the
/// Beta head alone.
pub(crate) fn gradcheck_cases(seed: u64) -> Result<Vec<GradCase>> {
    let (config, store) = tiny_hsvae(seed)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| store.get(n).cloned()).collect::<Result<_>>()?;
    let batch = Batch::new(&[vec![3usize, 5, 7]])?;
    let draw_seed = seed ^ 0xE1B0;
    let elbo = check_graph(
        &inputs,
        |g, v| {
            let p = store.bind_with(g, |_| false).with_overrides(names.iter().cloned().zip(v.iter().copied()));
            let n = objective_graph(g, &p, &config, &batch, Weights::of(&config), &mut RngStream::new(draw_seed))?;
            Ok(n.loss)
        },
        1e-5,
    );
    let head: Vec<String> = names.iter().filter(|n| n.starts_with("beta.")).cloned().collect();
    let head_inputs: Vec<Tensor> = head.iter().map(|n| store.get(n).cloned()).collect::<Result<_>>()?;
    let z_of_beta = check_graph(
        &head_inputs,
        |g, v| {
            let p = store.bind_with(g, |_| false).with_overrides(head.iter().cloned().zip(v.iter().copied()));
            let mut rng = RngStream::new(draw_seed);
            let f = encode_graph(g, &p, &batch)?;
            let (a, b) = beta_head(g, &p, f)?;
            let (gate, _) = dg::beta_sample(g, a, b, config.beta_sampler, &mut rng)?;
            let (mu, sd) = slab_head(g, &p, f, gate)?;
            let z = dg::spike_slab_sample(g, gate, mu, sd, config.spike_std, config.temperature, &mut rng)?;
            let z2 = g.mul(z, z)?;
            Ok(g.sum(z2))
        },
        1e-5,
    );
    Ok(vec![case("hsvae_elbo_full", 1e-3, elbo)?, case("beta_head_to_z", 1e-3, z_of_beta)?])
}
