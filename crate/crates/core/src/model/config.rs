use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::distributions::{BetaSampler, DEFAULT_SPIKE_STD, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};

/// Model family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Vae,
    VaeL1,
    VaeL2,
    MatVae,
    Hsvae,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Vae, Variant::VaeL1, Variant::VaeL2, Variant::MatVae, Variant::Hsvae];

    /// Whether q(z|x) is a plain Gaussian (everything except HSVAE).
    pub fn gaussian_posterior(self) -> bool {
        self != Variant::Hsvae
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vae => "VAE",
            Variant::VaeL1 => "VAE_L1",
            Variant::VaeL2 => "VAE_L2",
            Variant::MatVae => "MATVAE",
            Variant::Hsvae => "HSVAE",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (VAE | VAE_L1 | VAE_L2 | MATVAE | HSVAE)")))
    }
}

/// Estimator for KL(q(z|x,γ) ‖ p(z|γ)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlEstimator {
    /// Component-paired closed form `Σ (1 − γ) KL(slab_q ‖ slab_p)`.
    Paired,
    /// `log q(z) − log p(z)` at one exact draw of z.
    MonteCarlo,
}

/// MAT-VAE's KL(q(z|x) ‖ p(z)) surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatKl {
    /// `log q(z) − log p(z)` at the reparameterised posterior sample.
    MonteCarlo,
    /// Closed-form KL against the slab N(0, 1) alone; exact only when the
    /// prior's spike weight is 0.
    Gaussian,
}

macro_rules! kv_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", stringify!($t), " '{}'"), other))),
                }
            }
        }
    };
}

kv_enum!(KlEstimator, Paired => "paired", MonteCarlo => "mc");
kv_enum!(MatKl, MonteCarlo => "mc", Gaussian => "gaussian");

/// Architecture and objective settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Weight on the z-KL term.
    pub psi: f64,
    /// Weight on the γ-KL term (HSVAE) or the MMD term (MAT-VAE).
    pub lambda: f64,
    /// z-draws per γ-draw.
    pub z_samples: usize,
    /// γ-draws.
    pub gamma_samples: usize,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub spike_std: f64,
    pub temperature: f64,
    /// L1/L2 penalty weight for VAE_L1 / VAE_L2.
    pub penalty_weight: f64,
    pub kl_estimator: KlEstimator,
    pub beta_sampler: BetaSampler,
    /// Spike weight of MAT-VAE's Spike-and-Slab prior.
    pub mat_prior_weight: f64,
    pub mat_kl: MatKl,
    /// Fixed RBF bandwidth for the MMD term; `None` uses the median heuristic.
    pub mmd_bandwidth: Option<f64>,
}

impl ModelConfig {
    /// Desk-scale defaults for `variant` over a vocabulary of `vocab_size`.
    pub fn new(variant: Variant, vocab_size: usize) -> Self {
        Self {
            variant,
            vocab_size,
            latent_dim: 16,
            hidden_dim: 64,
            embed_dim: 32,
            psi: 0.5,
            lambda: 0.5,
            z_samples: 1,
            gamma_samples: 1,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            spike_std: DEFAULT_SPIKE_STD,
            temperature: DEFAULT_TEMPERATURE,
            penalty_weight: 0.1,
            kl_estimator: KlEstimator::Paired,
            beta_sampler: BetaSampler::Gamma,
            mat_prior_weight: 0.5,
            mat_kl: MatKl::MonteCarlo,
            mmd_bandwidth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size <= crate::textdata::RESERVED.len() {
            return fail(format!("vocab_size must exceed the {} reserved ids", crate::textdata::RESERVED.len()));
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return fail("latent_dim, hidden_dim and embed_dim must be positive".into());
        }
        if !(self.psi >= 0.0 && self.lambda >= 0.0 && self.penalty_weight >= 0.0) {
            return fail("psi, lambda and penalty_weight must be non-negative".into());
        }
        if self.z_samples == 0 || self.gamma_samples == 0 {
            return fail("z_samples and gamma_samples must be at least 1".into());
        }
        if !(self.prior_alpha > 0.0 && self.prior_beta > 0.0) {
            return fail("prior_alpha and prior_beta must be positive".into());
        }
        if !(self.spike_std > 0.0 && self.temperature > 0.0) {
            return fail("spike_std and temperature must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mat_prior_weight) {
            return fail("mat_prior_weight must lie in [0, 1]".into());
        }
        if let Some(h) = self.mmd_bandwidth {
            if !(h > 0.0) {
                return fail("mmd_bandwidth must be positive".into());
            }
        }
        Ok(())
    }

    /// `key = value` pairs; [`ModelConfig::from_kv`] reads them back.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("psi", self.psi.to_string()),
            ("lambda", self.lambda.to_string()),
            ("z_samples", self.z_samples.to_string()),
            ("gamma_samples", self.gamma_samples.to_string()),
            ("alpha", self.prior_alpha.to_string()),
            ("beta", self.prior_beta.to_string()),
            ("spike_std", self.spike_std.to_string()),
            ("temperature", self.temperature.to_string()),
            ("penalty_weight", self.penalty_weight.to_string()),
            ("kl_estimator", self.kl_estimator.to_string()),
            ("beta_sampler", self.beta_sampler.to_string()),
            ("mat_prior_weight", self.mat_prior_weight.to_string()),
            ("mat_kl", self.mat_kl.to_string()),
            ("mmd_bandwidth", self.mmd_bandwidth.map_or_else(|| "median".to_string(), |h| h.to_string())),
        ]
    }

    pub const KEYS: [&'static str; 19] = [
        "variant",
        "vocab_size",
        "latent_dim",
        "hidden_dim",
        "embed_dim",
        "psi",
        "lambda",
        "z_samples",
        "gamma_samples",
        "alpha",
        "beta",
        "spike_std",
        "temperature",
        "penalty_weight",
        "kl_estimator",
        "beta_sampler",
        "mat_prior_weight",
        "mat_kl",
        "mmd_bandwidth",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = value.parse()?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "psi" => self.psi = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "z_samples" => self.z_samples = parse(key, value)?,
            "gamma_samples" => self.gamma_samples = parse(key, value)?,
            "alpha" => self.prior_alpha = parse(key, value)?,
            "beta" => self.prior_beta = parse(key, value)?,
            "spike_std" => self.spike_std = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "penalty_weight" => self.penalty_weight = parse(key, value)?,
            "kl_estimator" => self.kl_estimator = value.parse()?,
            "beta_sampler" => self.beta_sampler = value.parse()?,
            "mat_prior_weight" => self.mat_prior_weight = parse(key, value)?,
            "mat_kl" => self.mat_kl = value.parse()?,
            "mmd_bandwidth" => {
                self.mmd_bandwidth = if value == "median" { None } else { Some(parse(key, value)?) };
            }
            other => return Err(Error::Config(format!("unknown model key '{other}'"))),
        }
        Ok(())
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let variant = map.get("variant").ok_or_else(|| Error::Config("missing key 'variant'".into()))?.parse()?;
        let vocab = parse("vocab_size", map.get("vocab_size").ok_or_else(|| Error::Config("missing key 'vocab_size'".into()))?)?;
        let mut c = Self::new(variant, vocab);
        for (k, v) in map {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}
