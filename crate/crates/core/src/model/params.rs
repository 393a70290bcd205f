use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::config::ModelConfig;
use crate::diff::{Graph, GruVars, RngStream, Tensor, Var};
use crate::error::{Error, Result};

/// Inverse of softplus, for biases that should start at a given positive output.
pub(crate) fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Zeros,
    Const(f64),
}

/// Names and shapes of every parameter for `config`, with their initialisers.
fn layout(config: &ModelConfig) -> Vec<(String, [usize; 2], Init)> {
    let (v, e, h, d) = (config.vocab_size, config.embed_dim, config.hidden_dim, config.latent_dim);
    let gru = |k: f64| Init::Uniform(k);
    let k_h = 1.0 / (h as f64).sqrt();
    let mut out = vec![
        ("embedding".to_string(), [v, e], Init::Uniform(0.1)),
        ("enc.w_ih".to_string(), [e, 3 * h], gru(k_h)),
        ("enc.w_hh".to_string(), [h, 3 * h], gru(k_h)),
        ("enc.b_ih".to_string(), [1, 3 * h], gru(k_h)),
        ("enc.b_hh".to_string(), [1, 3 * h], gru(k_h)),
        ("dec.w_ih".to_string(), [e + d, 3 * h], gru(k_h)),
        ("dec.w_hh".to_string(), [h, 3 * h], gru(k_h)),
        ("dec.b_ih".to_string(), [1, 3 * h], gru(k_h)),
        ("dec.b_hh".to_string(), [1, 3 * h], gru(k_h)),
        ("out.w".to_string(), [h, v], Init::Uniform(k_h)),
        ("out.b".to_string(), [1, v], Init::Zeros),
    ];
    let mut head = |name: &str, input: usize, positive_bias: f64| {
        let k_in = 1.0 / (input as f64).sqrt();
        out.push((format!("{name}.w1"), [input, h], Init::Uniform(k_in)));
        out.push((format!("{name}.b1"), [1, h], Init::Zeros));
        out.push((format!("{name}.w2"), [h, 2 * d], Init::Uniform(k_h)));
        out.push((format!("{name}.b2"), [1, 2 * d], Init::Const(positive_bias)));
    };
    // Output biases start every positive head output at 1 (μ heads are reset below).
    let one = inv_softplus(1.0);
    if config.variant.gaussian_posterior() {
        head("gauss", h, one);
    } else {
        head("beta", h, one);
        head("slab", h + d, one);
    }
    out
}

/// Named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    /// Fresh parameters for `config`.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let mut tensors = BTreeMap::new();
        for (name, [r, c], init) in layout(config) {
            let mut t = match init {
                Init::Zeros => Tensor::zeros(r, c),
                Init::Const(x) => Tensor::full(r, c, x),
                Init::Uniform(k) => Tensor::new(r, c, rng.uniforms(r * c).into_iter().map(|u| k * (2.0 * u - 1.0)).collect())?,
            };
            // The first D outputs of Gaussian/slab heads are means; start them at 0.
            if (name == "gauss.b2" || name == "slab.b2") && c == 2 * d {
                t.data_mut()[..d].fill(0.0);
            }
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    /// Wraps existing tensors and checks them against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let store = Self { tensors };
        store.check_shapes(config)?;
        Ok(store)
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = layout(config);
        if expected.len() != self.tensors.len() {
            let names: Vec<&str> = self.tensors.keys().map(String::as_str).collect();
            return Err(Error::contract(format!("expected {} parameters for {}, found {names:?}", expected.len(), config.variant)));
        }
        for (name, shape, _) in expected {
            let t = self.get(&name)?;
            if t.shape() != shape {
                return Err(Error::contract(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::contract(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::contract(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    /// Hash of all names and exact value bits; any change to any value changes it.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in &self.tensors {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Loads every tensor into `g` as a tracked parameter.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.bind_with(g, |_| true)
    }

    /// Loads tensors into `g`; those for which `trainable` is false become constants.
    pub fn bind_with(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) { g.param(t.clone()) } else { g.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Graph handles of a bound [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::contract(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Replaces the handles of the named parameters.
    pub fn with_overrides(mut self, overrides: impl IntoIterator<Item = (String, Var)>) -> Self {
        self.vars.extend(overrides);
        self
    }

    pub(crate) fn gru(&self, prefix: &str) -> Result<GruVars> {
        Ok(GruVars {
            w_ih: self.var(&format!("{prefix}.w_ih"))?,
            w_hh: self.var(&format!("{prefix}.w_hh"))?,
            b_ih: self.var(&format!("{prefix}.b_ih"))?,
            b_hh: self.var(&format!("{prefix}.b_hh"))?,
        })
    }
}

/// Names of encoder-side parameters: embedding, encoder GRU and posterior heads.
pub fn is_encoder_param(name: &str) -> bool {
    name == "embedding" || ["enc.", "gauss.", "beta.", "slab."].iter().any(|p| name.starts_with(p))
}
