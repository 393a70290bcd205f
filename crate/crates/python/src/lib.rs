//! Python bindings: corpora, model configuration, training, latent codes and
//! the evaluation suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use hsvae::analysis;
use hsvae::classify::{self, ClassifierConfig};
use hsvae::diff::RngStream;
use hsvae::metrics;
use hsvae::model::{self, Checkpoint, CodeMode, ParameterStore, Variant};
use hsvae::textdata::{self, LabeledCorpus, SynthSpec, Vocab};
use hsvae::training::{Adam, FitOutputs, TrainConfig, Trainer};

fn err(e: hsvae::Error) -> PyErr {
    match e {
        hsvae::Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        hsvae::Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hsvae::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

/// Converts any serialisable record into plain Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn code_mode(mode: &str) -> PyResult<CodeMode> {
    mode.parse().map_err(|e: hsvae::Error| PyValueError::new_err(e.to_string()))
}

/// Encoded sentences with optional labels and their vocabulary.
#[pyclass(name = "Corpus", module = "hsvae_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: LabeledCorpus,
}

#[pymethods]
impl PyCorpus {
    /// Reads `label<TAB>sentence` lines (or bare sentences with
    /// `labeled=False`), encoding with the vocabulary at `vocab` or one built
    /// from the file.
    #[staticmethod]
    #[pyo3(signature = (path, labeled=true, vocab=None, vocab_cap=textdata::DEFAULT_VOCAB_CAP))]
    fn from_file(path: PathBuf, labeled: bool, vocab: Option<PathBuf>, vocab_cap: usize) -> PyResult<Self> {
        let vocab = vocab.map(|p| Vocab::load(&p)).transpose().py()?;
        let (inner, _, _) = textdata::load_corpus(&path, labeled, vocab, vocab_cap).py()?;
        Ok(Self { inner })
    }

    /// Synthetic labeled corpus: per-class Zipf word pools plus a shared pool
    /// drawn with probability `shared_fraction`.
    #[staticmethod]
    #[pyo3(signature = (classes=2, sentences_per_class=1000, shared_fraction=0.0, class_vocab=80, shared_vocab=40, min_len=5, max_len=12, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        classes: usize,
        sentences_per_class: usize,
        shared_fraction: f64,
        class_vocab: usize,
        shared_vocab: usize,
        min_len: usize,
        max_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = SynthSpec { num_classes: classes, class_vocab, shared_vocab, shared_fraction, min_len, max_len, sentences_per_class, seed };
        Ok(Self { inner: textdata::synth_generate(&spec).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn sentences(&self) -> Vec<Vec<usize>> {
        self.inner.sentences.clone()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    fn decode(&self, ids: Vec<usize>) -> PyResult<Vec<String>> {
        self.inner.vocab.decode(&ids).py()
    }

    fn save_vocab(&self, path: PathBuf) -> PyResult<()> {
        self.inner.vocab.save(&path).py()
    }

    /// Disjoint per-class `(train, valid, test)` splits.
    fn split(&self, train_per_class: usize, eval_per_class: usize, seed: u64) -> PyResult<(Self, Self, Self)> {
        let s = textdata::split_per_class(&self.inner, train_per_class, eval_per_class, seed).py()?;
        Ok((Self { inner: s.train }, Self { inner: s.valid }, Self { inner: s.test }))
    }

    /// Copy with labels permuted by `seed`.
    fn shuffled_labels(&self, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.shuffled_labels(&mut RngStream::new(seed)).py()? })
    }

    /// Mean off-diagonal and full matrix of pairwise class unigram KL.
    fn class_kl<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = analysis::class_kl_matrix(&self.inner).py()?;
        let d = to_py(py, &m)?;
        d.set_item("mean_off_diagonal", m.mean_off_diagonal())?;
        Ok(d)
    }
}

/// Architecture and objective settings.
#[pyclass(name = "ModelConfig", module = "hsvae_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// `variant` is one of VAE, VAE_L1, VAE_L2, MATVAE, HSVAE; further
    /// settings are config keys such as `latent_dim=16, alpha=8, beta=2`.
    #[new]
    #[pyo3(signature = (variant, vocab_size, **settings))]
    fn new(variant: &str, vocab_size: usize, settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = model::ModelConfig::new(variant.parse().py()?, vocab_size);
        if let Some(s) = settings {
            for (k, v) in s.iter() {
                let key: String = k.extract()?;
                inner.set(&key, &v.str()?.to_string()).py()?;
            }
        }
        inner.validate().py()?;
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, &value.str()?.to_string()).py()?;
        next.validate().py()?;
        self.inner = next;
        Ok(())
    }

    fn to_dict(&self) -> std::collections::BTreeMap<&'static str, String> {
        self.inner.to_kv().into_iter().collect()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    fn __repr__(&self) -> String {
        let kv: Vec<String> = self.inner.to_kv().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("ModelConfig({})", kv.join(", "))
    }
}

/// A model with its optimiser state.
#[pyclass(name = "Model", module = "hsvae_py")]
struct PyModel {
    trainer: Trainer,
}

impl PyModel {
    fn parts(&self) -> (&ParameterStore, &model::ModelConfig) {
        (&self.trainer.store, &self.trainer.model)
    }
}

#[pymethods]
impl PyModel {
    /// Fresh parameters drawn from `seed`.
    #[new]
    #[pyo3(signature = (config, seed=0))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self { trainer: Trainer::new(config.inner.clone(), TrainConfig { seed, ..TrainConfig::default() }).py()? })
    }

    /// Loads a checkpoint; training state is restored when present.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::read(&path).py()?;
        if ckpt.manifest.contains_key("state.step") {
            return Ok(Self { trainer: Trainer::resume(&ckpt, None).py()? });
        }
        let config = ckpt.model_config().py()?;
        let store = ckpt.parameters(&config).py()?;
        let train = TrainConfig::default();
        let adam = Adam::new(train.adam);
        Ok(Self { trainer: Trainer { model: config, train, store, adam, step: 0, epoch: 0 } })
    }

    /// Writes parameters and optimiser state.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.trainer.checkpoint().write(path).py()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.trainer.model.clone() }
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.trainer.epoch
    }

    /// Order-independent hash of every parameter value.
    fn checksum(&self) -> u64 {
        self.trainer.store.checksum()
    }

    /// Trains `epochs` more epochs; returns one record per epoch.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (sentences, epochs=5, learning_rate=None, batch_size=None, log=None, checkpoint_dir=None))]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        sentences: Vec<Vec<usize>>,
        epochs: usize,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        log: Option<PathBuf>,
        checkpoint_dir: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let t = &mut self.trainer;
        t.train.epochs = t.epoch + epochs;
        if let Some(lr) = learning_rate {
            t.train.learning_rate = lr;
        }
        if let Some(b) = batch_size {
            t.train.batch_size = b;
        }
        t.train.validate(t.model.variant).py()?;
        let report = t.fit(&sentences, &FitOutputs { log, checkpoint_dir }).py()?;
        to_py(py, &report.records)
    }

    /// Objective terms on `sentences` (one batch), seeded by `seed`.
    #[pyo3(signature = (sentences, seed=0))]
    fn objective<'py>(&self, py: Python<'py>, sentences: Vec<Vec<usize>>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let (s, c) = self.parts();
        let mut rng = RngStream::new(seed);
        let terms = match c.variant {
            Variant::Hsvae => model::hsvae_elbo(s, c, &sentences, &mut rng),
            Variant::MatVae => model::matvae_objective(s, c, &sentences, &mut rng),
            _ => model::vae_elbo(s, c, &sentences, &mut rng),
        }
        .py()?;
        let d = PyDict::new(py);
        for (k, v) in [
            ("reconstruction", terms.reconstruction),
            ("kl_z", terms.kl_z),
            ("kl_gamma", terms.kl_gamma),
            ("mmd", terms.mmd),
            ("penalty", terms.penalty),
            ("objective", terms.objective),
        ] {
            d.set_item(k, v)?;
        }
        Ok(d.into_any())
    }

    /// One code per sentence: `posterior-mean` or `posterior-sample`.
    #[pyo3(signature = (sentences, mode="posterior-mean", seed=0))]
    fn latent_codes(&self, sentences: Vec<Vec<usize>>, mode: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let (s, c) = self.parts();
        let codes = model::latent_codes(s, c, &sentences, code_mode(mode)?, &mut RngStream::new(seed)).py()?;
        Ok(codes.into_iter().map(|c| c.z).collect())
    }

    /// Posterior gate means α/(α+β) per sentence (HSVAE only).
    fn gate_means(&self, sentences: Vec<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let (s, c) = self.parts();
        model::gate_means(s, c, &sentences).py()
    }

    /// Average Hoyer report over one code per sentence.
    #[pyo3(signature = (sentences, mode="posterior-sample", seed=0))]
    fn average_hoyer<'py>(&self, py: Python<'py>, sentences: Vec<Vec<usize>>, mode: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let (s, c) = self.parts();
        let r = metrics::average_hoyer(s, c, &sentences, code_mode(mode)?, &mut RngStream::new(seed)).py()?;
        to_py(py, &r)
    }

    /// Binarised per-class gate patterns `(patterns, mean pattern distance)`.
    fn gamma_class(&self, corpus: &PyCorpus) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let (s, c) = self.parts();
        let p = analysis::gamma_class(s, c, &corpus.inner).py()?;
        let dist = if p.len() >= 2 { analysis::mean_pattern_distance(&p).py()? } else { 0.0 };
        Ok((p.into_iter().map(|x| x.gamma).collect(), dist))
    }

    /// Free-running decode from code `z`; greedy unless `seed` is given.
    #[pyo3(signature = (z, max_len=20, seed=None))]
    fn generate(&self, z: Vec<f64>, max_len: usize, seed: Option<u64>) -> PyResult<Vec<usize>> {
        let mut rng = seed.map(RngStream::new);
        model::generate(&self.trainer.store, &z, max_len, rng.as_mut()).py()
    }

    /// A draw from the model's prior over z.
    #[pyo3(signature = (seed=0))]
    fn prior_sample(&self, seed: u64) -> PyResult<Vec<f64>> {
        model::prior_sample(&self.trainer.model, &mut RngStream::new(seed)).py()
    }

    /// Trains a K-sample marginalised probe on the frozen encoder; returns
    /// per-epoch losses, train accuracy and held-out accuracy.
    #[pyo3(signature = (train, test, k=5, epochs=10, seed=0))]
    fn probe<'py>(&self, py: Python<'py>, train: &PyCorpus, test: &PyCorpus, k: usize, epochs: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let (s, c) = self.parts();
        let mut cfg = ClassifierConfig::new(train.inner.num_classes());
        cfg.k = k;
        let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
        let (_, r) = classify::train_classifier(s, c, &train.inner, &test.inner, cfg, &tc).py()?;
        to_py(py, &r)
    }
}

/// Hoyer sparsity of one vector.
#[pyfunction]
fn hoyer(code: Vec<f64>) -> PyResult<f64> {
    metrics::hoyer(&code).py()
}

/// Average Hoyer of a code matrix after per-dimension std normalisation.
#[pyfunction]
fn average_hoyer(codes: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::average_hoyer_codes(&codes, CodeMode::PosteriorSample).py()?.average_hoyer)
}

/// Runs the finite-difference gradient suite; one record per case.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyList>> {
    let cases = hsvae::gradcheck::run_suite(seed).py()?;
    let out = PyList::empty(py);
    for c in cases {
        let d = PyDict::new(py);
        d.set_item("name", &c.name)?;
        d.set_item("max_rel_error", c.report.max_rel_error)?;
        d.set_item("tolerance", c.tolerance)?;
        d.set_item("passed", c.passed())?;
        out.append(d)?;
    }
    Ok(out)
}

/// Runs the command-line interface with `args` (without the program name);
/// returns the exit status.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    hsvae::cli::main_with(std::iter::once("hsvae".to_string()).chain(args))
}

#[pymodule]
fn hsvae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(hoyer, m)?)?;
    m.add_function(wrap_pyfunction!(average_hoyer, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("CHECKPOINT_HEADER", model::CHECKPOINT_HEADER)?;
    Ok(())
}
