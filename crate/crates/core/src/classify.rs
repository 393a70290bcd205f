//! Downstream classification: an MLP probe on a frozen probabilistic encoder
//! with Monte Carlo marginalisation over latents, and the end-to-end
//! GRU + MLP baseline.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::diff::rng::purpose;
use crate::diff::{Graph, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{codes_from_features, encode_graph, features, is_encoder_param, Batch, CodeMode, ModelConfig, ParameterStore, Variant};
use crate::textdata::{LabeledCorpus, TokenSequence};
use crate::training::{clip_global_norm, Adam, TrainConfig};

/// Probe architecture and marginalisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub slope: f64,
    /// Latent samples averaged per prediction.
    pub k: usize,
    pub num_classes: usize,
    pub freeze_encoder: bool,
}

impl ClassifierConfig {
    pub fn new(num_classes: usize) -> Self {
        Self { hidden: [32, 32], slope: 0.01, k: 5, num_classes, freeze_encoder: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.hidden.contains(&0) || self.num_classes == 0 {
            return Err(Error::Config("classifier needs K ≥ 1, positive widths and at least one class".into()));
        }
        Ok(())
    }
}

/// Three dense layers with leaky-rectifier activations between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl Classifier {
    pub fn init(config: ClassifierConfig, input_dim: usize, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let dims = [input_dim, config.hidden[0], config.hidden[1], config.num_classes];
        let mut params = BTreeMap::new();
        for l in 0..3 {
            let (i, o) = (dims[l], dims[l + 1]);
            let k = 1.0 / (i as f64).sqrt();
            let w = rng.uniforms(i * o).into_iter().map(|u| k * (2.0 * u - 1.0)).collect();
            params.insert(format!("cls.w{}", l + 1), Tensor::new(i, o, w)?);
            params.insert(format!("cls.b{}", l + 1), Tensor::zeros(1, o));
        }
        Ok(Self { config, params })
    }

    pub fn input_dim(&self) -> usize {
        self.params["cls.w1"].rows()
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> BTreeMap<String, Var> {
        self.params.iter().map(|(n, t)| (n.clone(), if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })).collect()
    }

    /// Logits for each row of `x`.
    pub fn logits_graph(&self, g: &mut Graph, p: &BTreeMap<String, Var>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 1..=3 {
            h = g.matmul(h, p[&format!("cls.w{l}")])?;
            h = g.add(h, p[&format!("cls.b{l}")])?;
            if l < 3 {
                h = g.leaky_relu(h, self.config.slope);
            }
        }
        Ok(h)
    }

    /// Softmax probabilities for each row of `x`.
    pub fn probabilities(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(Tensor::from_rows(x)?);
        let logits = self.logits_graph(&mut g, &p, xv)?;
        let lp = g.log_softmax(logits);
        g.check_finite()?;
        Ok(g.value(lp).to_rows().into_iter().map(|r| r.into_iter().map(f64::exp).collect()).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `(1/K) Σ_k p(y | z_k)` for each feature row, with `K` posterior samples each.
pub fn predict_from_features(
    store: &ParameterStore,
    model: &ModelConfig,
    clf: &Classifier,
    feats: &[Vec<f64>],
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::domain("K must be at least 1"));
    }
    let repeated: Vec<Vec<f64>> = feats.iter().flat_map(|f| std::iter::repeat_n(f.clone(), k)).collect();
    let codes: Vec<Vec<f64>> = codes_from_features(store, model, &repeated, CodeMode::PosteriorSample, rng)?.into_iter().map(|c| c.z).collect();
    let probs = clf.probabilities(&codes)?;
    Ok(probs
        .chunks(k)
        .map(|group| {
            let mut avg = vec![0.0; clf.config.num_classes];
            for p in group {
                avg.iter_mut().zip(p).for_each(|(a, v)| *a += v / k as f64);
            }
            avg
        })
        .collect())
}

/// Marginalised class probabilities for one sentence.
pub fn predict_marginalized(
    store: &ParameterStore,
    model: &ModelConfig,
    clf: &Classifier,
    tokens: &TokenSequence,
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let f = features(store, std::slice::from_ref(tokens))?;
    Ok(predict_from_features(store, model, clf, &f, k, rng)?.remove(0))
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::contract("accuracy needs one non-empty prediction per label"));
    }
    Ok(probs.iter().zip(labels).filter(|(p, &y)| argmax(p) == y).count() as f64 / labels.len() as f64)
}

/// Accuracy record written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub variant: String,
    pub encoder_checkpoint: String,
    pub split: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub seed: u64,
    /// Labels were permuted before splitting (chance-level control).
    pub shuffled_labels: bool,
    /// Fewer than two classes: accuracy is trivially 1.
    pub degenerate: bool,
}

/// Outcome of probe or baseline training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub accuracy: f64,
    pub degenerate: bool,
}

fn mean_nll_of_average(g: &mut Graph, probs: &[Var], labels: &[usize]) -> Result<Var> {
    let k = probs.len() as f64;
    let mut sum = probs[0];
    for &p in &probs[1..] {
        sum = g.add(sum, p)?;
    }
    let avg = g.scale(sum, 1.0 / k);
    let log_avg = g.log(avg);
    let w = vec![-1.0 / labels.len() as f64; labels.len()];
    g.pick(log_avg, labels, &w)
}

fn softmax(g: &mut Graph, logits: Var) -> Var {
    let lp = g.log_softmax(logits);
    g.exp(lp)
}

/// Trains a probe on a frozen encoder and reports held-out accuracy.
///
/// The encoder's checksum is compared before and after; any change aborts.
pub fn train_classifier(
    store: &ParameterStore,
    model: &ModelConfig,
    train: &LabeledCorpus,
    eval: &LabeledCorpus,
    config: ClassifierConfig,
    tc: &TrainConfig,
) -> Result<(Classifier, ProbeResult)> {
    if !config.freeze_encoder {
        return Err(Error::contract("the marginalised probe only supports a frozen encoder"));
    }
    let before = store.checksum();
    let root = RngStream::new(tc.seed);
    let mut clf = Classifier::init(config, model.latent_dim, &mut root.derive(purpose::INIT, 1))?;
    let labels = train.labels()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::contract("classifier needs non-empty train and eval splits"));
    }
    let feats = features(store, &train.sentences)?;
    let mut adam = Adam::new(tc.adam);
    let mut losses = Vec::with_capacity(tc.epochs);
    let mut step = 0u32;
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(purpose::SHUFFLE, epoch as u32 + 1000).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let mut rng = root.derive(purpose::PROBE, step);
            step += 1;
            let bf: Vec<Vec<f64>> = chunk.iter().map(|&i| feats[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let p = clf.bind(&mut g, true);
            let mut probs = Vec::with_capacity(clf.config.k);
            for _ in 0..clf.config.k {
                let codes: Vec<Vec<f64>> =
                    codes_from_features(store, model, &bf, CodeMode::PosteriorSample, &mut rng)?.into_iter().map(|c| c.z).collect();
                let x = g.constant(Tensor::from_rows(&codes)?);
                let logits = clf.logits_graph(&mut g, &p, x)?;
                probs.push(softmax(&mut g, logits));
            }
            let loss = mean_nll_of_average(&mut g, &probs, &by)?;
            total += g.item(loss) * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let mut named: BTreeMap<String, Tensor> = p.iter().map(|(n, &v)| (n.clone(), grads.get(v))).collect();
            clip_global_norm(&mut named, tc.clip_norm);
            adam.step(clf.params.iter_mut(), &named, tc.learning_rate)?;
        }
        losses.push(total / train.len() as f64);
    }
    if store.checksum() != before {
        return Err(Error::contract("encoder parameters changed during probe training"));
    }
    let mut eval_rng = root.derive(purpose::EVAL, 0);
    let k = clf.config.k;
    let train_acc = accuracy(&predict_from_features(store, model, &clf, &feats, k, &mut eval_rng)?, labels)?;
    let eval_feats = features(store, &eval.sentences)?;
    let acc = accuracy(&predict_from_features(store, model, &clf, &eval_feats, k, &mut eval_rng)?, eval.labels()?)?;
    let degenerate = train.num_classes() < 2;
    Ok((clf, ProbeResult { losses, train_accuracy: train_acc, accuracy: acc, degenerate }))
}

/// End-to-end GRU encoder + MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleClassifier {
    /// Embedding and encoder GRU (other entries unused).
    pub encoder: ParameterStore,
    pub head: Classifier,
}

fn is_gru_encoder(name: &str) -> bool {
    is_encoder_param(name) && (name == "embedding" || name.starts_with("enc."))
}

impl SimpleClassifier {
    fn logits(&self, g: &mut Graph, seqs: &[TokenSequence], trainable: bool) -> Result<(Var, BTreeMap<String, Var>)> {
        let p = self.encoder.bind_with(g, |n| trainable && is_gru_encoder(n));
        let mut vars: BTreeMap<String, Var> = p.iter().filter(|(n, _)| is_gru_encoder(n)).map(|(n, &v)| (n.clone(), v)).collect();
        let hp = self.head.bind(g, trainable);
        let h = encode_graph(g, &p, &Batch::new(seqs)?)?;
        let logits = self.head.logits_graph(g, &hp, h)?;
        vars.extend(hp);
        Ok((logits, vars))
    }

    pub fn probabilities(&self, seqs: &[TokenSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            let mut g = Graph::new();
            let (logits, _) = self.logits(&mut g, chunk, false)?;
            let p = softmax(&mut g, logits);
            g.check_finite()?;
            out.extend(g.value(p).to_rows());
        }
        Ok(out)
    }
}

/// Trains the end-to-end baseline; `embed_dim`/`hidden_dim` size the encoder.
pub fn simple_classifier(
    train: &LabeledCorpus,
    eval: &LabeledCorpus,
    config: ClassifierConfig,
    embed_dim: usize,
    hidden_dim: usize,
    tc: &TrainConfig,
) -> Result<(SimpleClassifier, ProbeResult)> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::contract("classifier needs non-empty train and eval splits"));
    }
    let root = RngStream::new(tc.seed);
    let mut mc = ModelConfig::new(Variant::Vae, train.vocab.len());
    mc.embed_dim = embed_dim;
    mc.hidden_dim = hidden_dim;
    let encoder = ParameterStore::init(&mc, &mut root.derive(purpose::INIT, 0))?;
    let head = Classifier::init(config, hidden_dim, &mut root.derive(purpose::INIT, 1))?;
    let mut model = SimpleClassifier { encoder, head };
    let labels = train.labels()?;
    let mut adam = Adam::new(tc.adam);
    let mut losses = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.derive(purpose::SHUFFLE, epoch as u32).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let seqs: Vec<TokenSequence> = chunk.iter().map(|&i| train.sentences[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let (logits, vars) = model.logits(&mut g, &seqs, true)?;
            let w = vec![1.0 / chunk.len() as f64; chunk.len()];
            let loss = g.softmax_cross_entropy(logits, &by, &w)?;
            total += g.item(loss) * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let mut named: BTreeMap<String, Tensor> = vars.iter().map(|(n, &v)| (n.clone(), grads.get(v))).collect();
            clip_global_norm(&mut named, tc.clip_norm);
            adam.step(model.encoder.iter_mut().chain(model.head.params.iter_mut()), &named, tc.learning_rate)?;
        }
        losses.push(total / train.len() as f64);
    }
    let train_acc = accuracy(&model.probabilities(&train.sentences)?, labels)?;
    let acc = accuracy(&model.probabilities(&eval.sentences)?, eval.labels()?)?;
    let degenerate = train.num_classes() < 2;
    Ok((model, ProbeResult { losses, train_accuracy: train_acc, accuracy: acc, degenerate }))
}
