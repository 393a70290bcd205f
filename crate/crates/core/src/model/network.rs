//! Encoder, posterior heads and teacher-forced decoder as graph builders.

use super::params::{Bound, ParameterStore};
use crate::diff::{gru_cell, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::textdata::{TokenSequence, EOS, PAD};

/// Floor added after softplus on every positive head output.
pub const HEAD_FLOOR: f64 = 1e-4;
/// Upper cap on emitted Beta parameters.
pub const BETA_CAP: f64 = 1e3;

/// A padded batch of sentences, laid out step by step.
#[derive(Debug, Clone)]
pub struct Batch {
    size: usize,
    lengths: Vec<usize>,
    /// Encoder ids per step; finished rows hold ⟨pad⟩.
    enc_ids: Vec<Vec<usize>>,
    /// `B × 1` masks per step; `None` when every row is still active.
    enc_masks: Vec<Option<Tensor>>,
    /// Decoder inputs `[EOS, s_0, …, s_{n−1}]` per step.
    dec_inputs: Vec<Vec<usize>>,
    /// Decoder targets `[s_0, …, s_{n−1}, EOS]` per step.
    dec_targets: Vec<Vec<usize>>,
    /// 1 for real target positions, 0 for padding.
    dec_weights: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new<S: AsRef<[usize]>>(seqs: &[S]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.as_ref().len()).collect();
        if let Some(i) = lengths.iter().position(|&n| n == 0) {
            return Err(Error::contract(format!("sentence {i} of the batch is empty")));
        }
        let size = seqs.len();
        let t_max = *lengths.iter().max().expect("non-empty");
        let mut enc_ids = Vec::with_capacity(t_max);
        let mut enc_masks = Vec::with_capacity(t_max);
        for t in 0..t_max {
            enc_ids.push(seqs.iter().map(|s| s.as_ref().get(t).copied().unwrap_or(PAD)).collect());
            let mask: Vec<f64> = lengths.iter().map(|&n| if t < n { 1.0 } else { 0.0 }).collect();
            enc_masks.push(if mask.iter().all(|&m| m == 1.0) { None } else { Some(Tensor::new(size, 1, mask)?) });
        }
        let mut dec_inputs = Vec::with_capacity(t_max + 1);
        let mut dec_targets = Vec::with_capacity(t_max + 1);
        let mut dec_weights = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            let mut inp = Vec::with_capacity(size);
            let mut tgt = Vec::with_capacity(size);
            let mut w = Vec::with_capacity(size);
            for s in seqs {
                let s = s.as_ref();
                let n = s.len();
                inp.push(if t == 0 { EOS } else if t <= n { s[t - 1] } else { PAD });
                match t.cmp(&n) {
                    std::cmp::Ordering::Less => {
                        tgt.push(s[t]);
                        w.push(1.0);
                    }
                    std::cmp::Ordering::Equal => {
                        tgt.push(EOS);
                        w.push(1.0);
                    }
                    std::cmp::Ordering::Greater => {
                        tgt.push(PAD);
                        w.push(0.0);
                    }
                }
            }
            dec_inputs.push(inp);
            dec_targets.push(tgt);
            dec_weights.push(w);
        }
        Ok(Self { size, lengths, enc_ids, enc_masks, dec_inputs, dec_targets, dec_weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Number of predicted positions (tokens plus one ⟨eos⟩ per sentence).
    pub fn target_count(&self) -> usize {
        self.lengths.iter().map(|n| n + 1).sum()
    }

    pub fn max_id(&self) -> usize {
        self.enc_ids.iter().flatten().copied().max().unwrap_or(0)
    }
}

fn check_vocab(g: &Graph, p: &Bound, batch: &Batch) -> Result<()> {
    let v = g.value(p.var("embedding")?).rows();
    if batch.max_id() >= v {
        return Err(Error::contract(format!("token id {} out of range for vocabulary of {v}", batch.max_id())));
    }
    Ok(())
}

/// Final GRU state of every sentence, `B × H`.
pub fn encode_graph(g: &mut Graph, p: &Bound, batch: &Batch) -> Result<Var> {
    check_vocab(g, p, batch)?;
    let gru = p.gru("enc")?;
    let emb = p.var("embedding")?;
    let hidden = gru.hidden_dim(g);
    let mut h = g.constant(Tensor::zeros(batch.size, hidden));
    for (ids, mask) in batch.enc_ids.iter().zip(&batch.enc_masks) {
        let x = g.embedding(emb, ids)?;
        let next = gru_cell(g, &gru, x, h)?;
        h = match mask {
            None => next,
            Some(m) => {
                // h ← h + m ⊙ (h' − h)
                let m = g.constant(m.clone());
                let delta = g.sub(next, h)?;
                let step = g.mul(delta, m)?;
                g.add(h, step)?
            }
        };
    }
    Ok(h)
}

/// Two-layer MLP `tanh(x W1 + b1) W2 + b2` with `2D` outputs.
fn head(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<(Var, Var)> {
    let w1 = p.var(&format!("{name}.w1"))?;
    let b1 = p.var(&format!("{name}.b1"))?;
    let w2 = p.var(&format!("{name}.w2"))?;
    let b2 = p.var(&format!("{name}.b2"))?;
    let hid = g.matmul(x, w1)?;
    let hid = g.add(hid, b1)?;
    let hid = g.tanh(hid);
    let out = g.matmul(hid, w2)?;
    let out = g.add(out, b2)?;
    let d = g.value(out).cols() / 2;
    Ok((g.slice(out, 0, d)?, g.slice(out, d, 2 * d)?))
}

fn positive(g: &mut Graph, raw: Var) -> Var {
    let s = g.softplus(raw);
    g.affine(s, 1.0, HEAD_FLOOR)
}

/// Gaussian posterior `(μ, σ)` of the VAE family.
pub fn gaussian_head(g: &mut Graph, p: &Bound, feature: Var) -> Result<(Var, Var)> {
    let (mu, raw) = head(g, p, "gauss", feature)?;
    Ok((mu, positive(g, raw)))
}

/// Beta posterior `(α, β)` over the gates, each in `[1e-4, 1e3]`.
pub fn beta_head(g: &mut Graph, p: &Bound, feature: Var) -> Result<(Var, Var)> {
    let (ra, rb) = head(g, p, "beta", feature)?;
    let a = positive(g, ra);
    let b = positive(g, rb);
    Ok((g.clamp(a, HEAD_FLOOR, BETA_CAP), g.clamp(b, HEAD_FLOOR, BETA_CAP)))
}

/// Slab `(μ, σ)` of q(z | γ, x) from `concat(feature, γ)`.
pub fn slab_head(g: &mut Graph, p: &Bound, feature: Var, gate: Var) -> Result<(Var, Var)> {
    let x = g.concat(&[feature, gate])?;
    let (mu, raw) = head(g, p, "slab", x)?;
    Ok((mu, positive(g, raw)))
}

/// Runs the teacher-forced decoder conditioned on `z` (`B × D`), calling
/// `each` with the logits node and target layout of every step.
fn decode_steps(
    g: &mut Graph,
    p: &Bound,
    batch: &Batch,
    z: Var,
    mut each: impl FnMut(&mut Graph, Var, &[usize], &[f64]) -> Result<()>,
) -> Result<()> {
    check_vocab(g, p, batch)?;
    if g.value(z).rows() != batch.size {
        return Err(Error::contract(format!("{} latent codes for a batch of {}", g.value(z).rows(), batch.size)));
    }
    let gru = p.gru("dec")?;
    let emb = p.var("embedding")?;
    let (w_out, b_out) = (p.var("out.w")?, p.var("out.b")?);
    let mut h = g.constant(Tensor::zeros(batch.size, gru.hidden_dim(g)));
    for ((inp, tgt), w) in batch.dec_inputs.iter().zip(&batch.dec_targets).zip(&batch.dec_weights) {
        let e = g.embedding(emb, inp)?;
        let x = g.concat(&[e, z])?;
        h = gru_cell(g, &gru, x, h)?;
        let logits = g.matmul(h, w_out)?;
        let logits = g.add(logits, b_out)?;
        each(g, logits, tgt, w)?;
    }
    Ok(())
}

/// Sum over non-pad positions of log p(target), a scalar node.
pub fn reconstruction_graph(g: &mut Graph, p: &Bound, batch: &Batch, z: Var) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.dec_inputs.len());
    decode_steps(g, p, batch, z, |g, logits, tgt, w| {
        terms.push(g.softmax_cross_entropy(logits, tgt, w)?);
        Ok(())
    })?;
    let nll = g.concat(&terms)?;
    let nll = g.sum(nll);
    Ok(g.scale(nll, -1.0))
}

/// Logits per decoding step, `B × V` each.
pub fn decode_logits_graph(g: &mut Graph, p: &Bound, batch: &Batch, z: Var) -> Result<Vec<Var>> {
    let mut out = Vec::new();
    decode_steps(g, p, batch, z, |_, logits, _, _| {
        out.push(logits);
        Ok(())
    })?;
    Ok(out)
}

fn frozen(store: &ParameterStore, g: &mut Graph) -> Bound {
    store.bind_with(g, |_| false)
}

/// Final encoder state for one sentence.
pub fn encode(store: &ParameterStore, tokens: &[usize]) -> Result<Vec<f64>> {
    let batch = Batch::new(&[tokens])?;
    let mut g = Graph::new();
    let p = frozen(store, &mut g);
    let h = encode_graph(&mut g, &p, &batch)?;
    g.check_finite()?;
    Ok(g.value(h).data().to_vec())
}

/// Teacher-forced logits for `tokens` given code `z`: one row per predicted
/// position (`tokens.len() + 1` rows, the last predicting ⟨eos⟩).
pub fn decode(store: &ParameterStore, z: &[f64], tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("latent code must be finite"));
    }
    let batch = Batch::new(&[tokens])?;
    let mut g = Graph::new();
    let p = frozen(store, &mut g);
    let zv = g.constant(Tensor::row_vector(z.to_vec())?);
    let steps = decode_logits_graph(&mut g, &p, &batch, zv)?;
    g.check_finite()?;
    Ok(steps.iter().map(|&v| g.value(v).data().to_vec()).collect())
}

/// Free-running decoding from code `z`: each step feeds back the previous
/// token, chosen greedily or sampled when `rng` is given. Stops at ⟨eos⟩ or
/// after `max_len` tokens; ⟨pad⟩ is never emitted.
pub fn generate(store: &ParameterStore, z: &[f64], max_len: usize, mut rng: Option<&mut crate::diff::RngStream>) -> Result<TokenSequence> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("latent code must be finite"));
    }
    let mut g = Graph::new();
    let p = frozen(store, &mut g);
    let gru = p.gru("dec")?;
    let emb = p.var("embedding")?;
    let (w_out, b_out) = (p.var("out.w")?, p.var("out.b")?);
    let zv = g.constant(Tensor::row_vector(z.to_vec())?);
    let mut h = g.constant(Tensor::zeros(1, gru.hidden_dim(&g)));
    let mut prev = EOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let e = g.embedding(emb, &[prev])?;
        let x = g.concat(&[e, zv])?;
        h = gru_cell(&mut g, &gru, x, h)?;
        let logits = g.matmul(h, w_out)?;
        let logits = g.add(logits, b_out)?;
        let lp = g.log_softmax(logits);
        g.check_finite()?;
        let row = g.value(lp).row(0);
        let next = match rng.as_deref_mut() {
            None => (1..row.len()).fold(1, |best, i| if row[i] > row[best] { i } else { best }),
            Some(r) => {
                let mass: f64 = row[1..].iter().map(|v| v.exp()).sum();
                let mut u = r.uniform() * mass;
                let mut pick = row.len() - 1;
                for (i, v) in row.iter().enumerate().skip(1) {
                    u -= v.exp();
                    if u <= 0.0 {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}

/// `Σ_t log softmax(logits_t)[targets_t]`, skipping ⟨pad⟩ targets.
pub fn reconstruction_loglik(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::contract(format!("{} logit rows for {} targets", logits.len(), targets.len())));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        if t == PAD {
            continue;
        }
        if t >= row.len() {
            return Err(Error::contract(format!("target {t} out of range for {} logits", row.len())));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += row[t] - lse;
    }
    Ok(total)
}

/// Decoder targets for one sentence: its tokens followed by ⟨eos⟩.
pub fn targets(tokens: &TokenSequence) -> Vec<usize> {
    let mut t = tokens.clone();
    t.push(EOS);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::RngStream;
    use crate::gradcheck::check_graph;
    use crate::model::{ModelConfig, Variant};

    fn tiny(variant: Variant) -> (ModelConfig, ParameterStore) {
        let mut c = ModelConfig::new(variant, 12);
        c.latent_dim = 4;
        c.hidden_dim = 5;
        c.embed_dim = 3;
        let s = ParameterStore::init(&c, &mut RngStream::new(3)).unwrap();
        (c, s)
    }

    #[test]
    fn batch_layout() {
        let b = Batch::new(&[vec![5, 6, 7], vec![8]]).unwrap();
        assert_eq!(b.dec_inputs, vec![vec![EOS, EOS], vec![5, 8], vec![6, PAD], vec![7, PAD]]);
        assert_eq!(b.dec_targets, vec![vec![5, 8], vec![6, EOS], vec![7, PAD], vec![EOS, PAD]]);
        assert_eq!(b.dec_weights[2], vec![1.0, 0.0]);
        assert_eq!(b.target_count(), 6);
        assert!(b.enc_masks[0].is_none() && b.enc_masks[1].is_some());
        assert!(Batch::new(&[Vec::<usize>::new()]).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_feature() {
        let (_, mut s) = tiny(Variant::Vae);
        for (_, t) in s.iter_mut() {
            t.data_mut().fill(0.0);
        }
        assert!(encode(&s, &[3, 4, 5]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_is_order_sensitive_and_checks_ids() {
        let (_, s) = tiny(Variant::Vae);
        assert_ne!(encode(&s, &[3, 4, 5]).unwrap(), encode(&s, &[5, 4, 3]).unwrap());
        assert!(matches!(encode(&s, &[3, 40]), Err(Error::Contract(_))));
    }

    #[test]
    fn padding_does_not_change_a_sentence() {
        let (_, s) = tiny(Variant::Vae);
        let b = Batch::new(&[vec![3, 4], vec![5, 6, 7, 8]]).unwrap();
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let h = encode_graph(&mut g, &p, &b).unwrap();
        let alone = encode(&s, &[3, 4]).unwrap();
        for (a, b) in g.value(h).row(0).iter().zip(&alone) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn encoder_gradient() {
        let (_, s) = tiny(Variant::Vae);
        let names = ["embedding", "enc.w_ih", "enc.w_hh", "enc.b_ih", "enc.b_hh"];
        let inputs: Vec<Tensor> = names.iter().map(|n| s.get(n).unwrap().clone()).collect();
        let report = check_graph(
            &inputs,
            |g, v| {
                let mut p = s.bind_with(g, |_| false);
                p = p.with_overrides(names.iter().map(|n| n.to_string()).zip(v.iter().copied()));
                let b = Batch::new(&[vec![3, 7, 4]])?;
                let h = encode_graph(g, &p, &b)?;
                let hh = g.mul(h, h)?;
                Ok(g.sum(hh))
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn decoder_depends_on_z_and_masks_padding() {
        let (_, s) = tiny(Variant::Vae);
        let a = decode(&s, &[0.0; 4], &[3, 4]).unwrap();
        let b = decode(&s, &[1.0, -1.0, 0.5, 2.0], &[3, 4]).unwrap();
        assert_eq!(a.len(), 3);
        assert_ne!(a, b);
        // Padded rows carry zero weight: the loss of a batch equals the sum of single losses.
        let batch = Batch::new(&[vec![3, 4], vec![5, 6, 7, 8, 9]]).unwrap();
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let z = g.constant(Tensor::zeros(2, 4));
        let rec = reconstruction_graph(&mut g, &p, &batch, z).unwrap();
        let single = |toks: &[usize]| {
            let logits = decode(&s, &[0.0; 4], toks).unwrap();
            reconstruction_loglik(&logits, &targets(&toks.to_vec())).unwrap()
        };
        let expected = single(&[3, 4]) + single(&[5, 6, 7, 8, 9]);
        assert!((g.item(rec) - expected).abs() < 1e-10);
    }

    #[test]
    fn uniform_logits_loglik() {
        let logits = vec![vec![0.0; 20003]; 10];
        let ll = reconstruction_loglik(&logits, &[5; 10]).unwrap();
        assert!((ll - (-10.0 * 20003f64.ln())).abs() < 1e-9);
        assert!((ll + 99.04).abs() < 0.01);
        let mut sharp = vec![vec![-50.0; 4]; 3];
        for (i, row) in sharp.iter_mut().enumerate() {
            row[i + 1] = 50.0;
        }
        assert!(reconstruction_loglik(&sharp, &[1, 2, 3]).unwrap() > -1e-30);
        assert_eq!(reconstruction_loglik(&sharp, &[PAD, PAD, PAD]).unwrap(), 0.0);
    }

    #[test]
    fn generation_is_bounded_and_deterministic() {
        let (_, s) = tiny(Variant::Vae);
        let z = [0.3, -0.2, 0.0, 1.0];
        let a = generate(&s, &z, 7, None).unwrap();
        assert!(a.len() <= 7 && a.iter().all(|&t| t != PAD && t != EOS && t < 12));
        assert_eq!(a, generate(&s, &z, 7, None).unwrap());
        let mut r1 = RngStream::new(4);
        let mut r2 = RngStream::new(4);
        assert_eq!(generate(&s, &z, 7, Some(&mut r1)).unwrap(), generate(&s, &z, 7, Some(&mut r2)).unwrap());
    }

    #[test]
    fn head_floors() {
        let (_, mut s) = tiny(Variant::Hsvae);
        for n in ["beta.b2", "slab.b2"] {
            s.get_mut(n).unwrap().data_mut().fill(-1e3);
        }
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let f = g.constant(Tensor::zeros(1, 5));
        let (a, b) = beta_head(&mut g, &p, f).unwrap();
        let gate = g.constant(Tensor::full(1, 4, 0.5));
        let (_, sd) = slab_head(&mut g, &p, f, gate).unwrap();
        for v in [a, b, sd] {
            assert!(g.value(v).data().iter().all(|&x| x >= HEAD_FLOOR));
        }
    }
}
