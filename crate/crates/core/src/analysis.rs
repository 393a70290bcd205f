//! Per-class sparsity patterns (γ_class) and class-level word-distribution KL.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{gate_means, ModelConfig, ParameterStore};
use crate::textdata::{LabeledCorpus, RESERVED};

/// Gate means at or above this binarise to 1.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

/// A class's average binarised gate pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPattern {
    pub class: usize,
    /// Fraction of the class's sentences whose gate mean is ≥ 0.5, per dimension.
    pub gamma: Vec<f64>,
    /// Number of sentences averaged.
    pub support: usize,
}

/// Averages binarised gate means within each class.
pub fn gamma_class_from_means(means: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Vec<ClassPattern>> {
    if means.len() != labels.len() {
        return Err(Error::contract(format!("{} gate rows for {} labels", means.len(), labels.len())));
    }
    let d = means.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0usize; d]; num_classes];
    let mut support = vec![0usize; num_classes];
    for (row, &y) in means.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::contract(format!("label {y} out of range for {num_classes} classes")));
        }
        if row.len() != d {
            return Err(Error::contract("gate rows differ in length"));
        }
        support[y] += 1;
        for (s, &m) in sums[y].iter_mut().zip(row) {
            *s += (m >= BINARIZE_THRESHOLD) as usize;
        }
    }
    (0..num_classes)
        .map(|c| {
            if support[c] == 0 {
                return Err(Error::contract(format!("class {c} has no sentences")));
            }
            let gamma = sums[c].iter().map(|&s| s as f64 / support[c] as f64).collect();
            Ok(ClassPattern { class: c, gamma, support: support[c] })
        })
        .collect()
}

/// γ_class of every class of a labelled corpus under an HSVAE.
pub fn gamma_class(store: &ParameterStore, config: &ModelConfig, corpus: &LabeledCorpus) -> Result<Vec<ClassPattern>> {
    let labels = corpus.labels()?;
    let means = gate_means(store, config, &corpus.sentences)?;
    gamma_class_from_means(&means, labels, corpus.num_classes())
}

/// Hamming distance between thresholded patterns.
pub fn pattern_distance(a: &ClassPattern, b: &ClassPattern, threshold: f64) -> Result<usize> {
    if a.gamma.len() != b.gamma.len() {
        return Err(Error::contract(format!("pattern lengths differ: {} vs {}", a.gamma.len(), b.gamma.len())));
    }
    Ok(a.gamma.iter().zip(&b.gamma).filter(|(x, y)| (**x >= threshold) != (**y >= threshold)).count())
}

/// Mean [`pattern_distance`] over unordered class pairs.
pub fn mean_pattern_distance(patterns: &[ClassPattern]) -> Result<f64> {
    let mut total = 0usize;
    let mut pairs = 0usize;
    for i in 0..patterns.len() {
        for j in i + 1..patterns.len() {
            total += pattern_distance(&patterns[i], &patterns[j], BINARIZE_THRESHOLD)?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::contract("need at least two classes"));
    }
    Ok(total as f64 / pairs as f64)
}

/// Pairwise KL between add-one-smoothed class unigram distributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassKlMatrix {
    pub classes: Vec<String>,
    /// `values[i][j] = KL(p_i ‖ p_j)`.
    pub values: Vec<Vec<f64>>,
    pub smoothing: f64,
}

impl ClassKlMatrix {
    /// Mean over i ≠ j.
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.values.len();
        let total: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).sum();
        total / (k * (k - 1)) as f64
    }
}

/// KL matrix from per-class word counts (one row per class).
pub fn class_kl_from_counts(classes: Vec<String>, counts: &[Vec<f64>], smoothing: f64) -> Result<ClassKlMatrix> {
    if counts.len() < 2 || counts.len() != classes.len() {
        return Err(Error::contract("class KL needs at least two classes with names"));
    }
    let w = counts[0].len();
    let mut dists = Vec::with_capacity(counts.len());
    for (c, row) in counts.iter().enumerate() {
        if row.len() != w {
            return Err(Error::contract("count rows differ in length"));
        }
        if row.iter().sum::<f64>() == 0.0 {
            return Err(Error::contract(format!("class {} has no words", classes[c])));
        }
        let total: f64 = row.iter().map(|n| n + smoothing).sum();
        dists.push(row.iter().map(|n| (n + smoothing) / total).collect::<Vec<f64>>());
    }
    let k = dists.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                values[i][j] = dists[i].iter().zip(&dists[j]).map(|(p, q)| p * (p / q).ln()).sum::<f64>().max(0.0);
            }
        }
    }
    Ok(ClassKlMatrix { classes, values, smoothing })
}

/// Class KL over the corpus vocabulary (reserved tokens excluded), add-1 smoothed.
pub fn class_kl_matrix(corpus: &LabeledCorpus) -> Result<ClassKlMatrix> {
    let labels = corpus.labels()?;
    let k = corpus.num_classes();
    let v = corpus.vocab.len();
    let mut counts = vec![vec![0.0; v - RESERVED.len()]; k];
    for (s, &y) in corpus.sentences.iter().zip(labels) {
        for &id in s {
            if id >= RESERVED.len() {
                counts[y][id - RESERVED.len()] += 1.0;
            }
        }
    }
    class_kl_from_counts(corpus.class_names.clone(), &counts, 1.0)
}

/// γ_class CSV: header of dimension indices, then one row per class.
pub fn write_gamma_csv(path: &Path, patterns: &[ClassPattern], class_names: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = patterns.first().map_or(0, |p| p.gamma.len());
    let header: Vec<String> = std::iter::once("class".to_string()).chain((0..d).map(|i| i.to_string())).collect();
    writeln!(f, "{}", header.join(","))?;
    for p in patterns {
        let name = class_names.get(p.class).cloned().unwrap_or_else(|| p.class.to_string());
        let row: Vec<String> = std::iter::once(name).chain(p.gamma.iter().map(|g| g.to_string())).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Class-KL CSV: class-id header row and column.
pub fn write_kl_csv(path: &Path, m: &ClassKlMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "class,{}", m.classes.join(","))?;
    for (name, row) in m.classes.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{name},{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties); 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract("spearman needs two equal-length series of at least 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    Ok(if vx == 0.0 || vy == 0.0 { 0.0 } else { cov / (vx * vy).sqrt() })
}
