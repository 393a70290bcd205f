//! Sparsity (Hoyer, Average Hoyer) and reconstruction reporting.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diff::RngStream;
use crate::error::{Error, Result};
use crate::model::{latent_codes, CodeMode, ModelConfig, ParameterStore, Weights};
use crate::textdata::TokenSequence;

/// Dimensions whose standard deviation falls below this are left unnormalised.
pub const STD_FLOOR: f64 = 1e-8;

/// `(√d − ‖z‖₁/‖z‖₂) / (√d − 1)`; the zero vector scores 0.
pub fn hoyer(code: &[f64]) -> Result<f64> {
    hoyer_checked(code).map(|(h, _)| h)
}

/// Hoyer score plus whether the code was all zeros.
fn hoyer_checked(code: &[f64]) -> Result<(f64, bool)> {
    let d = code.len();
    if d < 2 {
        return Err(Error::contract(format!("hoyer needs at least 2 dimensions, got {d}")));
    }
    if code.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("hoyer of a non-finite code"));
    }
    let l1: f64 = code.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        return Ok((0.0, true));
    }
    // Scale by the largest entry first so the L2 norm cannot overflow/underflow.
    let max = code.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2 = max * code.iter().map(|v| (v / max).powi(2)).sum::<f64>().sqrt();
    let sd = (d as f64).sqrt();
    // (√d·‖z‖₂ − ‖z‖₁) / ((√d − 1)·‖z‖₂): one rounding fewer than the ratio form.
    Ok((((sd * l2 - l1) / ((sd - 1.0) * l2)).clamp(0.0, 1.0), false))
}

/// Result of [`average_hoyer`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoyerReport {
    pub average_hoyer: f64,
    /// Population standard deviation of each dimension over the codes.
    pub std: Vec<f64>,
    pub mode: CodeMode,
    /// All-zero codes (scored 0).
    pub skipped_codes: usize,
    /// Dimensions with std below [`STD_FLOOR`], left unnormalised.
    pub unnormalised_dims: usize,
    pub num_codes: usize,
}

/// Average Hoyer of a code matrix after per-dimension std normalisation.
pub fn average_hoyer_codes(codes: &[Vec<f64>], mode: CodeMode) -> Result<HoyerReport> {
    let n = codes.len();
    if n == 0 {
        return Err(Error::contract("average hoyer of an empty corpus"));
    }
    let d = codes[0].len();
    if let Some(i) = codes.iter().position(|c| c.len() != d) {
        return Err(Error::contract(format!("code {i} has length {}, expected {d}", codes[i].len())));
    }
    let mut std = vec![0.0; d];
    for (j, s) in std.iter_mut().enumerate() {
        let mean = codes.iter().map(|c| c[j]).sum::<f64>() / n as f64;
        *s = (codes.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    let scale: Vec<f64> = std.iter().map(|&s| if s < STD_FLOOR { 1.0 } else { s }).collect();
    let unnormalised_dims = std.iter().filter(|&&s| s < STD_FLOOR).count();
    let mut total = 0.0;
    let mut skipped = 0;
    let mut buf = vec![0.0; d];
    for c in codes {
        for ((b, v), s) in buf.iter_mut().zip(c).zip(&scale) {
            *b = v / s;
        }
        let (h, zero) = hoyer_checked(&buf)?;
        total += h;
        skipped += zero as usize;
    }
    Ok(HoyerReport { average_hoyer: total / n as f64, std, mode, skipped_codes: skipped, unnormalised_dims, num_codes: n })
}

/// Average Hoyer of one code per sentence from a frozen model.
pub fn average_hoyer(
    store: &ParameterStore,
    config: &ModelConfig,
    corpus: &[TokenSequence],
    mode: CodeMode,
    rng: &mut RngStream,
) -> Result<HoyerReport> {
    if corpus.is_empty() {
        return Err(Error::contract("average hoyer of an empty corpus"));
    }
    let codes: Vec<Vec<f64>> = latent_codes(store, config, corpus, mode, rng)?.into_iter().map(|c| c.z).collect();
    average_hoyer_codes(&codes, mode)
}

/// Writes codes as CSV, one row per sentence.
pub fn write_codes_csv(path: &Path, codes: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in codes {
        let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Mean per-sentence objective terms over a corpus, evaluated in batches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub sentences: usize,
    pub reconstruction: f64,
    pub objective: f64,
}

pub fn reconstruction_report(
    store: &ParameterStore,
    config: &ModelConfig,
    corpus: &[TokenSequence],
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<ReconstructionReport> {
    if corpus.is_empty() || batch_size == 0 {
        return Err(Error::contract("reconstruction report needs sentences and a positive batch size"));
    }
    let (mut rec, mut obj) = (0.0, 0.0);
    for chunk in corpus.chunks(batch_size) {
        let batch = crate::model::Batch::new(chunk)?;
        let mut g = crate::diff::Graph::new();
        let p = store.bind_with(&mut g, |_| false);
        let n = crate::model::objective_graph(&mut g, &p, config, &batch, Weights::of(config), rng)?;
        rec += n.terms.reconstruction * chunk.len() as f64;
        obj += n.terms.objective * chunk.len() as f64;
    }
    let n = corpus.len() as f64;
    Ok(ReconstructionReport { sentences: corpus.len(), reconstruction: rec / n, objective: obj / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_values() {
        assert_eq!(hoyer(&[0.0, 0.0, 5.0, 0.0]).unwrap(), 1.0);
        assert_eq!(hoyer(&[2.5; 4]).unwrap(), 0.0);
        assert_eq!(hoyer(&[3.0, 4.0, 0.0, 0.0]).unwrap(), 0.6);
        assert_eq!(hoyer(&[0.0; 5]).unwrap(), 0.0);
        assert!(matches!(hoyer(&[1.0]), Err(Error::Contract(_))));
        assert!(hoyer(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn scale_invariance() {
        let z = [0.3, -1.2, 0.0, 4.0, 0.01];
        let h = hoyer(&z).unwrap();
        for c in [1e-200, -3.0, 7.5, 1e200] {
            let s: Vec<f64> = z.iter().map(|v| v * c).collect();
            assert_abs_diff_eq!(hoyer(&s).unwrap(), h, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_codes_use_unnormalised_path() {
        let code = vec![1.0, 0.0, 0.0, 2.0];
        let r = average_hoyer_codes(&vec![code.clone(); 10], CodeMode::PosteriorMean).unwrap();
        assert_eq!(r.unnormalised_dims, 4);
        assert_abs_diff_eq!(r.average_hoyer, hoyer(&code).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn order_invariance_and_zero_codes() {
        let mut rng = RngStream::new(5);
        let mut codes: Vec<Vec<f64>> = (0..50).map(|_| rng.normals(6)).collect();
        codes.push(vec![0.0; 6]);
        let a = average_hoyer_codes(&codes, CodeMode::PosteriorSample).unwrap();
        codes.reverse();
        let b = average_hoyer_codes(&codes, CodeMode::PosteriorSample).unwrap();
        assert_abs_diff_eq!(a.average_hoyer, b.average_hoyer, epsilon = 1e-14);
        assert_eq!(a.skipped_codes, 1);
        assert!(average_hoyer_codes(&[], CodeMode::PosteriorMean).is_err());
    }

    #[test]
    fn zeroed_dimensions_raise_sparsity() {
        let mut rng = RngStream::new(11);
        let dense: Vec<Vec<f64>> = (0..5000).map(|_| rng.normals(32)).collect();
        let sparse: Vec<Vec<f64>> = dense.iter().map(|c| c.iter().enumerate().map(|(j, v)| if j < 24 { 0.0 } else { *v }).collect()).collect();
        let a = average_hoyer_codes(&dense, CodeMode::PosteriorSample).unwrap();
        let b = average_hoyer_codes(&sparse, CodeMode::PosteriorSample).unwrap();
        assert!(b.average_hoyer > a.average_hoyer);
        assert_eq!(b.unnormalised_dims, 24);
    }
}
