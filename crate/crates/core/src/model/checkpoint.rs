//! Self-describing checkpoint container.
//!
//! Layout: the header line `SLLAB-CKPT-1\n`, a `u64` LE manifest length and
//! the manifest (`key = value` lines, UTF-8), a `u32` LE array count, then per
//! array a `u32` name length, the name, `u32` rows, `u32` cols and
//! `rows·cols` little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::params::ParameterStore;
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const HEADER: &str = "SLLAB-CKPT-1";
const MODEL_PREFIX: &str = "model.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub manifest: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Format(format!("checkpoint text is not UTF-8: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(HEADER.as_bytes());
        out.push(b'\n');
        let mut manifest = String::new();
        for (k, v) in &self.manifest {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::contract(format!("manifest entry '{k}' cannot be stored")));
            }
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = r.take(HEADER.len() + 1).map_err(|_| Error::Format("not a checkpoint (header missing)".into()))?;
        if &header[..HEADER.len()] != HEADER.as_bytes() || header[HEADER.len()] != b'\n' {
            return Err(Error::Format(format!("not a checkpoint: expected header '{HEADER}'")));
        }
        let n = r.u64()? as usize;
        let mut manifest = BTreeMap::new();
        for line in r.text(n)?.lines() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Format(format!("bad manifest line '{line}'")))?;
            manifest.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = r.text(len)?.to_string();
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let raw = r.take(rows * cols * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            arrays.insert(name, Tensor::new(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { manifest, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Model configuration recorded under the `model.` manifest keys.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let kv: BTreeMap<String, String> = self
            .manifest
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(MODEL_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        ModelConfig::from_kv(&kv)
    }

    /// Model parameters (arrays without a `/` in their name).
    pub fn parameters(&self, config: &ModelConfig) -> Result<ParameterStore> {
        let tensors = self.arrays.iter().filter(|(k, _)| !k.contains('/')).map(|(k, v)| (k.clone(), v.clone())).collect();
        ParameterStore::from_tensors(config, tensors)
    }

    /// A checkpoint holding `config` and `store`; further state goes into
    /// `manifest` and arrays named `section/…`.
    pub fn of_model(config: &ModelConfig, store: &ParameterStore) -> Self {
        let manifest = config.to_kv().into_iter().map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v)).collect();
        let arrays = store.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        Self { manifest, arrays }
    }
}

pub fn save_model(path: impl AsRef<Path>, config: &ModelConfig, store: &ParameterStore) -> Result<()> {
    Checkpoint::of_model(config, store).write(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelConfig, ParameterStore)> {
    let ckpt = Checkpoint::read(path)?;
    let config = ckpt.model_config()?;
    let store = ckpt.parameters(&config)?;
    Ok((config, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::RngStream;
    use crate::model::Variant;

    #[test]
    fn round_trip_rounds_to_f32() {
        let mut c = ModelConfig::new(Variant::Hsvae, 20);
        c.latent_dim = 3;
        c.hidden_dim = 4;
        c.embed_dim = 2;
        let s = ParameterStore::init(&c, &mut RngStream::new(8)).unwrap();
        let mut ck = Checkpoint::of_model(&c, &s);
        ck.manifest.insert("train.step".into(), "17".into());
        ck.arrays.insert("adam/m".into(), Tensor::full(1, 2, 0.25));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.manifest, ck.manifest);
        assert_eq!(back.model_config().unwrap(), c);
        let restored = back.parameters(&c).unwrap();
        for (name, t) in s.iter() {
            let r = restored.get(name).unwrap();
            for (a, b) in t.data().iter().zip(r.data()) {
                assert_eq!(*b, *a as f32 as f64);
            }
        }
        assert_eq!(back.arrays["adam/m"].data(), &[0.25, 0.25]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE\n"), Err(Error::Format(_))));
        let good = Checkpoint::default().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&good).is_ok());
        assert!(matches!(Checkpoint::from_bytes(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
    }
}
