//! Binary checkpoint layout:
//!
//! ```text
//! magic  b"IMPCKPT\0"
//! u32    format version (little-endian)
//! u32    header length in bytes
//! header JSON {"config": ModelConfig, "tensors": [{"name", "shape"}, ...]}
//! f32 LE tensors, concatenated in header order
//! u64    FNV-1a checksum of all preceding bytes
//! ```

use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelParams, TensorSpec};
use crate::error::{Error, Result};
use crate::io;

const MAGIC: &[u8; 8] = b"IMPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorSpec>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: params.config.clone(),
        tensors: params.layout.specs.clone(),
    })?;
    let mut buf = Vec::with_capacity(16 + header.len() + 4 * params.data.len() + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for x in &params.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    let mut out = io::create(path)?;
    out.write_all(&buf).map_err(|e| Error::file(path, e))?;
    out.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(
        take(bytes, 4)?.try_into().expect("4 bytes"),
    ))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut raw = Vec::new();
    io::open(path)?
        .read_to_end(&mut raw)
        .map_err(|e| Error::file(path, e))?;
    if raw.len() < MAGIC.len() + 16 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, tail) = raw.split_at(raw.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut bytes = body;
    if take(&mut bytes, MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let header_len = read_u32(&mut bytes)? as usize;
    let header: Header = serde_json::from_slice(take(&mut bytes, header_len)?)?;
    let expected = Layout::new(&header.config);
    let same = header.tensors.len() == expected.specs.len()
        && header
            .tensors
            .iter()
            .zip(&expected.specs)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if !same {
        return Err(Error::Checkpoint(
            "tensor manifest does not match its config".into(),
        ));
    }
    if bytes.len() != 4 * expected.total {
        return Err(Error::Checkpoint("tensor data has the wrong size".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    ModelParams::from_parts(header.config, data)
}

impl ModelParams {
    /// Loads a checkpoint and rejects it unless it was saved with `expected`.
    pub fn load_matching(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
        let params = load_checkpoint(path)?;
        if &params.config != expected {
            return Err(Error::Checkpoint(format!(
                "{} was saved with a different model configuration",
                path.display()
            )));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::Mode;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 8,
            vocab_size: 10,
            n_aug_layers: 2,
            dropout: 0.1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelParams::init(cfg(), 3).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let a = m.encode(&[1, 2, 3], Mode::Eval).unwrap();
        let b = back.encode(&[1, 2, 3], Mode::Eval).unwrap();
        assert_eq!(m.classify(&a), back.classify(&b));
    }

    #[test]
    fn corruption_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ModelParams::init(cfg(), 3).unwrap(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn cross_config_load_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ModelParams::init(cfg(), 3).unwrap(), &path).unwrap();
        let mut other = cfg();
        other.d_model = 16;
        assert!(ModelParams::load_matching(&path, &other).is_err());
        assert!(ModelParams::load_matching(&path, &cfg()).is_ok());
    }
}
