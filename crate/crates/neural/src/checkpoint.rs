//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "QRQACKPT"
//! version      u32       CHECKPOINT_VERSION
//! header_len   u32
//! header       JSON      CheckpointHeader
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   rows       u64
//!   cols       u64
//!   values     rows*cols f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::transformer::TransformerConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QRQACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Model family, e.g. "rewriter", "reranker", "reader".
    pub module: String,
    pub config: TransformerConfig,
    /// Module-specific settings (mixture count and the like).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub vocab_hash: String,
    pub step: u64,
    pub seed: u64,
}

fn ckpt_err(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

fn io_err(e: std::io::Error) -> NeuralError {
    NeuralError::Io {
        path: "<checkpoint stream>".into(),
        source: e,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, store: &ParameterStore) -> Result<()> {
    let header_json = serde_json::to_vec(header).map_err(|e| ckpt_err(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + header_json.len() + store.num_values() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ckpt_err("truncated file"))?;
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
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(ckpt_err("bad magic"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(format!("unsupported format version {version}")));
    }
    let hlen = c.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?).map_err(|e| ckpt_err(format!("header: {e}")))?;
    header.config.validate()?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
            .to_string();
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| ckpt_err("tensor too large"))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| ckpt_err("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if c.pos != bytes.len() {
        return Err(ckpt_err("trailing bytes after last tensor"));
    }
    Ok((header, tensors))
}

/// Copies loaded tensors into a freshly initialized store, requiring the
/// exact same parameter names and shapes.
pub fn restore_into(store: &mut ParameterStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(ckpt_err(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store.id(&name)?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(ckpt_err(format!(
                "tensor `{name}` has shape {:?}, config implies {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::init_transformer;

    fn setup() -> (CheckpointHeader, ParameterStore) {
        let cfg = TransformerConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 8,
            max_seq_len: 6,
            feed_forward_dim: 16,
            causal: true,
            gate_attention_layer: None,
        };
        let mut store = ParameterStore::new(3);
        init_transformer(&mut store, "dec", &cfg, 11, 0.02).unwrap();
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            module: "rewriter".into(),
            config: cfg,
            extra: serde_json::json!({"mixtures": 2}),
            vocab_hash: "abc".into(),
            step: 17,
            seed: 3,
        };
        (header, store)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (header, store) = setup();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &header, &store).unwrap();
        let (h2, tensors) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(h2, header);
        let mut fresh = ParameterStore::new(99);
        init_transformer(&mut fresh, "dec", &header.config, 11, 0.02).unwrap();
        restore_into(&mut fresh, tensors).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (header, store) = setup();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &header, &store).unwrap();
        let (_, tensors) = read_checkpoint(&bytes[..]).unwrap();
        let mut other = ParameterStore::new(0);
        init_transformer(&mut other, "dec", &header.config, 12, 0.02).unwrap();
        let err = restore_into(&mut other, tensors).unwrap_err();
        assert!(err.to_string().contains("tok_emb"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let (header, store) = setup();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &header, &store).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(&bytes[..]).is_err());
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }
}
