//! Checkpoint files with their vocabulary stored alongside as
//! `<checkpoint>.vocab.json`.

use std::path::{Path, PathBuf};

use qrqa_neural::{read_checkpoint, write_checkpoint, CheckpointHeader, ParameterStore, Tensor, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::text::Vocabulary;

pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab.json");
    PathBuf::from(s)
}

pub fn save_model(
    path: &Path,
    module: &str,
    config: &qrqa_neural::TransformerConfig,
    extra: serde_json::Value,
    vocab: &Vocabulary,
    store: &ParameterStore,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        module: module.to_string(),
        config: config.clone(),
        extra,
        vocab_hash: vocab.hash(),
        step: store.step(),
        seed: store.seed(),
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &header, store)?;
    vocab.save(&vocab_path(path))?;
    fsutil::write_atomic(path, &bytes)
}

pub struct LoadedModel {
    pub header: CheckpointHeader,
    pub vocab: Vocabulary,
    pub tensors: Vec<(String, Tensor)>,
}

/// Reads a checkpoint and its vocabulary, checking the module tag and the
/// vocabulary hash.
pub fn load_model(path: &Path, module: &str, producer: &'static str) -> Result<LoadedModel> {
    fsutil::require(path, producer)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, tensors) = read_checkpoint(&bytes[..])?;
    if header.module != module {
        return Err(Error::invalid(format!(
            "{} holds a `{}` model, expected `{module}`",
            path.display(),
            header.module
        )));
    }
    let vocab = Vocabulary::load(&vocab_path(path))?;
    if vocab.hash() != header.vocab_hash {
        return Err(Error::invalid(format!(
            "{}: vocabulary does not match the checkpoint",
            path.display()
        )));
    }
    Ok(LoadedModel { header, vocab, tensors })
}
