//! Checkpoint file: a self-describing JSON container with a format-version
//! integer, the model configuration, and a map from parameter name to
//! (shape, row-major values). Values are written as shortest-round-trip
//! decimal literals and parsed exactly, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tensor};
use crate::model::{build_params, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Diff(#[from] crate::autodiff::DiffError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    params: BTreeMap<String, ParamRecord>,
}

pub fn save(path: &Path, store: &ParamStore, config: &ModelConfig) -> Result<()> {
    let mut params = BTreeMap::new();
    for name in store.names() {
        let value = store.get(name)?;
        params.insert(
            name.to_string(),
            ParamRecord {
                shape: value.shape().to_vec(),
                values: value.data().to_vec(),
            },
        );
    }
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        params,
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &file)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, ModelConfig)> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    // Build the expected slot layout from the config, then fill it in; this
    // validates the name set and every shape.
    let mut store = build_params(&file.config, 0)?;
    if store.len() != file.params.len() {
        return Err(CheckpointError::Format(format!(
            "checkpoint has {} parameters, config implies {}",
            file.params.len(),
            store.len()
        )));
    }
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        let record = file
            .params
            .get(&name)
            .ok_or_else(|| CheckpointError::Format(format!("missing parameter `{name}`")))?;
        store.set(&name, Tensor::new(record.shape.clone(), record.values.clone())?)?;
    }
    Ok((store, file.config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::PoolingMode;
    use crate::testutil::tiny_config;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny_config(PoolingMode::NodeAttention, true);
        let store = build_params(&cfg, 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save(&path, &store, &cfg).unwrap();
        let (loaded, loaded_cfg) = load(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for name in store.names() {
            let (a, b) = (store.get(name).unwrap(), loaded.get(name).unwrap());
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let cfg = tiny_config(PoolingMode::MaxPool, false);
        let store = build_params(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save(&path, &store, &cfg).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn save_is_deterministic() {
        let cfg = tiny_config(PoolingMode::NodeAttention, false);
        let store = build_params(&cfg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save(&p1, &store, &cfg).unwrap();
        save(&p2, &store, &cfg).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
