//! Checkpoint files: one line of JSON header, a newline, then the parameters
//! as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};

const FORMAT: &str = "leadlag-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub tensors: Vec<(String, usize, usize)>,
    pub param_count: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub fn write_checkpoint(path: &Path, params: &ModelParams, seed: u64, config_hash: &str) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        spec: *params.spec(),
        tensors: params.layout().slots.iter().map(|s| (s.name.clone(), s.rows, s.cols)).collect(),
        param_count: params.param_count(),
        seed,
        config_hash: config_hash.to_owned(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(params.param_count() * 8);
    for v in params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing checkpoint header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(path, e.to_string()))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::format(path, format!("unsupported checkpoint {} v{}", header.format, header.version)));
    }
    let payload = &bytes[split + 1..];
    if payload.len() != header.param_count * 8 {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, header promises {} parameters", payload.len(), header.param_count),
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ModelParams::from_values(header.spec, values).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, params))
}
