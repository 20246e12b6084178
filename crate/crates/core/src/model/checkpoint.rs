use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64 payload, base64 encoded.
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, payload: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| Error::data(format!("tensor {name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::data(format!(
            "tensor {name}: payload of {} bytes is not a whole number of f64",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Serializes the configuration and every tensor in registration order.
pub fn to_json(model: &Model) -> Result<String> {
    let p = &model.params;
    let file = CheckpointFile {
        config: model.config.clone(),
        tensors: p
            .ids()
            .map(|id| TensorRecord {
                name: p.name(id).to_string(),
                shape: p.get(id).shape().to_vec(),
                data: encode(p.get(id).data()),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<Model> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    let tensors = file
        .tensors
        .into_iter()
        .map(|r| {
            let data = decode(&r.name, &r.data)?;
            Ok((r.name, Tensor::new(r.shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_tensors(file.config, tensors)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
