//! Parameter checkpoint container.
//!
//! Layout: the 8-byte magic `GRNDCKPT`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then each parameter's values as little-endian `f32`
//! in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, ParamStore, Tensor};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"GRNDCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamEntry>,
    /// Model-specific configuration (vocabularies, dimensions, flags).
    #[serde(default)]
    pub model: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: ParamStore<T>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut out: W,
    kind: &str,
    seed: u64,
    model: serde_json::Value,
    params: &ParamStore<T>,
) -> Result<(), NumericsError> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        seed,
        step: params.step(),
        params: params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        model,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, t) in params.iter() {
        for v in t.data() {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<Checkpoint<T>, NumericsError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| NumericsError::Checkpoint("header too large".into()))?;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;

    let mut params = ParamStore::new();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        params.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NumericsError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    params.set_step(header.step);
    Ok(Checkpoint { header, params })
}
