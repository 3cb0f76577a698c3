//! `IFN1` model checkpoints: magic, version, length-prefixed JSON header,
//! then every parameter as a little-endian `f32`.

use std::path::Path;

use handsar_nn::model::{IfnetArch, UnfoldingModel};
use handsar_nn::params::ParamSpec;
use handsar_nn::train::{EpochLog, TrainConfig};
use handsar_nn::Scalar;
use serde::{Deserialize, Serialize};

use crate::binfmt::{atomic_write, read_bytes, Reader};
use crate::error::{IoError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IFN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub train_config: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochLog>,
    pub dataset: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: IfnetArch,
    pub n_stages: usize,
    pub n_resblocks: usize,
    pub params: Vec<ParamSpec>,
    pub training: TrainingMeta,
}

pub fn encode_checkpoint<T: Scalar>(model: &UnfoldingModel<T>, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        arch: model.arch.clone(),
        n_stages: model.arch.n_stages,
        n_resblocks: model.arch.n_resblocks,
        params: model.params.specs().to_vec(),
        training: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| IoError::DimensionOverflow("checkpoint header exceeds 4 GiB".into()))?;
    let values = model.params.values();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * values.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&(v.wide() as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(UnfoldingModel<f32>, TrainingMeta)> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let json_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(json_len)?)?;
    if header.n_stages != header.arch.n_stages || header.n_resblocks != header.arch.n_resblocks {
        return Err(IoError::Invalid("stage or ResBlock count disagrees with the architecture".into()));
    }
    let expected: usize = header.params.iter().map(|s| s.len).sum();
    let payload = r.rest();
    if payload.len() != 4 * expected {
        return Err(IoError::HeaderPayloadMismatch {
            header: expected,
            payload: payload.len() / 4,
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = UnfoldingModel::<f32>::new(header.arch.clone(), 0)?;
    model.params.load_values(&header.params, values)?;
    Ok((model, header.training))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, model: &UnfoldingModel<T>, meta: &TrainingMeta) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model, meta)?)
}

pub fn read_checkpoint(path: &Path) -> Result<(UnfoldingModel<f32>, TrainingMeta)> {
    decode_checkpoint(&read_bytes(path)?)
}
