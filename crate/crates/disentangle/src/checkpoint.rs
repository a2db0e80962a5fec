//! Checkpoint files: model and training configuration plus the full training
//! state (parameters, optimizer moments, step counter, shuffle seed).

use std::path::Path;

use disentangle_core::{ModelConfig, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{AppError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)
            .map_err(|reason| AppError::CheckpointLoad { version: CHECKPOINT_VERSION, reason })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    container::write_atomic(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = container::read(path).map_err(|e| AppError::CheckpointLoad {
        version: CHECKPOINT_VERSION,
        reason: e.to_string(),
    })?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let net = disentangle_core::Network::new(ckpt.model.clone())?;
    net.check_params(&ckpt.state.params).map_err(|e| AppError::CheckpointLoad {
        version: CHECKPOINT_VERSION,
        reason: e.to_string(),
    })?;
    Ok(ckpt)
}
