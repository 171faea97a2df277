//! Versioned JSON checkpoints of trained representation models.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use pdrfe_core::model::ModelParams;
use pdrfe_core::trainer::ExportedEmbeddings;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::io::{read_json, write_json};
use crate::plan::Variant;

pub const CHECKPOINT_FORMAT: &str = "pdrfe-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub variant: Option<Variant>,
    pub seed: u64,
    pub config_hash: String,
    pub artifact_version: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, variant: Option<Variant>, seed: u64, config_hash: String) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            variant,
            seed,
            config_hash,
            artifact_version: crate::plan::artifact_version(),
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_json(path)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(LabError::format(
                path,
                0,
                format!("unsupported checkpoint {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}", ckpt.format, ckpt.version),
            ));
        }
        let n = ckpt.params.config.stack().len();
        if ckpt.params.layers.len() != n || ckpt.params.layers.iter().zip(ckpt.params.config.stack()).any(|(l, k)| l.kind() != k) {
            return Err(LabError::format(path, 0, "layer list does not match the model config"));
        }
        if ckpt.params.personalizer.is_some() != ckpt.params.config.personalizer {
            return Err(LabError::format(path, 0, "personalizer presence does not match the model config"));
        }
        Ok(ckpt)
    }
}

pub fn save_embeddings(path: &Path, emb: &ExportedEmbeddings) -> Result<()> {
    write_json(path, emb)
}

pub fn load_embeddings(path: &Path) -> Result<ExportedEmbeddings> {
    read_json(path)
}
