//! Checkpoint directories: `weights.bin` plus `metadata.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackboneId, BackboneSpec, Classifier, TinyCnn, WeightsProvider};
use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::pipeline::{AugmentationConfig, CHANNELS, IMAGE_SIZE};
use crate::taxonomy::LabelTaxonomy;
use crate::training::TrainingConfig;

const MAGIC: &[u8; 8] = b"NGWEIGHT";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessInfo {
    pub image_size: usize,
    pub channels: usize,
    pub value_range: [f64; 2],
    pub resize: String,
    pub augmentation: AugmentationConfig,
}

impl Default for PreprocessInfo {
    fn default() -> Self {
        Self {
            image_size: IMAGE_SIZE,
            channels: CHANNELS,
            value_range: [0.0, 1.0],
            resize: "bilinear".into(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub best_val_loss: Option<f64>,
    pub best_val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub backbone_id: BackboneId,
    pub taxonomy: LabelTaxonomy,
    pub preprocess: PreprocessInfo,
    pub training_config: Option<TrainingConfig>,
    pub metrics: CheckpointMetrics,
    pub epoch: Option<usize>,
    pub fine_tune_backbone: bool,
    pub num_params: usize,
    pub weights_sha256: String,
}

impl CheckpointMetadata {
    /// Metadata for an untrained or externally trained classifier.
    pub fn bare(c: &Classifier) -> Self {
        Self {
            backbone_id: c.spec().id,
            taxonomy: c.taxonomy().clone(),
            preprocess: PreprocessInfo::default(),
            training_config: None,
            metrics: CheckpointMetrics::default(),
            epoch: None,
            fine_tune_backbone: c.fine_tune_backbone,
            num_params: c.num_params(),
            weights_sha256: String::new(),
        }
    }
}

/// Weights plus metadata, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: Vec<f64>,
    pub metadata: CheckpointMetadata,
}

fn encode_weights(weights: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

fn decode_weights(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::CheckpointMismatch("weights.bin has no valid header".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != count * 8 {
        return Err(Error::CheckpointMismatch(format!(
            "weights.bin declares {count} values but holds {} bytes",
            body.len()
        )));
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

impl Checkpoint {
    pub fn capture(c: &Classifier, mut metadata: CheckpointMetadata) -> Self {
        let weights = c.params();
        metadata.backbone_id = c.spec().id;
        metadata.taxonomy = c.taxonomy().clone();
        metadata.num_params = weights.len();
        metadata.fine_tune_backbone = c.fine_tune_backbone;
        metadata.weights_sha256 = hex::encode(Sha256::digest(encode_weights(&weights)));
        Self { weights, metadata }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(WEIGHTS_FILE);
        fs::write(&path, encode_weights(&self.weights)).map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join(METADATA_FILE), &self.metadata)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let metadata: CheckpointMetadata = read_json(&dir.join(METADATA_FILE))?;
        let path = dir.join(WEIGHTS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != metadata.weights_sha256 {
            return Err(Error::CheckpointMismatch(format!("weights digest {digest} does not match metadata")));
        }
        let weights = decode_weights(&bytes)?;
        if weights.len() != metadata.num_params {
            return Err(Error::CheckpointMismatch(format!(
                "metadata says {} parameters, weights hold {}",
                metadata.num_params,
                weights.len()
            )));
        }
        Ok(Self { weights, metadata })
    }

    /// Rebuilds the classifier. The stored taxonomy must equal `expected`,
    /// order included.
    pub fn restore(&self, expected: &LabelTaxonomy, provider: &WeightsProvider) -> Result<Classifier> {
        if &self.metadata.taxonomy != expected {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint taxonomy {:?} differs from expected {:?}",
                self.metadata.taxonomy.names(),
                expected.names()
            )));
        }
        let id = self.metadata.backbone_id;
        let backbone: Box<dyn super::Backbone> = match id {
            BackboneId::TinyTest => Box::new(TinyCnn::new(0)),
            _ => provider.load(&BackboneSpec::for_id(id))?,
        };
        let mut c = Classifier::from_parts(backbone, self.metadata.taxonomy.clone());
        c.fine_tune_backbone = self.metadata.fine_tune_backbone;
        c.set_params(&self.weights).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        Ok(c)
    }
}
