use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ClassifierModel, Head, TrainConfig, TrainError, INIT_SCHEME};
use crate::backbones::{Registry, WeightSource, WeightsKind};
use crate::dataset::ClassSet;

pub const CHECKPOINT_FORMAT: &str = "harbench-head";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneRef {
    pub id: String,
    pub weights: WeightsKind,
    pub checksum: String,
    /// Present for stub backbones, which are fully determined by it.
    pub stub_seed: Option<u64>,
    pub feature_channels: usize,
}

/// Trained head plus everything needed to rebuild the model.
///
/// Head parameters are little-endian f64, base64 encoded, so a round trip is
/// bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub backbone: BackboneRef,
    pub classes: ClassSet,
    pub train_config: TrainConfig,
    pub init_scheme: String,
    pub head_weights: String,
    pub head_bias: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>, TrainError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| TrainError::Checkpoint(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(TrainError::Checkpoint(format!(
            "{what}: expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn from_model(model: &ClassifierModel, source: &WeightSource, config: &TrainConfig) -> Self {
        let spec = model.backbone.spec();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            backbone: BackboneRef {
                id: spec.id.clone(),
                weights: model.backbone.weights_kind(),
                checksum: model.backbone.checksum().to_string(),
                stub_seed: match source {
                    WeightSource::Stub { seed } => Some(*seed),
                    WeightSource::Pretrained { .. } => None,
                },
                feature_channels: spec.feature_channels,
            },
            classes: model.classes.clone(),
            train_config: config.clone(),
            init_scheme: INIT_SCHEME.into(),
            head_weights: encode(&model.head.weights),
            head_bias: encode(&model.head.bias),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| TrainError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(path, self.to_json()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn head(&self) -> Result<Head, TrainError> {
        let c = self.backbone.feature_channels;
        let k = self.classes.len();
        Ok(Head {
            channels: c,
            classes: k,
            weights: decode(&self.head_weights, c * k, "head weights")?,
            bias: decode(&self.head_bias, k, "head bias")?,
        })
    }

    /// The weight source a stub checkpoint was trained with; pretrained ones
    /// need the caller to supply a cache directory.
    pub fn stub_source(&self) -> Option<WeightSource> {
        self.backbone.stub_seed.map(|seed| WeightSource::Stub { seed })
    }

    /// Reloads the backbone from `source` and refuses to continue if its
    /// parameters differ from the ones the head was trained on.
    pub fn into_model(&self, registry: &Registry, source: &WeightSource) -> Result<ClassifierModel, TrainError> {
        let backbone = registry.load(&self.backbone.id, source)?;
        if backbone.checksum() != self.backbone.checksum {
            return Err(TrainError::Checkpoint(format!(
                "backbone {} checksum {} does not match checkpoint {}",
                self.backbone.id,
                backbone.checksum(),
                self.backbone.checksum
            )));
        }
        if backbone.spec().feature_channels != self.backbone.feature_channels {
            return Err(TrainError::Checkpoint("feature width changed".into()));
        }
        Ok(ClassifierModel {
            backbone,
            head: self.head()?,
            classes: self.classes.clone(),
        })
    }
}
