//! GAP + softmax classification head over a frozen backbone, and its
//! training loop.

mod adam;
mod checkpoint;
mod head;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{BackboneError, SharedExtractor};
use crate::dataset::{ClassSet, DatasetManifest, FrameRecord, Split};
use crate::preprocess::{self, BatchTensor, PreprocessError, INPUT_SIZE};

pub use adam::{Adam, AdamParams};
pub use checkpoint::{BackboneRef, Checkpoint, CHECKPOINT_FORMAT};
pub use head::{argmax, categorical_crossentropy, global_average_pool, softmax, Head, HeadGrad, PROB_CLIP};
pub use train::{train, train_on_manifest, EpochRecord, TrainHistory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("class mismatch: model has {model:?}, data has {data:?}")]
    ClassMismatch { model: Vec<String>, data: Vec<String> },
    #[error("input shape error: {0}")]
    InputShape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How gradient sums are reduced across a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    /// Fixed summation order; bit-identical reruns.
    #[default]
    Sequential,
    /// Rayon reduction; reruns agree statistically, not bitwise.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamParams,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub image_size: usize,
    pub reduction: ReductionMode,
    /// Restore the head from the epoch with the best validation accuracy.
    pub keep_best_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamParams::default(),
            batch_size: 8,
            epochs: 20,
            seed: 0,
            image_size: INPUT_SIZE,
            reduction: ReductionMode::Sequential,
            keep_best_val: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let a = &self.adam;
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.beta1 <= 0.0 || a.beta2 <= 0.0 {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(a.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.image_size == 0 {
            return bad("image size must be positive");
        }
        Ok(())
    }
}

/// Head initialisation recorded with every run.
pub const INIT_SCHEME: &str = "glorot-uniform(+-sqrt(6/(fan_in+fan_out))), bias=0";

#[derive(Clone)]
pub struct ClassifierModel {
    pub backbone: SharedExtractor,
    pub head: Head,
    pub classes: ClassSet,
}

impl std::fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("backbone", &self.backbone.spec().id)
            .field("checksum", &self.backbone.checksum())
            .field("head", &(self.head.channels, self.head.classes))
            .field("classes", &self.classes)
            .finish()
    }
}

/// Pooled backbone features for a list of frames, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub frame_ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl ClassifierModel {
    /// Attaches a freshly initialised head to a frozen backbone.
    pub fn build(backbone: SharedExtractor, classes: ClassSet, seed: u64) -> Result<Self, TrainError> {
        if classes.len() < 2 {
            return Err(TrainError::TooFewClasses(classes.len()));
        }
        let head = Head::glorot_uniform(backbone.spec().feature_channels, classes.len(), seed);
        Ok(ClassifierModel { backbone, head, classes })
    }

    /// Only the head is trainable.
    pub fn trainable_parameter_count(&self) -> usize {
        self.head.parameter_count()
    }

    pub fn pooled_features(&self, batch: &BatchTensor) -> Result<Vec<Vec<f64>>, TrainError> {
        let maps = self.backbone.extract(batch)?;
        Ok((0..maps.n)
            .map(|i| global_average_pool(maps.sample(i), maps.height, maps.width, maps.channels))
            .collect())
    }

    /// Softmax probabilities, one row per input image.
    pub fn predict_proba(&self, batch: &BatchTensor) -> Result<Vec<Vec<f64>>, TrainError> {
        self.pooled_features(batch)?
            .iter()
            .map(|f| self.head.predict_proba(f))
            .collect()
    }

    pub fn predict_proba_features(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrainError> {
        features
            .iter()
            .map(|f| {
                if f.len() != self.head.channels {
                    return Err(TrainError::InputShape(format!(
                        "feature length {} != head width {}",
                        f.len(),
                        self.head.channels
                    )));
                }
                self.head.predict_proba(f)
            })
            .collect()
    }

    /// Runs the frozen backbone + GAP over `frames` in chunks of `chunk`.
    pub fn extract_feature_set(
        &self,
        frames: &[&FrameRecord],
        base_dir: &Path,
        image_size: usize,
        chunk: usize,
    ) -> Result<FeatureSet, TrainError> {
        let norm = self.backbone.spec().normalization;
        let mut out = FeatureSet {
            frame_ids: Vec::with_capacity(frames.len()),
            features: Vec::with_capacity(frames.len()),
            labels: Vec::with_capacity(frames.len()),
        };
        for group in frames.chunks(chunk.max(1)) {
            let batch = preprocess::load_batch(group, base_dir, &norm, &self.classes, image_size)?;
            out.features.extend(self.pooled_features(&batch)?);
            for f in group {
                out.frame_ids.push(f.frame_id.clone());
                out.labels.push(
                    self.classes
                        .index_of(&f.class)
                        .ok_or_else(|| PreprocessError::UnknownLabel(f.class.clone()))?,
                );
            }
        }
        Ok(out)
    }

    pub fn check_classes(&self, manifest: &DatasetManifest) -> Result<(), TrainError> {
        if self.classes != manifest.classes {
            return Err(TrainError::ClassMismatch {
                model: self.classes.names().to_vec(),
                data: manifest.classes.names().to_vec(),
            });
        }
        Ok(())
    }
}

/// Features for one split of a manifest, in manifest order.
pub fn split_features(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Split,
    image_size: usize,
) -> Result<FeatureSet, TrainError> {
    model.check_classes(manifest)?;
    let frames: Vec<&FrameRecord> = manifest.frames_in(split).collect();
    model.extract_feature_set(&frames, base_dir, image_size, 32)
}
