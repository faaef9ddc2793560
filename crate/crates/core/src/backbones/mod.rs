//! Frozen pretrained feature extractors behind one interface.
//!
//! A backbone is described by data ([`BackboneSpec`]): output depth, the
//! spatial reduction it applies, and the input normalization its published
//! weights expect. Two weight sources exist: pretrained files from the
//! weights cache, and a seeded stub with the same output geometry that lets
//! the whole pipeline run offline.

mod registry;
mod stub;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::BatchTensor;

pub use registry::{load_backbone, pretrained_file, pretrained_file_checksum, Registry, WEIGHTS_DIR_ENV};
pub use stub::StubExtractor;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("unknown backbone '{id}' (registered: {})", .known.join(", "))]
    UnknownBackbone { id: String, known: Vec<String> },
    #[error("pretrained weights for '{id}' unavailable: {reason}")]
    WeightsUnavailable { id: String, reason: String },
    #[error("input shape error: {0}")]
    InputShape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Per-channel affine input map `y = x * scale + offset`, applied after an
/// optional RGB to BGR reorder. Constants are indexed in output order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub order: ChannelOrder,
    pub scale: [f32; 3],
    pub offset: [f32; 3],
}

impl Normalization {
    /// `x / 127.5 - 1`, range [-1, 1].
    pub const SYMMETRIC_UNIT: Normalization = Normalization {
        order: ChannelOrder::Rgb,
        scale: [1.0 / 127.5; 3],
        offset: [-1.0; 3],
    };

    /// BGR with ImageNet channel means subtracted, no scaling.
    pub const CAFFE_BGR_MEAN: Normalization = Normalization {
        order: ChannelOrder::Bgr,
        scale: [1.0; 3],
        offset: [-103.939, -116.779, -123.68],
    };

    fn source_channel(&self, out_c: usize) -> usize {
        match self.order {
            ChannelOrder::Rgb => out_c,
            ChannelOrder::Bgr => 2 - out_c,
        }
    }

    /// Maps one RGB pixel in [0, 255] to backbone input space.
    pub fn apply_pixel(&self, rgb: [f32; 3]) -> [f32; 3] {
        std::array::from_fn(|c| rgb[self.source_channel(c)] * self.scale[c] + self.offset[c])
    }

    /// Inverse of [`Normalization::apply_pixel`].
    pub fn invert_pixel(&self, v: [f32; 3]) -> [f32; 3] {
        let mut rgb = [0.0; 3];
        for (c, value) in v.iter().enumerate() {
            rgb[self.source_channel(c)] = (value - self.offset[c]) / self.scale[c];
        }
        rgb
    }

    /// Image of the valid raw range [0, 255] for output channel `c`.
    pub fn output_range(&self, c: usize) -> (f32, f32) {
        let a = self.offset[c];
        let b = 255.0 * self.scale[c] + self.offset[c];
        (a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "amount")]
pub enum Padding {
    Valid,
    Same,
    Explicit(usize),
}

/// One spatial reduction in a backbone (strided conv or pool). Stages that
/// keep resolution are omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Reduction {
    pub const fn new(kernel: usize, stride: usize, padding: Padding) -> Self {
        Reduction { kernel, stride, padding }
    }

    pub fn apply(&self, n: usize) -> Option<usize> {
        match self.padding {
            Padding::Same => Some(n.div_ceil(self.stride)).filter(|&m| m > 0),
            Padding::Valid => (n >= self.kernel).then(|| (n - self.kernel) / self.stride + 1),
            Padding::Explicit(p) => {
                let padded = n + 2 * p;
                (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: String,
    pub display_name: String,
    pub feature_channels: usize,
    pub min_input: usize,
    pub normalization: Normalization,
    pub weight_source: String,
    pub approx_params: u64,
    pub reductions: Vec<Reduction>,
}

impl BackboneSpec {
    /// Spatial size of the final feature map for an `h x w` input.
    pub fn feature_grid(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let fold = |n: usize| self.reductions.iter().try_fold(n, |n, r| r.apply(n));
        Some((fold(h)?, fold(w)?))
    }

    pub fn check_input(&self, h: usize, w: usize, c: usize) -> Result<(usize, usize), BackboneError> {
        if c != 3 {
            return Err(BackboneError::InputShape(format!("{} expects 3 channels, got {c}", self.id)));
        }
        if h < self.min_input || w < self.min_input {
            return Err(BackboneError::InputShape(format!(
                "{} needs inputs of at least {0}x{0}, got {h}x{w}",
                self.min_input
            )));
        }
        self.feature_grid(h, w)
            .ok_or_else(|| BackboneError::InputShape(format!("{h}x{w} collapses inside {}", self.id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsKind {
    Pretrained,
    Stub,
}

impl fmt::Display for WeightsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightsKind::Pretrained => "pretrained",
            WeightsKind::Stub => "stub",
        })
    }
}

/// Where `load_backbone` gets parameters from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    /// `<dir>/<id>.onnx`, a headless export of the published weights.
    Pretrained { dir: PathBuf },
    /// Seeded random parameters with the real output geometry.
    Stub { seed: u64 },
}

impl WeightSource {
    pub fn kind(&self) -> WeightsKind {
        match self {
            WeightSource::Pretrained { .. } => WeightsKind::Pretrained,
            WeightSource::Stub { .. } => WeightsKind::Stub,
        }
    }
}

/// Batch of feature maps, layout `n x h x w x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMaps {
    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.height, self.width, self.channels]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.height * self.width * self.channels;
        &self.data[i * len..(i + 1) * len]
    }
}

/// A frozen feature extractor. No method takes `&mut self`; parameters can
/// not change after load.
pub trait FeatureExtractor: Send + Sync {
    fn spec(&self) -> &BackboneSpec;

    fn weights_kind(&self) -> WeightsKind;

    /// Checksum recorded when the parameters were loaded.
    fn checksum(&self) -> &str;

    /// Checksum recomputed from the parameters as they are now.
    fn parameter_checksum(&self) -> String;

    fn trainable(&self) -> bool {
        false
    }

    fn extract(&self, batch: &BatchTensor) -> Result<FeatureMaps, BackboneError>;
}

pub type SharedExtractor = Arc<dyn FeatureExtractor>;

pub(crate) fn checksum_f32(label: &str, parts: &[&[f32]]) -> String {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    for part in parts {
        for v in part.iter() {
            h.update(v.to_le_bytes());
        }
    }
    format!("sha256:{}", hex(&h.finalize()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
