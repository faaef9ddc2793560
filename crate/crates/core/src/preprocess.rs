//! Frame images to backbone-ready tensors.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbones::{BackboneError, Normalization, Registry};
use crate::dataset::{ClassSet, FrameRecord};

/// Working resolution (square).
pub const INPUT_SIZE: usize = 160;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot load frame {path}: {reason}")]
    FrameLoad { path: PathBuf, reason: String },
    #[error("split is empty")]
    EmptySplit,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("label '{0}' is not in the class set")]
    UnknownLabel(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

/// One image, layout `height x width x 3`, RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn from_rgb(img: &RgbImage) -> Self {
        ImageTensor {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        ImageTensor {
            height,
            width,
            data: (0..height * width).flat_map(|_| rgb).collect(),
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies a backbone normalization pixel by pixel.
    pub fn normalized(&self, norm: &Normalization) -> ImageTensor {
        let data = self
            .data
            .chunks_exact(3)
            .flat_map(|px| norm.apply_pixel([px[0], px[1], px[2]]))
            .collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// `n` stacked images (`n x h x w x c`) with optional one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTensor {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub labels: Option<Vec<Vec<f32>>>,
}

impl BatchTensor {
    /// Stacks same-sized images; `labels` are class indices below `k`.
    pub fn stack(images: &[ImageTensor], labels: Option<(&[usize], usize)>) -> Self {
        let (height, width) = images.first().map_or((0, 0), |i| (i.height, i.width));
        debug_assert!(images.iter().all(|i| i.height == height && i.width == width));
        let labels = labels.map(|(idx, k)| idx.iter().map(|&i| one_hot(i, k)).collect());
        BatchTensor {
            n: images.len(),
            height,
            width,
            channels: 3,
            data: images.iter().flat_map(|i| i.data.iter().copied()).collect(),
            labels,
        }
    }
}

pub fn one_hot(index: usize, k: usize) -> Vec<f32> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

/// Decodes an image file as RGB and resizes it (bilinear, no letterboxing).
/// Grayscale inputs are replicated to three channels.
pub fn load_and_resize(path: &Path, target: (usize, usize)) -> Result<ImageTensor, PreprocessError> {
    let img = image::open(path)
        .map_err(|e| PreprocessError::FrameLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    Ok(ImageTensor::from_rgb(&resize_rgb(img, target)))
}

pub(crate) fn resize_rgb(img: RgbImage, (h, w): (usize, usize)) -> RgbImage {
    if img.height() as usize == h && img.width() as usize == w {
        img
    } else {
        image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
    }
}

/// Applies the normalization registered for `backbone_id`.
pub fn normalize_for_backbone(raw: &ImageTensor, backbone_id: &str) -> Result<ImageTensor, PreprocessError> {
    let registry = Registry::default();
    let spec = registry.get(backbone_id)?;
    Ok(raw.normalized(&spec.normalization))
}

/// Index batches over `n` items. With a seed the order is a seeded
/// permutation; without one it is `0..n`. The last batch may be short.
pub fn make_batches(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>, PreprocessError> {
    if batch_size == 0 {
        return Err(PreprocessError::InvalidBatchSize);
    }
    if n == 0 {
        return Err(PreprocessError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Training order for one epoch: the same seed gives the same sequence of
/// epochs, and every epoch draws a fresh permutation.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>, PreprocessError> {
    let epoch_seed = seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    make_batches(n, batch_size, Some(epoch_seed))
}

/// Loads, resizes and normalizes the given frames into one batch. Frame paths
/// resolve against `base_dir` (the manifest directory).
pub fn load_batch(
    frames: &[&FrameRecord],
    base_dir: &Path,
    norm: &Normalization,
    classes: &ClassSet,
    size: usize,
) -> Result<BatchTensor, PreprocessError> {
    let images = frames
        .par_iter()
        .map(|f| {
            let raw = load_and_resize(&crate::dataset::resolve_frame(base_dir, f), (size, size))?;
            Ok(raw.normalized(norm))
        })
        .collect::<Result<Vec<_>, PreprocessError>>()?;
    let labels = frames
        .iter()
        .map(|f| classes.index_of(&f.class).ok_or_else(|| PreprocessError::UnknownLabel(f.class.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BatchTensor::stack(&images, Some((&labels, classes.len()))))
}
