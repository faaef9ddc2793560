use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use std::sync::{Arc, Mutex, OnceLock};

use super::stub::StubExtractor;
use super::{hex, BackboneError, BackboneSpec, Normalization, Padding, Reduction, SharedExtractor, WeightSource};

/// Environment variable naming the pretrained weights cache.
pub const WEIGHTS_DIR_ENV: &str = "HARBENCH_WEIGHTS_DIR";

const KERAS_WEIGHTS: &str = "https://storage.googleapis.com/tensorflow/keras-applications";

const V2: Padding = Padding::Valid;

/// Registered backbone specs, in registration order.
#[derive(Debug, Clone)]
pub struct Registry {
    specs: Vec<BackboneSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        let r = |k, s, p| Reduction::new(k, s, p);
        let specs = vec![
            BackboneSpec {
                id: "vgg16".into(),
                display_name: "VGG-16".into(),
                feature_channels: 512,
                min_input: 32,
                normalization: Normalization::CAFFE_BGR_MEAN,
                weight_source: format!("{KERAS_WEIGHTS}/vgg16/vgg16_weights_tf_dim_ordering_tf_kernels_notop.h5"),
                approx_params: 14_714_688,
                reductions: vec![r(2, 2, V2); 5],
            },
            BackboneSpec {
                id: "resnet50".into(),
                display_name: "ResNet-50".into(),
                feature_channels: 2048,
                min_input: 32,
                normalization: Normalization::CAFFE_BGR_MEAN,
                weight_source: format!("{KERAS_WEIGHTS}/resnet/resnet50_weights_tf_dim_ordering_tf_kernels_notop.h5"),
                approx_params: 23_587_712,
                reductions: vec![
                    r(7, 2, Padding::Explicit(3)),
                    r(3, 2, Padding::Explicit(1)),
                    r(1, 2, V2),
                    r(1, 2, V2),
                    r(1, 2, V2),
                ],
            },
            BackboneSpec {
                id: "inceptionv3".into(),
                display_name: "InceptionV3".into(),
                feature_channels: 2048,
                min_input: 75,
                normalization: Normalization::SYMMETRIC_UNIT,
                weight_source: format!(
                    "{KERAS_WEIGHTS}/inception_v3/inception_v3_weights_tf_dim_ordering_tf_kernels_notop.h5"
                ),
                approx_params: 21_802_784,
                reductions: vec![
                    r(3, 2, V2),
                    r(3, 1, V2),
                    r(3, 2, V2),
                    r(3, 1, V2),
                    r(3, 2, V2),
                    r(3, 2, V2),
                    r(3, 2, V2),
                ],
            },
            BackboneSpec {
                id: "xception".into(),
                display_name: "Xception".into(),
                feature_channels: 2048,
                min_input: 71,
                normalization: Normalization::SYMMETRIC_UNIT,
                weight_source: format!("{KERAS_WEIGHTS}/xception/xception_weights_tf_dim_ordering_tf_kernels_notop.h5"),
                approx_params: 20_861_480,
                reductions: vec![
                    r(3, 2, V2),
                    r(3, 1, V2),
                    r(3, 2, Padding::Same),
                    r(3, 2, Padding::Same),
                    r(3, 2, Padding::Same),
                    r(3, 2, Padding::Same),
                ],
            },
        ];
        Registry { specs }
    }
}

impl Registry {
    pub fn specs(&self) -> &[BackboneSpec] {
        &self.specs
    }

    pub fn ids(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.id.clone()).collect()
    }

    /// Adds or replaces a spec by id.
    pub fn register(&mut self, spec: BackboneSpec) {
        match self.specs.iter_mut().find(|s| s.id == spec.id) {
            Some(slot) => *slot = spec,
            None => self.specs.push(spec),
        }
    }

    pub fn get(&self, id: &str) -> Result<&BackboneSpec, BackboneError> {
        self.specs
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| BackboneError::UnknownBackbone {
                id: id.to_string(),
                known: self.ids(),
            })
    }

    /// Loads a frozen extractor; classification head is never part of it.
    pub fn load(&self, id: &str, source: &WeightSource) -> Result<SharedExtractor, BackboneError> {
        let spec = self.get(id)?.clone();
        match source {
            WeightSource::Stub { seed } => Ok(Arc::new(StubExtractor::new(spec, *seed))),
            WeightSource::Pretrained { dir } => {
                let lock = load_lock(id);
                let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                load_pretrained(spec, dir)
            }
        }
    }
}

/// Loads `id` from the default registry.
pub fn load_backbone(id: &str, source: &WeightSource) -> Result<SharedExtractor, BackboneError> {
    Registry::default().load(id, source)
}

fn load_lock(id: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut locks = LOCKS.get_or_init(Default::default).lock().unwrap_or_else(|p| p.into_inner());
    locks.entry(id.to_string()).or_default().clone()
}

/// Where a pretrained export for `id` is expected inside the cache.
pub fn pretrained_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.onnx"))
}

/// SHA-256 of the cached export for `id`, if the file exists.
pub fn pretrained_file_checksum(dir: &Path, id: &str) -> Option<String> {
    let bytes = std::fs::read(pretrained_file(dir, id)).ok()?;
    Some(format!("sha256:{}", hex(&Sha256::digest(&bytes))))
}

fn load_pretrained(spec: BackboneSpec, dir: &Path) -> Result<SharedExtractor, BackboneError> {
    let file = pretrained_file(dir, &spec.id);
    if !file.is_file() {
        return Err(BackboneError::WeightsUnavailable {
            id: spec.id.clone(),
            reason: format!(
                "{} not found. Export the headless ImageNet model ({}) to ONNX with NHWC \
                 float input, save it as {}, or point {WEIGHTS_DIR_ENV} at a cache that has it",
                file.display(),
                spec.weight_source,
                file.display()
            ),
        });
    }
    Err(BackboneError::WeightsUnavailable {
        id: spec.id,
        reason: "this build has no ONNX runtime; only stub weights can be used".into(),
    })
}
