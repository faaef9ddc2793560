//! Corpus ingestion: scanning a folder-per-class corpus, sampling frames out
//! of clips, and assigning clips to train/val/test splits.
//!
//! The manifest is the single source of truth for every later stage. Frame
//! image paths inside it are relative to the directory holding the manifest
//! file.

mod manifest;
mod media;
mod scan;
mod split;
mod validate;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{build_manifest, extract_frames, resolve_frame, DatasetManifest, ManifestOptions, MANIFEST_FILE};
pub use media::{ffmpeg_available, MediaKind};
pub use scan::{scan_corpus, CorpusScan};
pub(crate) use scan::sanitize;
pub use split::{apportion, stratified_split, SplitAssignment, SplitRatios};
pub use validate::{validate_manifest, CheckStatus, ValidationItem, ValidationReport};

/// Default sampling stride (about two frames per second at 30 FPS).
pub const DEFAULT_STRIDE: usize = 15;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus root not found: {0}")]
    CorpusNotFound(PathBuf),
    #[error("corpus at {0} has no class folders")]
    EmptyCorpus(PathBuf),
    #[error("invalid split ratios {0:?}: must be non-negative, finite, and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("cannot decode clip {clip_id}: {reason}")]
    Decode { clip_id: String, reason: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Ordered, duplicate-free label set. A class index is its position here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassSet(Vec<String>);

impl ClassSet {
    /// Builds the canonical (lexicographically sorted, deduplicated) label set.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        ClassSet(names)
    }

    /// Keeps the given order. Callers are responsible for uniqueness;
    /// `validate_manifest` flags violations.
    pub fn from_ordered(names: Vec<String>) -> Self {
        ClassSet(names)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|c| c == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.0.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

/// One source media file. Still images are single-frame clips with
/// `fps == 0` and `duration == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Path relative to the corpus root, `/`-separated.
    pub path: String,
    pub class: String,
    pub kind: MediaKind,
    pub duration: f64,
    pub fps: f64,
    pub frame_count: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub clip_id: String,
    pub frame_index: u64,
    pub class: String,
    pub split: Split,
    /// Extracted image, relative to the manifest directory.
    pub path: String,
}

/// Severity-tagged message produced while ingesting; never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

impl Warning {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Warning {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}
