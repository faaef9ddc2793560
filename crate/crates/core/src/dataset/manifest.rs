use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::media;
use super::scan::scan_corpus;
use super::split::{stratified_split, SplitRatios};
use super::{ClassSet, ClipRecord, FrameRecord, IngestError, Split, Warning, DEFAULT_STRIDE};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: ClassSet,
    pub clips: Vec<ClipRecord>,
    pub frames: Vec<FrameRecord>,
    pub split_ratios: SplitRatios,
    pub seed: u64,
    pub source_root: String,
    pub created_at: String,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, IngestError> {
        serde_json::from_str(s).map_err(|e| IngestError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| IngestError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let s = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameRecord> + '_ {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.index_of(class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOptions {
    pub stride: usize,
    pub limit: Option<usize>,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Defaults to the newest media modification time, so the manifest only
    /// depends on corpus content.
    pub created_at: Option<DateTime<Utc>>,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions {
            stride: DEFAULT_STRIDE,
            limit: None,
            ratios: SplitRatios::default(),
            seed: 0,
            created_at: None,
        }
    }
}

/// Samples frames `0, stride, 2*stride, ...` (at most `limit`) from a clip and
/// writes them as `<out_dir>/frames/<class>/<clip_id>_<index>.png`.
pub fn extract_frames(
    clip: &ClipRecord,
    source_root: &Path,
    out_dir: &Path,
    split: Split,
    stride: usize,
    limit: Option<usize>,
) -> Result<Vec<FrameRecord>, IngestError> {
    if stride == 0 {
        return Err(IngestError::InvalidStride);
    }
    let src = source_root.join(&clip.path);
    let class_dir = out_dir.join("frames").join(&clip.class);
    fs::create_dir_all(&class_dir).map_err(|e| IngestError::io(&class_dir, e))?;
    let info = media::MediaInfo {
        width: clip.width,
        height: clip.height,
        fps: clip.fps,
        frame_count: clip.frame_count,
        duration: clip.duration,
    };
    let mut frames = Vec::new();
    media::decode_strided(&src, clip.kind, &info, stride, limit, |index, img| {
        let frame_id = format!("{}_{index}", clip.clip_id);
        let file = class_dir.join(format!("{frame_id}.png"));
        img.save(&file).map_err(|e| format!("writing {}: {e}", file.display()))?;
        frames.push(FrameRecord {
            frame_id: frame_id.clone(),
            clip_id: clip.clip_id.clone(),
            frame_index: index,
            class: clip.class.clone(),
            split,
            path: format!("frames/{}/{frame_id}.png", clip.class),
        });
        Ok(())
    })
    .map_err(|reason| IngestError::Decode {
        clip_id: clip.clip_id.clone(),
        reason,
    })?;
    if frames.is_empty() {
        return Err(IngestError::Decode {
            clip_id: clip.clip_id.clone(),
            reason: "no frames decoded".into(),
        });
    }
    Ok(frames)
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// scan -> split -> extract, then writes `<out_dir>/manifest.json`.
pub fn build_manifest(
    root: &Path,
    out_dir: &Path,
    opts: &ManifestOptions,
) -> Result<(DatasetManifest, Vec<Warning>), IngestError> {
    if opts.stride == 0 {
        return Err(IngestError::InvalidStride);
    }
    opts.ratios.validate()?;
    let scan = scan_corpus(root)?;
    let assignment = stratified_split(&scan.clips, &opts.ratios, opts.seed)?;
    let mut warnings = scan.warnings.clone();
    warnings.extend(assignment.warnings.iter().cloned());

    let per_clip: Vec<Vec<FrameRecord>> = scan
        .clips
        .par_iter()
        .map(|clip| {
            let split = assignment.get(&clip.clip_id).unwrap_or(Split::Train);
            extract_frames(clip, root, out_dir, split, opts.stride, opts.limit)
        })
        .collect::<Result<_, _>>()?;

    let created_at = opts.created_at.unwrap_or_else(|| {
        DateTime::<Utc>::from(scan.latest_mtime.unwrap_or(SystemTime::UNIX_EPOCH))
    });
    let manifest = DatasetManifest {
        classes: scan.classes,
        clips: scan.clips,
        frames: per_clip.into_iter().flatten().collect(),
        split_ratios: opts.ratios,
        seed: opts.seed,
        source_root: root.display().to_string(),
        created_at: rfc3339(created_at),
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, warnings))
}

/// Resolves a frame's image path against the manifest directory.
pub fn resolve_frame(base: &Path, frame: &FrameRecord) -> PathBuf {
    base.join(&frame.path)
}
