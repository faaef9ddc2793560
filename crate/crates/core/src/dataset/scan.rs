use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rayon::prelude::*;

use super::media::{self, MediaKind};
use super::{ClassSet, ClipRecord, IngestError, Warning};

/// Result of walking a corpus root.
#[derive(Debug, Clone)]
pub struct CorpusScan {
    pub root: PathBuf,
    pub classes: ClassSet,
    pub clips: Vec<ClipRecord>,
    pub warnings: Vec<Warning>,
    /// Newest modification time among accepted media files.
    pub latest_mtime: Option<SystemTime>,
}

impl CorpusScan {
    pub fn clips_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a ClipRecord> + 'a {
        self.clips.iter().filter(move |c| c.class == class)
    }
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' })
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| IngestError::io(dir, err)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.retain(|p| !is_hidden(p));
    entries.sort();
    Ok(entries)
}

struct Candidate {
    class: String,
    path: PathBuf,
    rel: String,
    kind: MediaKind,
}

/// Scans `<root>/<class_name>/<clip>` into clip records.
///
/// Every immediate subdirectory is a class, even when empty. Files that fail
/// to probe are skipped with a warning.
pub fn scan_corpus(root: &Path) -> Result<CorpusScan, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::CorpusNotFound(root.to_path_buf()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(IngestError::EmptyCorpus(root.to_path_buf()));
    }

    let mut warnings = Vec::new();
    let mut names = Vec::with_capacity(class_dirs.len());
    let mut candidates = Vec::new();
    for dir in &class_dirs {
        let Some(class) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            warnings.push(Warning::new(
                "non-utf8-class",
                format!("skipping class folder with non UTF-8 name: {}", dir.display()),
            ));
            continue;
        };
        names.push(class.clone());
        let mut found = 0usize;
        for path in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            let Some(kind) = MediaKind::from_path(&path) else {
                warnings.push(Warning::new(
                    "unsupported-file",
                    format!("ignoring {}: not a recognised video or image file", path.display()),
                ));
                continue;
            };
            let Some(file_name) = path.file_name().and_then(|n| n.to_str()) else {
                warnings.push(Warning::new(
                    "non-utf8-file",
                    format!("ignoring file with non UTF-8 name in {class}"),
                ));
                continue;
            };
            found += 1;
            candidates.push(Candidate {
                rel: format!("{class}/{file_name}"),
                class: class.clone(),
                path,
                kind,
            });
        }
        if found == 0 {
            warnings.push(Warning::new("empty-class", format!("class '{class}' has no media files")));
        }
    }

    let probed: Vec<_> = candidates
        .par_iter()
        .map(|c| {
            let info = media::probe(&c.path, c.kind);
            let mtime = fs::metadata(&c.path).and_then(|m| m.modified()).ok();
            (info, mtime)
        })
        .collect();

    let mut used_ids = HashSet::new();
    let mut clips = Vec::with_capacity(candidates.len());
    let mut latest_mtime: Option<SystemTime> = None;
    for (cand, (info, mtime)) in candidates.into_iter().zip(probed) {
        let info = match info {
            Ok(info) => info,
            Err(reason) => {
                warnings.push(Warning::new(
                    "skipped-file",
                    format!("cannot read {}: {reason}", cand.path.display()),
                ));
                continue;
            }
        };
        if let Some(t) = mtime {
            latest_mtime = Some(latest_mtime.map_or(t, |cur| cur.max(t)));
        }
        let clip_id = unique_clip_id(&cand, &mut used_ids);
        clips.push(ClipRecord {
            clip_id,
            path: cand.rel,
            class: cand.class,
            kind: cand.kind,
            duration: info.duration,
            fps: info.fps,
            frame_count: info.frame_count,
            width: info.width,
            height: info.height,
        });
    }

    Ok(CorpusScan {
        root: root.to_path_buf(),
        classes: ClassSet::from_names(names),
        clips,
        warnings,
        latest_mtime,
    })
}

fn unique_clip_id(cand: &Candidate, used: &mut HashSet<String>) -> String {
    let stem = cand.path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    let ext = cand.path.extension().and_then(|s| s.to_str()).unwrap_or("");
    let base = format!("{}__{}", sanitize(&cand.class), sanitize(stem));
    let mut id = base.clone();
    if used.contains(&id) {
        id = format!("{base}_{}", sanitize(ext));
    }
    let mut n = 2;
    while used.contains(&id) {
        id = format!("{base}_{n}");
        n += 1;
    }
    used.insert(id.clone());
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn write_png(path: &Path, w: u32, h: u32) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_pixel(w, h, image::Rgb([10, 20, 30])).save(path).unwrap();
    }

    #[test]
    fn missing_root_is_corpus_not_found() {
        let err = scan_corpus(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, IngestError::CorpusNotFound(_)));
    }

    #[test]
    fn root_without_class_folders_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stray.txt"), "x").unwrap();
        assert!(matches!(scan_corpus(dir.path()).unwrap_err(), IngestError::EmptyCorpus(_)));
    }

    #[test]
    fn counts_clips_and_sorts_classes() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["Writing", "Discussion", "Hand Raise"] {
            for i in 0..3 {
                write_png(&dir.path().join(class).join(format!("f{i}.png")), 8, 6);
            }
        }
        let scan = scan_corpus(dir.path()).unwrap();
        assert_eq!(scan.classes.names(), ["Discussion", "Hand Raise", "Writing"]);
        assert_eq!(scan.clips.len(), 9);
        assert_eq!(scan.clips[0].path, "Discussion/f0.png");
        assert_eq!(scan.clips[3].clip_id, "Hand-Raise__f0");
        let c = &scan.clips[0];
        assert_eq!((c.width, c.height, c.fps, c.duration, c.frame_count), (8, 6, 0.0, 0.0, 1));
        assert!(scan.warnings.is_empty());
    }

    #[test]
    fn empty_class_kept_and_bad_files_warned() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("Empty")).unwrap();
        write_png(&dir.path().join("Full/a.png"), 4, 4);
        fs::write(dir.path().join("Full/broken.jpg"), b"not a jpeg").unwrap();
        fs::write(dir.path().join("Full/notes.txt"), b"hi").unwrap();
        let scan = scan_corpus(dir.path()).unwrap();
        assert_eq!(scan.classes.names(), ["Empty", "Full"]);
        assert_eq!(scan.clips.len(), 1);
        let codes: Vec<_> = scan.warnings.iter().map(|w| w.code.as_str()).collect();
        assert!(codes.contains(&"empty-class"));
        assert!(codes.contains(&"skipped-file"));
        assert!(codes.contains(&"unsupported-file"));
    }

    #[test]
    fn clip_ids_disambiguate_same_stem() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("A/x.png"), 4, 4);
        write_png(&dir.path().join("A/x.jpg"), 4, 4);
        let scan = scan_corpus(dir.path()).unwrap();
        let ids: Vec<_> = scan.clips.iter().map(|c| c.clip_id.as_str()).collect();
        assert_eq!(ids, ["A__x", "A__x_png"]);
    }
}
