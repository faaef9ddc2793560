use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::split::SplitRatios;
use super::{DatasetManifest, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub check: String,
    pub status: CheckStatus,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
    /// class -> [train, val, test] frame counts
    pub frames_per_class: BTreeMap<String, [usize; 3]>,
    /// class -> [train, val, test] clip counts
    pub clips_per_class: BTreeMap<String, [usize; 3]>,
}

impl ValidationReport {
    pub fn worst(&self) -> CheckStatus {
        self.items.iter().map(|i| i.status).max().unwrap_or(CheckStatus::Pass)
    }

    pub fn passed(&self) -> bool {
        self.worst() != CheckStatus::Fail
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items.iter().filter(|i| i.status == CheckStatus::Fail)
    }

    pub fn find(&self, check: &str) -> Vec<&ValidationItem> {
        self.items.iter().filter(|i| i.check == check).collect()
    }

    fn push(&mut self, check: &str, status: CheckStatus, message: impl Into<String>) {
        self.items.push(ValidationItem {
            check: check.to_string(),
            status,
            message: message.into(),
        });
    }

    fn pass_or_fail(&mut self, check: &str, problems: Vec<String>, ok: &str) {
        if problems.is_empty() {
            self.push(check, CheckStatus::Pass, ok);
        } else {
            for p in problems {
                self.push(check, CheckStatus::Fail, p);
            }
        }
    }
}

/// Checks every manifest invariant. Never fails; problems are reported as
/// items.
pub fn validate_manifest(m: &DatasetManifest) -> ValidationReport {
    let mut r = ValidationReport {
        items: Vec::new(),
        frames_per_class: BTreeMap::new(),
        clips_per_class: BTreeMap::new(),
    };

    let ratios: SplitRatios = m.split_ratios;
    let sum: f64 = ratios.as_array().iter().sum();
    if ratios.validate().is_ok() {
        r.push("ratio-sum", CheckStatus::Pass, format!("ratios sum to {sum}"));
    } else {
        r.push("ratio-sum", CheckStatus::Fail, format!("ratios {:?} sum to {sum}, expected 1", ratios.as_array()));
    }

    let names = m.classes.names();
    let unique: BTreeSet<&String> = names.iter().collect();
    if names.is_empty() {
        r.push("class-set", CheckStatus::Fail, "label set is empty");
    } else if unique.len() != names.len() {
        r.push("class-set", CheckStatus::Fail, "label set contains duplicates");
    } else if !names.windows(2).all(|w| w[0] < w[1]) {
        r.push("class-set", CheckStatus::Fail, "label set is not in canonical lexicographic order");
    } else {
        r.push("class-set", CheckStatus::Pass, format!("{} classes", names.len()));
    }

    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for c in &m.clips {
        if !seen.insert(c.clip_id.as_str()) {
            problems.push(format!("duplicate clip_id '{}'", c.clip_id));
        }
        if m.classes.index_of(&c.class).is_none() {
            problems.push(format!("clip '{}' has unknown class '{}'", c.clip_id, c.class));
        }
        if c.path.split('/').next() != Some(c.class.as_str()) {
            problems.push(format!("clip '{}' class does not match its folder ({})", c.clip_id, c.path));
        }
    }
    r.pass_or_fail("clip-ids", problems, "clip ids unique and classes consistent");

    let clips: HashMap<&str, &super::ClipRecord> = m.clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let mut problems = Vec::new();
    let mut frame_ids = HashSet::new();
    let mut clip_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut last_index: HashMap<&str, u64> = HashMap::new();
    for f in &m.frames {
        if !frame_ids.insert(f.frame_id.as_str()) {
            problems.push(format!("duplicate frame_id '{}'", f.frame_id));
        }
        match clips.get(f.clip_id.as_str()) {
            None => problems.push(format!("frame '{}' references missing clip '{}'", f.frame_id, f.clip_id)),
            Some(c) if c.class != f.class => problems.push(format!(
                "frame '{}' class '{}' differs from clip class '{}'",
                f.frame_id, f.class, c.class
            )),
            Some(_) => {}
        }
        if let Some(prev) = last_index.insert(f.clip_id.as_str(), f.frame_index) {
            if f.frame_index <= prev {
                problems.push(format!("frame indices of clip '{}' not strictly increasing", f.clip_id));
            }
        }
        clip_splits.entry(f.clip_id.as_str()).or_default().insert(f.split);
    }
    r.pass_or_fail("frame-records", problems, "frame records consistent with clips");

    let leaks: Vec<String> = clip_splits
        .iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(clip, s)| {
            let names: Vec<&str> = s.iter().map(|x| x.as_str()).collect();
            format!("clip '{clip}' has frames in several splits: {}", names.join(", "))
        })
        .collect();
    r.pass_or_fail("split-leakage", leaks, "every clip confined to one split");

    for class in m.classes.iter() {
        r.frames_per_class.insert(class.to_string(), [0; 3]);
        r.clips_per_class.insert(class.to_string(), [0; 3]);
    }
    for f in &m.frames {
        if let Some(c) = r.frames_per_class.get_mut(&f.class) {
            c[f.split.index()] += 1;
        }
    }
    for (clip, splits) in &clip_splits {
        if let (Some(c), Some(split)) = (clips.get(clip), splits.iter().next()) {
            if let Some(counts) = r.clips_per_class.get_mut(&c.class) {
                counts[split.index()] += 1;
            }
        }
    }

    let mut problems = Vec::new();
    for (class, counts) in &r.clips_per_class {
        let n: usize = counts.iter().sum();
        for split in Split::ALL {
            let expected = ratios.get(split) * n as f64;
            let got = counts[split.index()] as f64;
            if (got - expected).abs() > 1.0 + 1e-9 {
                problems.push(format!(
                    "class '{class}' {split}: {got} clips, expected {expected:.2} +/- 1"
                ));
            }
        }
    }
    r.pass_or_fail("apportionment", problems, "per-class split counts within 1 of ratio targets");

    let clipless: Vec<&String> = m
        .clips
        .iter()
        .filter(|c| !clip_splits.contains_key(c.clip_id.as_str()))
        .map(|c| &c.clip_id)
        .collect();
    for c in clipless {
        r.push("clip-frames", CheckStatus::Warn, format!("clip '{c}' has no frames"));
    }

    let frames_per_class = r.frames_per_class.clone();
    for (class, counts) in &frames_per_class {
        let total: usize = counts.iter().sum();
        if total == 0 {
            r.push("class-coverage", CheckStatus::Warn, format!("class '{class}' has no frames"));
            continue;
        }
        for split in Split::ALL {
            if counts[split.index()] == 0 && ratios.get(split) > 0.0 {
                r.push(
                    "class-coverage",
                    CheckStatus::Warn,
                    format!("class '{class}' has no frames in the {split} split"),
                );
            }
        }
        r.push(
            "frame-counts",
            CheckStatus::Pass,
            format!("class '{class}': train {} / val {} / test {}", counts[0], counts[1], counts[2]),
        );
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassSet, ClipRecord, FrameRecord, MediaKind};

    fn manifest() -> DatasetManifest {
        let mut clips = Vec::new();
        let mut frames = Vec::new();
        let plan = [("A", 10usize), ("B", 10)];
        for (class, n) in plan {
            for i in 0..n {
                let clip_id = format!("{class}__{i}");
                let split = match i {
                    0..=6 => Split::Train,
                    7 => Split::Val,
                    _ => Split::Test,
                };
                for idx in [0u64, 15] {
                    frames.push(FrameRecord {
                        frame_id: format!("{clip_id}_{idx}"),
                        clip_id: clip_id.clone(),
                        frame_index: idx,
                        class: class.into(),
                        split,
                        path: format!("frames/{class}/{clip_id}_{idx}.png"),
                    });
                }
                clips.push(ClipRecord {
                    clip_id,
                    path: format!("{class}/{i}.mp4"),
                    class: class.into(),
                    kind: MediaKind::Video,
                    duration: 4.0,
                    fps: 30.0,
                    frame_count: 120,
                    width: 640,
                    height: 480,
                });
            }
        }
        DatasetManifest {
            classes: ClassSet::from_names(["A", "B"]),
            clips,
            frames,
            split_ratios: SplitRatios::default(),
            seed: 1,
            source_root: "data".into(),
            created_at: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn well_formed_passes() {
        let r = validate_manifest(&manifest());
        assert_eq!(r.worst(), CheckStatus::Pass, "{:#?}", r.items);
        assert_eq!(r.frames_per_class["A"], [14, 2, 4]);
        assert_eq!(r.clips_per_class["B"], [7, 1, 2]);
    }

    #[test]
    fn leakage_detected() {
        let mut m = manifest();
        m.frames[1].split = Split::Test;
        let r = validate_manifest(&m);
        assert!(!r.passed());
        let leak = r.find("split-leakage");
        assert_eq!(leak.len(), 1);
        assert_eq!(leak[0].status, CheckStatus::Fail);
        assert!(leak[0].message.contains("A__0"));
    }

    #[test]
    fn bad_ratio_sum_detected() {
        let mut m = manifest();
        m.split_ratios = SplitRatios { train: 0.5, val: 0.5, test: 0.1 };
        let r = validate_manifest(&m);
        assert_eq!(r.find("ratio-sum")[0].status, CheckStatus::Fail);
    }

    #[test]
    fn unsorted_or_duplicate_classes_fail() {
        let mut m = manifest();
        m.classes = ClassSet::from_ordered(vec!["B".into(), "A".into()]);
        assert_eq!(validate_manifest(&m).find("class-set")[0].status, CheckStatus::Fail);
        m.classes = ClassSet::from_ordered(vec!["A".into(), "A".into(), "B".into()]);
        assert_eq!(validate_manifest(&m).find("class-set")[0].status, CheckStatus::Fail);
    }

    #[test]
    fn class_mismatch_and_bad_apportionment() {
        let mut m = manifest();
        m.frames[0].class = "B".into();
        for f in m.frames.iter_mut().filter(|f| f.class == "B") {
            f.split = Split::Train;
        }
        let r = validate_manifest(&m);
        assert!(r.find("frame-records").iter().any(|i| i.status == CheckStatus::Fail));
        assert!(r.find("apportionment").iter().any(|i| i.status == CheckStatus::Fail));
    }
}
