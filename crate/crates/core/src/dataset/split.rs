use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClipRecord, IngestError, Split, Warning};

const RATIO_SUM_TOL: f64 = 1e-9;
const REMAINDER_TIE_TOL: f64 = 1e-9;

/// Train/val/test fractions, serialized as a three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl From<[f64; 3]> for SplitRatios {
    fn from(r: [f64; 3]) -> Self {
        SplitRatios {
            train: r[0],
            val: r[1],
            test: r[2],
        }
    }
}

impl From<SplitRatios> for [f64; 3] {
    fn from(r: SplitRatios) -> Self {
        r.as_array()
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, IngestError> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn get(&self, split: Split) -> f64 {
        self.as_array()[split.index()]
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let a = self.as_array();
        let sum: f64 = a.iter().sum();
        if a.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > RATIO_SUM_TOL {
            return Err(IngestError::InvalidRatios(a));
        }
        Ok(())
    }

    /// Parses `"0.7,0.1,0.2"`.
    pub fn parse(s: &str) -> Result<Self, IngestError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IngestError::InvalidRatios([f64::NAN; 3]))?;
        let arr: [f64; 3] = parts
            .try_into()
            .map_err(|_| IngestError::InvalidRatios([f64::NAN; 3]))?;
        let r = SplitRatios::from(arr);
        r.validate()?;
        Ok(r)
    }
}

/// Largest-remainder apportionment of `n` items over the ratios.
///
/// Each split receives `floor(ratio * n)`; leftover units go to the largest
/// fractional remainders, ties resolved toward the earlier split in
/// train, val, test order.
pub fn apportion(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = ratios.as_array().map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut leftover = n.saturating_sub(assigned);
    let mut order = [0usize, 1, 2];
    let rem = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() <= REMAINDER_TIE_TOL {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Clip-to-split assignment plus any non-fatal notes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub by_clip: BTreeMap<String, Split>,
    pub warnings: Vec<Warning>,
}

impl SplitAssignment {
    pub fn get(&self, clip_id: &str) -> Option<Split> {
        self.by_clip.get(clip_id).copied()
    }
}

/// Per-class seeded shuffle, then largest-remainder partition.
///
/// Each class draws from its own ChaCha stream (stream id = class rank in
/// sorted order), so adding clips to one class never reshuffles another.
pub fn stratified_split(
    clips: &[ClipRecord],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, IngestError> {
    ratios.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    for clip in clips {
        by_class.entry(clip.class.as_str()).or_default().push(clip);
    }
    let nonzero_splits = ratios.as_array().iter().filter(|r| **r > 0.0).count();

    let mut by_clip = BTreeMap::new();
    let mut warnings = Vec::new();
    for (stream, (class, mut members)) in by_class.into_iter().enumerate() {
        members.sort_by(|a, b| a.path.cmp(&b.path));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        members.shuffle(&mut rng);

        let counts = apportion(members.len(), ratios);
        if members.len() < nonzero_splits {
            warnings.push(Warning::new(
                "sparse-class",
                format!(
                    "class '{class}' has {} clip(s) for {nonzero_splits} splits; counts {counts:?}",
                    members.len()
                ),
            ));
        }
        for split in Split::ALL {
            if counts[split.index()] == 0 && ratios.get(split) > 0.0 {
                warnings.push(Warning::new(
                    "empty-split",
                    format!("class '{class}' has no clips in the {split} split"),
                ));
            }
        }
        let mut it = members.into_iter();
        for split in Split::ALL {
            for clip in it.by_ref().take(counts[split.index()]) {
                by_clip.insert(clip.clip_id.clone(), split);
            }
        }
    }
    Ok(SplitAssignment { by_clip, warnings })
}
