use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{checksum_f32, BackboneError, BackboneSpec, FeatureExtractor, FeatureMaps, WeightsKind};
use crate::preprocess::BatchTensor;

/// Each grid cell is described by the mean colour of its 2x2 sub-cells.
const DESCRIPTOR: usize = 12;

/// Offline stand-in for a pretrained backbone.
///
/// Produces the same `h' x w' x C` geometry as the real network: the input
/// is adaptively average-pooled onto the backbone's output grid and each cell
/// descriptor goes through a fixed random 1x1 projection with ReLU.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    spec: BackboneSpec,
    projection: Vec<f32>,
    bias: Vec<f32>,
    checksum: String,
}

fn id_stream(id: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl StubExtractor {
    pub fn new(spec: BackboneSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id_stream(&spec.id));
        let c = spec.feature_channels;
        let limit = (1.0 / DESCRIPTOR as f32).sqrt() * 3f32.sqrt();
        let projection = (0..DESCRIPTOR * c).map(|_| rng.random_range(-limit..limit)).collect();
        let bias = (0..c).map(|_| rng.random_range(-0.1..0.1)).collect();
        let mut stub = StubExtractor {
            spec,
            projection,
            bias,
            checksum: String::new(),
        };
        stub.checksum = stub.parameter_checksum();
        stub
    }

    pub fn parameter_count(&self) -> usize {
        self.projection.len() + self.bias.len()
    }

    fn describe_cell(&self, img: &[f32], w: usize, rows: (usize, usize), cols: (usize, usize), out: &mut [f32]) {
        let halves = |(s, e): (usize, usize)| {
            let mid = (s + e) / 2;
            if e - s >= 2 {
                [(s, mid), (mid, e)]
            } else {
                [(s, e), (s, e)]
            }
        };
        let mut k = 0;
        for (r0, r1) in halves(rows) {
            for (c0, c1) in halves(cols) {
                let mut acc = [0.0f64; 3];
                for y in r0..r1 {
                    for x in c0..c1 {
                        let px = &img[(y * w + x) * 3..(y * w + x) * 3 + 3];
                        for ch in 0..3 {
                            acc[ch] += px[ch] as f64;
                        }
                    }
                }
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                for ch in 0..3 {
                    out[k] = (acc[ch] / n) as f32;
                    k += 1;
                }
            }
        }
    }
}

fn bin(i: usize, n_out: usize, n_in: usize) -> (usize, usize) {
    let start = i * n_in / n_out;
    let end = ((i + 1) * n_in).div_ceil(n_out);
    (start, end.max(start + 1))
}

impl FeatureExtractor for StubExtractor {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn weights_kind(&self) -> WeightsKind {
        WeightsKind::Stub
    }

    fn checksum(&self) -> &str {
        &self.checksum
    }

    fn parameter_checksum(&self) -> String {
        checksum_f32(&format!("stub:{}", self.spec.id), &[&self.projection, &self.bias])
    }

    fn extract(&self, batch: &BatchTensor) -> Result<FeatureMaps, BackboneError> {
        let (h, w) = (batch.height, batch.width);
        let (gh, gw) = self.spec.check_input(h, w, batch.channels)?;
        let c = self.spec.feature_channels;
        let per_out = gh * gw * c;
        let mut data = vec![0.0f32; batch.n * per_out];
        data.par_chunks_mut(per_out.max(1))
            .zip(batch.data.par_chunks(h * w * 3))
            .for_each(|(out, img)| {
                let mut desc = [0.0f32; DESCRIPTOR];
                for gy in 0..gh {
                    for gx in 0..gw {
                        self.describe_cell(img, w, bin(gy, gh, h), bin(gx, gw, w), &mut desc);
                        let cell = &mut out[(gy * gw + gx) * c..(gy * gw + gx + 1) * c];
                        cell.copy_from_slice(&self.bias);
                        for (k, d) in desc.iter().enumerate() {
                            let row = &self.projection[k * c..(k + 1) * c];
                            for (o, wgt) in cell.iter_mut().zip(row) {
                                *o += d * wgt;
                            }
                        }
                        for o in cell.iter_mut() {
                            *o = o.max(0.0);
                        }
                    }
                }
            });
        Ok(FeatureMaps {
            n: batch.n,
            height: gh,
            width: gw,
            channels: c,
            data,
        })
    }
}
