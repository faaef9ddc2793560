use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;

/// Probability floor inside the cross-entropy log.
pub const PROB_CLIP: f64 = 1e-7;

/// Spatial mean of one `h x w x c` feature map.
pub fn global_average_pool(featmap: &[f32], height: usize, width: usize, channels: usize) -> Vec<f64> {
    assert!(height >= 1 && width >= 1, "feature map must have at least one spatial position");
    assert_eq!(featmap.len(), height * width * channels);
    let mut acc = vec![0.0f64; channels];
    for cell in featmap.chunks_exact(channels) {
        for (a, v) in acc.iter_mut().zip(cell) {
            *a += *v as f64;
        }
    }
    let n = (height * width) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, TrainError> {
    if logits.is_empty() {
        return Err(TrainError::Numeric("softmax of an empty vector".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(TrainError::Numeric(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln(max(p[true], PROB_CLIP))`.
pub fn categorical_crossentropy(probs: &[f64], onehot: &[f64]) -> Result<f64, TrainError> {
    if probs.len() != onehot.len() || probs.is_empty() {
        return Err(TrainError::Numeric("probability and label lengths differ".into()));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(TrainError::Numeric(format!("not a probability distribution: {probs:?}")));
    }
    let ones = onehot.iter().filter(|&&v| v == 1.0).count();
    let zeros = onehot.iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != onehot.len() {
        return Err(TrainError::Numeric(format!("invalid one-hot label {onehot:?}")));
    }
    let t = onehot.iter().position(|&v| v == 1.0).unwrap_or(0);
    Ok(-probs[t].max(PROB_CLIP).ln())
}

pub(crate) fn nll(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_CLIP).ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Dense layer `logits = f . W + b`, `W` stored row-major as
/// `[channels][classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub channels: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients and statistics for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    fn zeros(channels: usize, classes: usize) -> Self {
        HeadGrad {
            loss_sum: 0.0,
            correct: 0,
            count: 0,
            weights: vec![0.0; channels * classes],
            bias: vec![0.0; classes],
        }
    }

    fn merge(mut self, other: HeadGrad) -> HeadGrad {
        self.loss_sum += other.loss_sum;
        self.correct += other.correct;
        self.count += other.count;
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
        self
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|g| *g *= s);
        self.bias.iter_mut().for_each(|g| *g *= s);
    }
}

impl Head {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot_uniform(channels: usize, classes: usize, seed: u64) -> Self {
        let limit = (6.0 / (channels + classes) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Head {
            channels,
            classes,
            weights: (0..channels * classes).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; classes],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.channels);
        let mut z = self.bias.clone();
        for (f, row) in features.iter().zip(self.weights.chunks_exact(self.classes)) {
            for (zk, w) in z.iter_mut().zip(row) {
                *zk += f * w;
            }
        }
        z
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, TrainError> {
        softmax(&self.logits(features))
    }

    /// Summed loss and gradient of one sample; dL/dz = p - y.
    fn sample_grad(&self, features: &[f64], label: usize, acc: &mut HeadGrad) -> Result<(), TrainError> {
        let p = self.predict_proba(features)?;
        acc.loss_sum += nll(&p, label);
        acc.correct += usize::from(argmax(&p) == label);
        acc.count += 1;
        let mut dz = p;
        dz[label] -= 1.0;
        for (f, grow) in features.iter().zip(acc.weights.chunks_exact_mut(self.classes)) {
            for (g, d) in grow.iter_mut().zip(&dz) {
                *g += f * d;
            }
        }
        acc.bias.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
        Ok(())
    }

    /// Mean cross-entropy gradient over the batch, reduced in sample order.
    pub fn batch_grad(&self, features: &[&[f64]], labels: &[usize]) -> Result<HeadGrad, TrainError> {
        let mut acc = HeadGrad::zeros(self.channels, self.classes);
        for (f, &y) in features.iter().zip(labels) {
            self.sample_grad(f, y, &mut acc)?;
        }
        acc.scale(1.0 / features.len().max(1) as f64);
        Ok(acc)
    }

    /// Same as [`Head::batch_grad`] but reduced with rayon; summation order
    /// (and so the low bits) may vary between runs.
    pub fn batch_grad_parallel(&self, features: &[&[f64]], labels: &[usize]) -> Result<HeadGrad, TrainError> {
        use rayon::prelude::*;
        let mut acc = features
            .par_iter()
            .zip(labels.par_iter())
            .try_fold(
                || HeadGrad::zeros(self.channels, self.classes),
                |mut acc, (f, &y)| self.sample_grad(f, y, &mut acc).map(|_| acc),
            )
            .try_reduce(|| HeadGrad::zeros(self.channels, self.classes), |a, b| Ok(a.merge(b)))?;
        acc.scale(1.0 / features.len().max(1) as f64);
        Ok(acc)
    }

    /// Mean loss over a batch, used for finite-difference checks.
    pub fn mean_loss(&self, features: &[&[f64]], labels: &[usize]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for (f, &y) in features.iter().zip(labels) {
            total += nll(&self.predict_proba(f)?, y);
        }
        Ok(total / features.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gap_examples() {
        let constant = vec![3.5f32; 4 * 5 * 6];
        assert!(global_average_pool(&constant, 4, 5, 6).iter().all(|&v| v == 3.5));
        let single = [1.0f32, -2.0, 7.5];
        assert_eq!(global_average_pool(&single, 1, 1, 3), vec![1.0, -2.0, 7.5]);
        // 2x2 map, one channel, values 1..4
        assert_eq!(global_average_pool(&[1.0, 2.0, 3.0, 4.0], 2, 2, 1), vec![2.5]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.3; 7]).unwrap();
        assert!(p.iter().all(|&v| close(v, 1.0 / 7.0, 1e-15)));
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let z = [1.0, -3.0, 0.25, 8.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 1000.0).collect();
        let (a, b) = (softmax(&z).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!(close(*x, *y, 1e-15));
        }
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        // huge logits do not overflow
        let p = softmax(&[1e308, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn crossentropy_examples() {
        assert_eq!(categorical_crossentropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let uniform = vec![1.0 / 7.0; 7];
        let mut onehot = vec![0.0; 7];
        onehot[3] = 1.0;
        assert!(close(categorical_crossentropy(&uniform, &onehot).unwrap(), 7f64.ln(), 1e-12));
        assert!(close(categorical_crossentropy(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 2f64.ln(), 1e-15));
        // clamp keeps -ln(0) finite
        let l = categorical_crossentropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(close(l, -(1e-7f64).ln(), 1e-12));
        assert!(categorical_crossentropy(&[0.7, 0.7], &[1.0, 0.0]).is_err());
        assert!(categorical_crossentropy(&[0.5, 0.5], &[1.0, 1.0]).is_err());
        assert!(categorical_crossentropy(&[0.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn head_parameter_count_and_bias() {
        let h = Head::glorot_uniform(2048, 7, 0);
        assert_eq!(h.parameter_count(), 14_343);
        assert_eq!(Head::glorot_uniform(512, 7, 0).parameter_count(), 3_591);
        let h2 = Head::glorot_uniform(16, 2, 0);
        assert_eq!(h2.bias, vec![0.0, 0.0]);
        let limit = (6.0f64 / 18.0).sqrt();
        assert!(h2.weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn parallel_and_sequential_grads_agree() {
        let head = Head::glorot_uniform(6, 3, 4);
        let feats: Vec<Vec<f64>> = (0..9).map(|i| (0..6).map(|j| ((i * 7 + j) % 5) as f64 - 2.0).collect()).collect();
        let refs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let a = head.batch_grad(&refs, &labels).unwrap();
        let b = head.batch_grad_parallel(&refs, &labels).unwrap();
        assert_eq!(a.count, b.count);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!(close(*x, *y, 1e-12));
        }
    }
}
