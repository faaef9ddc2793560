use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::head::{argmax, nll};
use super::{split_features, Adam, ClassifierModel, FeatureSet, ReductionMode, TrainConfig, TrainError};
use crate::dataset::{DatasetManifest, Split};
use crate::preprocess::epoch_batches;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// The history without wall-clock times, for byte-stable comparisons.
    pub fn without_timing(&self) -> TrainHistory {
        TrainHistory {
            epochs: self
                .epochs
                .iter()
                .map(|e| EpochRecord {
                    wall_time_s: 0.0,
                    ..e.clone()
                })
                .collect(),
        }
    }
}

fn evaluate_head(model: &ClassifierModel, set: &FeatureSet) -> Result<(f64, f64), TrainError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (f, &y) in set.features.iter().zip(&set.labels) {
        let p = model.head.predict_proba(f)?;
        loss += nll(&p, y);
        correct += usize::from(argmax(&p) == y);
    }
    let n = set.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam on the head only, over cached pooled features.
///
/// The backbone is frozen and there is no augmentation, so pooled features
/// are identical every epoch; computing them once is exact. Train metrics are
/// the running per-sample means over the epoch (pre-update predictions).
pub fn train(
    mut model: ClassifierModel,
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainHistory), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if let Some(bad) = train_set.features.iter().find(|f| f.len() != model.head.channels) {
        return Err(TrainError::InputShape(format!(
            "feature length {} != head width {}",
            bad.len(),
            model.head.channels
        )));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let n_params = model.head.parameter_count();
    let mut adam = Adam::new(config.adam, n_params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, super::Head)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let batches = epoch_batches(train_set.len(), config.batch_size, config.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in batches.iter().enumerate() {
            let feats: Vec<&[f64]> = idx.iter().map(|&i| train_set.features[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let grad = match config.reduction {
                ReductionMode::Sequential => model.head.batch_grad(&feats, &labels),
                ReductionMode::Parallel => model.head.batch_grad_parallel(&feats, &labels),
            }
            .map_err(|_| TrainError::Diverged {
                epoch,
                batch: b,
                loss: f64::NAN,
            })?;
            let finite = grad.loss_sum.is_finite()
                && grad.weights.iter().chain(&grad.bias).all(|g| g.is_finite());
            if !finite {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: b,
                    loss: grad.loss_sum / grad.count.max(1) as f64,
                });
            }
            loss_sum += grad.loss_sum;
            correct += grad.correct;
            let head = &mut model.head;
            adam.update(&mut [&mut head.weights, &mut head.bias], &[&grad.weights, &grad.bias]);
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = match val_set {
            Some(v) => {
                let (l, a) = evaluate_head(&model, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        if config.keep_best_val {
            if let Some(acc) = val_accuracy {
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, model.head.clone()));
                }
            }
        }
        log::info!(
            "epoch {}/{}: loss {:.4} acc {:.4}{}",
            epoch + 1,
            config.epochs,
            loss_sum / n,
            correct as f64 / n,
            val_accuracy.map(|a| format!(" val_acc {a:.4}")).unwrap_or_default()
        );
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    if let Some((_, head)) = best {
        model.head = head;
    }
    Ok((model, history))
}

/// Extracts train/val features from the manifest and trains the head.
pub fn train_on_manifest(
    model: ClassifierModel,
    manifest: &DatasetManifest,
    base_dir: &Path,
    config: &TrainConfig,
) -> Result<(ClassifierModel, TrainHistory), TrainError> {
    config.validate()?;
    model.check_classes(manifest)?;
    if manifest.frames_in(Split::Train).next().is_none() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let train_set = split_features(&model, manifest, base_dir, Split::Train, config.image_size)?;
    let val_set = split_features(&model, manifest, base_dir, Split::Val, config.image_size)?;
    train(model, &train_set, Some(&val_set), config)
}
