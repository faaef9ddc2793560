use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{confusion_matrix, report, roc_curve, Aggregation, ClassificationReport, ConfusionMatrix, MetricsError, RocCurve};
use crate::backbones::{hex, WeightsKind};
use crate::dataset::{sanitize, DatasetManifest, FrameRecord, Split};
use crate::model::{argmax, ClassifierModel, FeatureSet};

pub const REPORT_FORMAT: &str = "harbench-report";

/// What was evaluated. Contains no paths or clocks so reruns are byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub backbone_id: String,
    pub backbone_name: String,
    pub weights: WeightsKind,
    pub backbone_checksum: String,
    pub head_checksum: String,
    pub feature_channels: usize,
    pub image_size: usize,
}

impl ReportMeta {
    pub fn for_model(model: &ClassifierModel, image_size: usize) -> Self {
        let spec = model.backbone.spec();
        let mut h = Sha256::new();
        for v in model.head.weights.iter().chain(&model.head.bias) {
            h.update(v.to_le_bytes());
        }
        ReportMeta {
            backbone_id: spec.id.clone(),
            backbone_name: spec.display_name.clone(),
            weights: model.backbone.weights_kind(),
            backbone_checksum: model.backbone.checksum().to_string(),
            head_checksum: format!("sha256:{}", hex(&h.finalize())),
            feature_channels: spec.feature_channels,
            image_size,
        }
    }
}

/// ROC outcome for one class; `curve` is absent when the split has no
/// positives or no negatives for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoc {
    pub class: String,
    pub curve: Option<RocCurve>,
    pub degenerate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub class: String,
    pub auc: Option<f64>,
    pub degenerate: Option<String>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub split: Split,
    pub model: ReportMeta,
    pub classes: Vec<String>,
    pub metrics: ClassificationReport,
    pub auc: Vec<ClassAuc>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| MetricsError::Parse {
            what: "report".into(),
            reason: e.to_string(),
        })?;
        if r.format != REPORT_FORMAT {
            return Err(MetricsError::Parse {
                what: "report".into(),
                reason: format!("unknown format {:?}", r.format),
            });
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(|e| MetricsError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub split: Split,
    pub meta: ReportMeta,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub roc: Vec<ClassRoc>,
    /// Per-frame softmax rows, in evaluation order.
    pub probabilities: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn auc_table(&self) -> Vec<ClassAuc> {
        self.roc
            .iter()
            .map(|r| ClassAuc {
                class: r.class.clone(),
                auc: r.curve.as_ref().map(|c| c.auc),
                degenerate: r.degenerate.clone(),
            })
            .collect()
    }

    pub fn run_report(&self) -> RunReport {
        RunReport {
            format: REPORT_FORMAT.into(),
            split: self.split,
            model: self.meta.clone(),
            classes: self.confusion.classes.names().to_vec(),
            metrics: self.report.clone(),
            auc: self.auc_table(),
        }
    }

    /// File name of the ROC CSV for `class`.
    pub fn roc_file_name(class: &str) -> String {
        format!("roc_{}.csv", sanitize(class))
    }

    /// Writes `report.json`, `confusion.csv`, `roc_<class>.csv` for each
    /// non-degenerate class and `auc.json`. Returns the written paths.
    pub fn persist(&self, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
        fs::create_dir_all(dir).map_err(|e| MetricsError::io(dir, e))?;
        let mut written = Vec::new();
        let mut write = |name: String, body: String| -> Result<(), MetricsError> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| MetricsError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        write("report.json".into(), self.run_report().to_json())?;
        write("confusion.csv".into(), self.confusion.to_csv())?;
        for r in &self.roc {
            if let Some(curve) = &r.curve {
                write(Self::roc_file_name(&r.class), curve.to_csv())?;
            }
        }
        let mut auc = serde_json::to_string_pretty(&self.auc_table()).expect("auc serializes");
        auc.push('\n');
        write("auc.json".into(), auc)?;
        Ok(written)
    }
}

fn check_classes(model: &ClassifierModel, manifest: &DatasetManifest) -> Result<(), MetricsError> {
    if model.classes != manifest.classes {
        return Err(MetricsError::ClassMismatch {
            expected: model.classes.names().to_vec(),
            found: manifest.classes.names().to_vec(),
        });
    }
    Ok(())
}

/// Predicts every frame of `split` in manifest order and scores the result.
pub fn evaluate(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Split,
    image_size: usize,
    aggregation: Aggregation,
) -> Result<Evaluation, MetricsError> {
    check_classes(model, manifest)?;
    let frames: Vec<&FrameRecord> = manifest.frames_in(split).collect();
    if frames.is_empty() {
        return Err(MetricsError::EmptySplit(split));
    }
    let features = model.extract_feature_set(&frames, base_dir, image_size, 32)?;
    evaluate_features(model, &features, split, image_size, aggregation)
}

/// Scores precomputed pooled features.
pub fn evaluate_features(
    model: &ClassifierModel,
    features: &FeatureSet,
    split: Split,
    image_size: usize,
    aggregation: Aggregation,
) -> Result<Evaluation, MetricsError> {
    if features.is_empty() {
        return Err(MetricsError::EmptySplit(split));
    }
    let probabilities = model.predict_proba_features(&features.features)?;
    let predicted: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(&features.labels, &predicted, &model.classes)?;
    let mut roc = Vec::with_capacity(model.classes.len());
    for (k, class) in model.classes.iter().enumerate() {
        let positives: Vec<bool> = features.labels.iter().map(|&y| y == k).collect();
        let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
        roc.push(match roc_curve(class, &positives, &scores) {
            Ok(curve) => ClassRoc {
                class: class.to_string(),
                curve: Some(curve),
                degenerate: None,
            },
            Err(MetricsError::DegenerateRoc { reason, .. }) => ClassRoc {
                class: class.to_string(),
                curve: None,
                degenerate: Some(reason),
            },
            Err(e) => return Err(e),
        });
    }
    Ok(Evaluation {
        split,
        meta: ReportMeta::for_model(model, image_size),
        report: report(&confusion, aggregation),
        confusion,
        roc,
        probabilities,
    })
}
