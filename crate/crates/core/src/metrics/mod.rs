//! Confusion matrix, per-class and aggregate classification metrics,
//! one-vs-rest ROC and AUC. Everything here is a pure function of its inputs.

mod evaluate;
mod roc;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassSet, Split};
use crate::model::TrainError;

pub use evaluate::{evaluate, evaluate_features, ClassAuc, ClassRoc, Evaluation, ReportMeta, RunReport, REPORT_FORMAT};
pub use roc::{auc, roc_curve, RocCurve, RocPoint};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} is outside the {classes}-class label set")]
    Label { label: String, classes: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("degenerate ROC for class {class}: {reason}")]
    DegenerateRoc { class: String, reason: String },
    #[error("class mismatch: expected {expected:?}, found {found:?}")]
    ClassMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("malformed {what}: {reason}")]
    Parse { what: String, reason: String },
    #[error(transparent)]
    Model(#[from] TrainError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MetricsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MetricsError::Io {
            path: path.into(),
            source,
        }
    }
}

/// `counts[t][p]` is the number of samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: ClassSet,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: ClassSet) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    /// Row sum: ground-truth samples of class `i`.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn predicted(&self, i: usize) -> u64 {
        self.counts.iter().map(|row| row[i]).sum()
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.predicted(i) - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.support(i) - self.tp(i)
    }

    pub fn tn(&self, i: usize) -> u64 {
        self.total() - self.tp(i) - self.fp(i) - self.fn_(i)
    }

    /// CSV with a header row and a header column of class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in self.classes.iter() {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(&csv_field(name));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let bad = |reason: String| MetricsError::Parse {
            what: "confusion csv".into(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let names: Vec<String> = split_csv(header).into_iter().skip(1).collect();
        let mut counts = Vec::with_capacity(names.len());
        for (i, line) in lines.enumerate() {
            let cells = split_csv(line);
            if cells.len() != names.len() + 1 || names.get(i) != Some(&cells[0]) {
                return Err(bad(format!("row {} does not match the header", i + 1)));
            }
            let row = cells[1..]
                .iter()
                .map(|c| c.parse::<u64>().map_err(|e| bad(format!("{c:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            counts.push(row);
        }
        if counts.len() != names.len() {
            return Err(bad("matrix is not square".into()));
        }
        Ok(ConfusionMatrix {
            classes: ClassSet::from_ordered(names),
            counts,
        })
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

/// Builds the matrix from class indices.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: &ClassSet) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = classes.len();
    let mut m = ConfusionMatrix::zeros(classes.clone());
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&bad) = [t, p].iter().find(|&&l| l >= k) {
            return Err(MetricsError::Label {
                label: bad.to_string(),
                classes: k,
            });
        }
        m.counts[t][p] += 1;
    }
    Ok(m)
}

/// Same as [`confusion_matrix`] for label names.
pub fn confusion_matrix_named<S: AsRef<str>>(
    y_true: &[S],
    y_pred: &[S],
    classes: &ClassSet,
) -> Result<ConfusionMatrix, MetricsError> {
    let index = |labels: &[S]| {
        labels
            .iter()
            .map(|l| {
                classes.index_of(l.as_ref()).ok_or_else(|| MetricsError::Label {
                    label: l.as_ref().to_string(),
                    classes: classes.len(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    confusion_matrix(&index(y_true)?, &index(y_pred)?, classes)
}

/// `trace / total`.
pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match m.total() {
        0 => Err(MetricsError::UndefinedMetric("accuracy of an empty confusion matrix".into())),
        total => Ok(m.trace() as f64 / total as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when at least one of the three had a zero denominator and was
    /// reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Precision, recall and F1 = 2TP / (2TP + FP + FN) for class `i`.
pub fn precision_recall_f1(m: &ConfusionMatrix, i: usize) -> ClassMetrics {
    let (tp, fp, fn_) = (m.tp(i), m.fp(i), m.fn_(i));
    let (precision, d1) = ratio(tp, tp + fp);
    let (recall, d2) = ratio(tp, tp + fn_);
    let (f1, d3) = ratio(2 * tp, 2 * tp + fp + fn_);
    ClassMetrics {
        class: m.classes.name(i).unwrap_or_default().to_string(),
        precision,
        recall,
        f1,
        support: m.support(i),
        degenerate: d1 || d2 || d3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by class support.
    Weighted,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Macro => "macro",
            Aggregation::Weighted => "weighted",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Aggregation::Macro),
            "weighted" => Ok(Aggregation::Weighted),
            other => Err(format!("unknown aggregation {other:?} (expected macro or weighted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub aggregation: Aggregation,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
}

/// Per-class metrics plus their aggregate under `aggregation`.
///
/// Accuracy of an empty matrix is reported as 0 rather than an error so the
/// report stays serialisable; callers that need the distinction use
/// [`accuracy`].
pub fn report(m: &ConfusionMatrix, aggregation: Aggregation) -> ClassificationReport {
    let per_class: Vec<ClassMetrics> = (0..m.k()).map(|i| precision_recall_f1(m, i)).collect();
    let weights: Vec<f64> = match aggregation {
        Aggregation::Macro => vec![1.0; m.k()],
        Aggregation::Weighted => per_class.iter().map(|c| c.support as f64).collect(),
    };
    let wsum: f64 = weights.iter().sum();
    let mean = |get: fn(&ClassMetrics) -> f64| {
        if wsum == 0.0 {
            0.0
        } else {
            per_class.iter().zip(&weights).map(|(c, w)| get(c) * w).sum::<f64>() / wsum
        }
    };
    ClassificationReport {
        aggregation,
        accuracy: accuracy(m).unwrap_or(0.0),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        total: m.total(),
        per_class,
    }
}

pub fn macro_report(m: &ConfusionMatrix) -> ClassificationReport {
    report(m, Aggregation::Macro)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> ClassSet {
        ClassSet::from_names(["A", "B"])
    }

    #[test]
    fn counting_example() {
        let m = confusion_matrix_named(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &ab()).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(accuracy(&m).unwrap(), 0.75);
        let a = precision_recall_f1(&m, 0);
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(!a.degenerate);
        let r = macro_report(&m);
        assert!((r.precision - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.aggregation, Aggregation::Macro);
    }

    #[test]
    fn identity_and_empty() {
        let classes = ClassSet::from_names(["a", "b", "c"]);
        let y = [0, 1, 1, 2, 2, 2];
        let m = confusion_matrix(&y, &y, &classes).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]]);
        let r = macro_report(&m);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let empty = confusion_matrix(&[], &[], &classes).unwrap();
        assert_eq!(empty.counts, vec![vec![0; 3]; 3]);
        assert!(matches!(accuracy(&empty), Err(MetricsError::UndefinedMetric(_))));
    }

    #[test]
    fn degenerate_class_reports_zero() {
        let classes = ClassSet::from_names(["a", "b", "c"]);
        let m = confusion_matrix(&[0, 1], &[0, 1], &classes).unwrap();
        let c = precision_recall_f1(&m, 2);
        assert_eq!((c.precision, c.recall, c.f1, c.support), (0.0, 0.0, 0.0, 0));
        assert!(c.degenerate);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion_matrix(&[0], &[], &ab()), Err(MetricsError::Shape(_))));
        assert!(matches!(confusion_matrix(&[0], &[2], &ab()), Err(MetricsError::Label { .. })));
        assert!(matches!(
            confusion_matrix_named(&["A"], &["Z"], &ab()),
            Err(MetricsError::Label { .. })
        ));
    }

    #[test]
    fn weighted_mode() {
        let m = confusion_matrix_named(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &ab()).unwrap();
        let r = report(&m, Aggregation::Weighted);
        // equal supports, so weighted equals macro here
        assert!((r.precision - 5.0 / 6.0).abs() < 1e-15);
        let m = confusion_matrix(&[0, 1, 1, 1], &[0, 0, 1, 1], &ab()).unwrap();
        let r = report(&m, Aggregation::Weighted);
        assert!((r.recall - (0.25 * 1.0 + 0.75 * (2.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let classes = ClassSet::from_ordered(vec!["hand,raise".into(), "read".into()]);
        let m = confusion_matrix(&[0, 1, 1], &[1, 1, 0], &classes).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv, "true\\pred,\"hand,raise\",read\n\"hand,raise\",0,1\nread,1,1\n");
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), m);
    }
}
