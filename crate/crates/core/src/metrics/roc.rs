use serde::{Deserialize, Serialize};

use super::MetricsError;

/// One operating point. `threshold` is `None` only for the (0, 0) anchor,
/// which corresponds to a cut-off above every score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: String,
    pub positives: u64,
    pub negatives: u64,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Columns `threshold,fpr,tpr`; the anchor's threshold is written `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let t = p.threshold.map_or_else(|| "inf".to_string(), |t| format!("{t:?}"));
            out.push_str(&format!("{t},{:?},{:?}\n", p.fpr, p.tpr));
        }
        out
    }

    /// Rebuilds a curve from its CSV and the AUC stored beside it. Counts are
    /// not part of the CSV and come back as zero.
    pub fn from_csv(class: &str, text: &str, auc: f64) -> Result<Self, MetricsError> {
        let bad = |reason: String| MetricsError::Parse {
            what: format!("ROC csv for {class}"),
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some("threshold,fpr,tpr") {
            return Err(bad("missing header".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let points = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let cells: Vec<&str> = l.split(',').collect();
                if cells.len() != 3 {
                    return Err(bad(format!("bad row {l:?}")));
                }
                Ok(RocPoint {
                    threshold: if cells[0] == "inf" { None } else { Some(num(cells[0])?) },
                    tp: 0,
                    fp: 0,
                    fpr: num(cells[1])?,
                    tpr: num(cells[2])?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RocCurve {
            class: class.to_string(),
            positives: 0,
            negatives: 0,
            points,
            auc,
        })
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.threshold).collect()
    }
}

/// One-vs-rest ROC for one class.
///
/// Sweeps thresholds over the unique scores in descending order; samples with
/// equal scores cross the threshold together, giving one diagonal step.
pub fn roc_curve(class: &str, positives: &[bool], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if positives.len() != scores.len() {
        return Err(MetricsError::Shape(format!(
            "{} labels but {} scores",
            positives.len(),
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::UndefinedMetric(format!("non-finite score {s} for class {class}")));
    }
    let p_total = positives.iter().filter(|&&p| p).count() as u64;
    let n_total = positives.len() as u64 - p_total;
    if p_total == 0 || n_total == 0 {
        return Err(MetricsError::DegenerateRoc {
            class: class.to_string(),
            reason: format!("{p_total} positive and {n_total} negative samples; need at least one of each"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let point = |threshold, tp: u64, fp: u64| RocPoint {
        threshold,
        tp,
        fp,
        fpr: fp as f64 / n_total as f64,
        tpr: tp as f64 / p_total as f64,
    };
    let mut points = vec![point(None, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(Some(s), tp, fp));
    }
    let mut curve = RocCurve {
        class: class.to_string(),
        positives: p_total,
        negatives: n_total,
        points,
        auc: 0.0,
    };
    curve.auc = auc(&curve);
    Ok(curve)
}

/// Trapezoidal area under the curve.
///
/// Accumulated in integer counts and divided once, so separable and
/// constant-score curves give exactly 1 and 0.5.
pub fn auc(curve: &RocCurve) -> f64 {
    if curve.positives == 0 || curve.negatives == 0 {
        return trapezoid(curve);
    }
    let twice_area: u128 = curve
        .points
        .windows(2)
        .map(|w| (w[1].fp - w[0].fp) as u128 * (w[0].tp + w[1].tp) as u128)
        .sum();
    twice_area as f64 / (2 * curve.positives as u128 * curve.negatives as u128) as f64
}

fn trapezoid(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separating_scores() {
        let c = roc_curve("a", &[true, false, true, false], &[0.9, 0.4, 0.6, 0.2]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(c.thresholds(), vec![0.9, 0.6, 0.4, 0.2]);
    }

    #[test]
    fn constant_scores_are_diagonal() {
        let c = roc_curve("a", &[true, false, false, true, false], &[0.3; 5]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[1].fpr, c.points[1].tpr), (1.0, 1.0));
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn anchored_and_monotone() {
        let pos = [true, true, false, true, false, false, true];
        let sc = [0.1, 0.7, 0.7, 0.3, 0.9, 0.2, 0.5];
        let c = roc_curve("a", &pos, &sc).unwrap();
        let first = &c.points[0];
        let last = c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        for w in c.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn single_class_truth_is_degenerate() {
        assert!(matches!(
            roc_curve("a", &[true, true], &[0.1, 0.2]),
            Err(MetricsError::DegenerateRoc { .. })
        ));
        assert!(roc_curve("a", &[true, false], &[f64::NAN, 0.2]).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = roc_curve("a", &[true, false], &[0.75, 0.25]).unwrap();
        assert_eq!(c.to_csv(), "threshold,fpr,tpr\ninf,0.0,0.0\n0.75,0.0,1.0\n0.25,1.0,1.0\n");
    }
}
