//! Cross-run comparison tables and SVG views of evaluation artifacts.

mod plots;

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{csv_field, Aggregation, RunReport};
use crate::dataset::Split;

pub use plots::{plot_confusion, plot_history, plot_roc};

#[derive(Debug, Error)]
pub enum ReportingError {
    #[error("no reports to compare")]
    NoReports,
    #[error("could not load report {path}: {reason}")]
    ReportLoad { path: PathBuf, reason: String },
    #[error("class mismatch: {first} has {expected:?}, {other} has {found:?}")]
    ClassMismatch {
        first: String,
        other: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unknown table format {0:?} (expected markdown, csv or json)")]
    Format(String),
    #[error("malformed comparison table: {0}")]
    Parse(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backbone_id: String,
    pub backbone_name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aggregation: Aggregation,
    pub split: Split,
    /// The `report.json` this row was read from, as given.
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub classes: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Reference results for the four backbones on the original private
/// classroom corpus: (id, accuracy, precision, recall, F1). They can not be
/// reproduced here and serve as documentation only.
pub const REFERENCE_RESULTS: [(&str, f64, f64, f64, f64); 4] = [
    ("xception", 0.92, 0.94, 0.93, 0.93),
    ("inceptionv3", 0.89, 0.89, 0.89, 0.90),
    ("resnet50", 0.83, 0.83, 0.85, 0.84),
    ("vgg16", 0.66, 0.74, 0.66, 0.65),
];

fn order(a: &ComparisonRow, b: &ComparisonRow) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then_with(|| a.backbone_id.cmp(&b.backbone_id))
        .then_with(|| a.report.cmp(&b.report))
}

impl ComparisonTable {
    /// Builds a table from loaded reports; rows sorted by accuracy
    /// descending, ties by backbone id.
    pub fn from_reports(reports: Vec<(String, RunReport)>) -> Result<Self, ReportingError> {
        let mut iter = reports.into_iter();
        let Some((first_path, first)) = iter.next() else {
            return Err(ReportingError::NoReports);
        };
        let classes = first.classes.clone();
        let mut rows = vec![row(first_path.clone(), first)];
        for (path, r) in iter {
            if r.classes != classes {
                return Err(ReportingError::ClassMismatch {
                    first: first_path,
                    other: path,
                    expected: classes,
                    found: r.classes,
                });
            }
            rows.push(row(path, r));
        }
        rows.sort_by(order);
        Ok(ComparisonTable { classes, rows })
    }

    pub fn from_json(text: &str) -> Result<Self, ReportingError> {
        serde_json::from_str(text).map_err(|e| ReportingError::Parse(e.to_string()))
    }
}

fn row(path: String, r: RunReport) -> ComparisonRow {
    ComparisonRow {
        backbone_id: r.model.backbone_id,
        backbone_name: r.model.backbone_name,
        accuracy: r.metrics.accuracy,
        precision: r.metrics.precision,
        recall: r.metrics.recall,
        f1: r.metrics.f1,
        aggregation: r.metrics.aggregation,
        split: r.split,
        report: path,
    }
}

/// Loads every `report.json` in `paths` and builds the comparison.
pub fn compare_runs<P: AsRef<Path>>(paths: &[P]) -> Result<ComparisonTable, ReportingError> {
    let reports = paths
        .iter()
        .map(|p| {
            let p = p.as_ref();
            RunReport::load(p)
                .map(|r| (p.display().to_string(), r))
                .map_err(|e| ReportingError::ReportLoad {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    ComparisonTable::from_reports(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Markdown, TableFormat::Csv, TableFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableFormat::Markdown => "markdown",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        })
    }
}

impl FromStr for TableFormat {
    type Err = ReportingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            _ => Err(ReportingError::Format(s.to_string())),
        }
    }
}

/// Whole percent, halves rounded away from zero.
pub fn percent(x: f64) -> String {
    format!("{}%", (x * 100.0).round() as i64)
}

pub fn render_table(table: &ComparisonTable, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => {
            let mut out = String::from("| Model | Accuracy | Precision | Recall | F1-score |\n");
            out.push_str("|---|---:|---:|---:|---:|\n");
            for r in &table.rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    r.backbone_name.replace('|', "\\|"),
                    percent(r.accuracy),
                    percent(r.precision),
                    percent(r.recall),
                    percent(r.f1)
                ));
            }
            out
        }
        TableFormat::Csv => {
            let mut out = String::from("backbone_id,backbone_name,accuracy,precision,recall,f1,aggregation,split,report\n");
            for r in &table.rows {
                out.push_str(&format!(
                    "{},{},{:?},{:?},{:?},{:?},{},{},{}\n",
                    csv_field(&r.backbone_id),
                    csv_field(&r.backbone_name),
                    r.accuracy,
                    r.precision,
                    r.recall,
                    r.f1,
                    r.aggregation,
                    r.split,
                    csv_field(&r.report)
                ));
            }
            out
        }
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(table).expect("table serializes");
            s.push('\n');
            s
        }
    }
}

/// Writes `<dir>/comparison.<ext>` and returns its path.
pub fn write_table(table: &ComparisonTable, format: TableFormat, dir: &Path) -> Result<PathBuf, ReportingError> {
    fs::create_dir_all(dir).map_err(|source| ReportingError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(format!("comparison.{}", format.extension()));
    fs::write(&path, render_table(table, format)).map_err(|source| ReportingError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
