use std::path::Path;

use plotters::prelude::*;

use super::ReportingError;
use crate::metrics::{ConfusionMatrix, RocCurve};
use crate::model::TrainHistory;

fn plot_err<E: std::fmt::Display>(e: E) -> ReportingError {
    ReportingError::Plot(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<(), ReportingError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| ReportingError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

// Plotters reports write failures only when the backend is dropped or
// presented, so probe writability up front to surface a proper io error.
fn probe_writable(path: &Path) -> Result<(), ReportingError> {
    ensure_parent(path)?;
    std::fs::write(path, b"").map_err(|source| ReportingError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Heatmap of counts, rows = true class, columns = predicted class.
pub fn plot_confusion(m: &ConfusionMatrix, path: &Path) -> Result<(), ReportingError> {
    probe_writable(path)?;
    let k = m.k().max(1);
    let side = 120 + 70 * k as u32;
    let root = SVGBackend::new(path, (side + 80, side)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let names: Vec<String> = m.classes.names().to_vec();
    let mut chart = ChartBuilder::on(&root)
        .caption("Confusion matrix", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(60)
        .y_label_area_size(100)
        .build_cartesian_2d(0.0..k as f64, 0.0..k as f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("predicted")
        .y_desc("true")
        .x_labels(0)
        .y_labels(0)
        .draw()
        .map_err(plot_err)?;
    let font = ("sans-serif", 13).into_font();
    for (i, name) in names.iter().enumerate() {
        let (x, y0) = chart.backend_coord(&(i as f64 + 0.5, 0.0));
        root.draw(&Text::new(name.clone(), (x - 20, y0 + 8), font.clone()))
            .map_err(plot_err)?;
        let (x0, y) = chart.backend_coord(&(0.0, (k - 1 - i) as f64 + 0.5));
        root.draw(&Text::new(name.clone(), (x0 - 95, y - 6), font.clone()))
            .map_err(plot_err)?;
    }
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (t, row) in m.counts.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            let x = p as f64;
            let y = (k - 1 - t) as f64;
            let shade = 1.0 - v as f64 / max;
            let colour = RGBColor((40.0 + 215.0 * shade) as u8, (90.0 + 165.0 * shade) as u8, 255);
            chart
                .draw_series(std::iter::once(Rectangle::new([(x, y), (x + 1.0, y + 1.0)], colour.filled())))
                .map_err(plot_err)?;
            chart
                .draw_series(std::iter::once(Text::new(
                    v.to_string(),
                    (x + 0.45, y + 0.5),
                    ("sans-serif", 14).into_font(),
                )))
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// All one-vs-rest curves in one figure, with the AUC in each legend entry.
pub fn plot_roc(curves: &[RocCurve], path: &Path) -> Result<(), ReportingError> {
    probe_writable(path)?;
    let root = SVGBackend::new(path, (640, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("ROC curves", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("false positive rate")
        .y_desc("true positive rate")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3)))
        .map_err(plot_err)?;
    for (i, c) in curves.iter().enumerate() {
        let colour = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(c.points.iter().map(|p| (p.fpr, p.tpr)), colour.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{} (AUC = {:.4})", c.class, c.auc))
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], colour.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Loss and accuracy per epoch; validation series are drawn when present.
pub fn plot_history(history: &TrainHistory, path: &Path) -> Result<(), ReportingError> {
    probe_writable(path)?;
    let root = SVGBackend::new(path, (900, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (left, right) = root.split_horizontally(450);
    let epochs = history.epochs.len().max(1) as f64;
    let max_loss = history
        .epochs
        .iter()
        .flat_map(|e| [Some(e.train_loss), e.val_loss])
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-3);

    let panels: [(&DrawingArea<SVGBackend, _>, &str, f64, fn(&crate::model::EpochRecord) -> (f64, Option<f64>)); 2] = [
        (&left, "loss", max_loss * 1.05, |e| (e.train_loss, e.val_loss)),
        (&right, "accuracy", 1.0, |e| (e.train_accuracy, e.val_accuracy)),
    ];
    for (area, name, top, get) in panels {
        let mut chart = ChartBuilder::on(area)
            .caption(name, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(1.0..epochs.max(2.0), 0.0..top)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("epoch").draw().map_err(plot_err)?;
        let train: Vec<(f64, f64)> = history.epochs.iter().map(|e| (e.epoch as f64, get(e).0)).collect();
        chart
            .draw_series(LineSeries::new(train, BLUE.stroke_width(2)))
            .map_err(plot_err)?
            .label("train")
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE.stroke_width(2)));
        let val: Vec<(f64, f64)> = history
            .epochs
            .iter()
            .filter_map(|e| get(e).1.map(|v| (e.epoch as f64, v)))
            .collect();
        if !val.is_empty() {
            chart
                .draw_series(LineSeries::new(val, RED.stroke_width(2)))
                .map_err(plot_err)?
                .label("val")
                .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
