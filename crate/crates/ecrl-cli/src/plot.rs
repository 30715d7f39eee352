//! SVG training-curve plots. Output is deterministic: same log in,
//! byte-identical images out.

use ecrl_core::error::{Error, Result};
use ecrl_core::train::EpochLog;
use plotters::prelude::*;
use std::path::Path;

fn plot_err(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(err.to_string()))
}

fn epoch_range(logs: &[EpochLog]) -> (f64, f64) {
    let lo = logs.first().map(|l| l.epoch).unwrap_or(1) as f64;
    let hi = logs.last().map(|l| l.epoch).unwrap_or(1) as f64;
    (lo - 0.5, hi + 0.5)
}

/// All four loss components against epoch.
pub fn loss_curves(logs: &[EpochLog], path: &Path) -> Result<()> {
    let series: [(&str, fn(&EpochLog) -> f64, RGBColor); 4] = [
        ("l_overall", |l| l.l_overall, RED),
        ("l_tsg_aug", |l| l.l_tsg_aug, BLUE),
        ("l_tsg_orig", |l| l.l_tsg_orig, GREEN),
        ("l_cons", |l| l.l_cons, MAGENTA),
    ];
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (_, f, _) in &series {
        for l in logs {
            y_lo = y_lo.min(f(l));
            y_hi = y_hi.max(f(l));
        }
    }
    let pad = ((y_hi - y_lo) * 0.05).max(1e-3);
    let (x_lo, x_hi) = epoch_range(logs);

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training loss", ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi, (y_lo - pad)..(y_hi + pad))
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("loss")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (name, f, color) in series {
        chart
            .draw_series(LineSeries::new(
                logs.iter().map(|l| (l.epoch as f64, f(l))),
                &color,
            ))
            .map_err(|e| plot_err(path, e))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Validation R@1, IoU=0.5 against epoch.
pub fn recall_curve(logs: &[EpochLog], path: &Path) -> Result<()> {
    let (x_lo, x_hi) = epoch_range(logs);
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Validation recall", ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi, 0.0..1.05)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("R@1, IoU=0.5")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(LineSeries::new(
            logs.iter().map(|l| (l.epoch as f64, l.val_r1_05)),
            &BLUE,
        ))
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}
