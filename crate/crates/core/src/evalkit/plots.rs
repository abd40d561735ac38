use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::{EvalError, ItemScore, Result};
use crate::trainer::MetricRow;

const SIZE: (u32, u32) = (800, 500);
const SNR_BIN_DB: f64 = 5.0;

fn plot_err<E: std::fmt::Display>(e: E) -> EvalError {
    EvalError::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi + 0.05 * (hi - lo))
    }
}

/// AR and NAR training loss against update step, as SVG.
pub fn plot_loss_curves(rows: &[MetricRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(0).max(1) as f64;
    let (lo, hi) = bounds(rows.iter().flat_map(|r| [r.ar_loss, r.nar_loss]));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_step, lo.min(0.0)..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss (nats)")
        .draw()
        .map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&MetricRow) -> f64); 2] =
        [("ar", BLUE, |r| r.ar_loss), ("nar", RED, |r| r.nar_loss)];
    for (name, color, get) in series {
        chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.step as f64, get(r))), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Mean of `metric` per system in 5 dB SNR bins, as SVG. Items without an
/// SNR or without the metric are skipped.
pub fn plot_metric_vs_snr(
    items: &[ItemScore],
    metric: &str,
    get: impl Fn(&ItemScore) -> Option<f64>,
    path: &Path,
) -> Result<()> {
    let mut bins: BTreeMap<&str, BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for item in items {
        if let (Some(snr), Some(v)) = (item.snr_db, get(item)) {
            let b = (snr / SNR_BIN_DB).floor() as i64;
            let e = bins.entry(item.system.as_str()).or_default().entry(b).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    if bins.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let curves: Vec<(&str, Vec<(f64, f64)>)> = bins
        .into_iter()
        .map(|(system, b)| {
            let pts = b
                .into_iter()
                .map(|(k, (sum, n))| ((k as f64 + 0.5) * SNR_BIN_DB, sum / n as f64))
                .collect();
            (system, pts)
        })
        .collect();
    let (x_lo, x_hi) = bounds(curves.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y_lo, y_hi) = bounds(curves.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{metric} vs SNR"), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x_lo - SNR_BIN_DB / 2.0..x_hi + SNR_BIN_DB / 2.0, y_lo.min(0.0)..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("SNR (dB)")
        .y_desc(metric)
        .draw()
        .map_err(plot_err)?;
    for (k, (system, pts)) in curves.into_iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color))
            .map_err(plot_err)?
            .label(system)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::Scores;

    #[test]
    fn loss_plot_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<MetricRow> = (1..20)
            .map(|s| MetricRow {
                step: s,
                task: "zs_tts".into(),
                ar_loss: 4.0 / s as f64,
                nar_loss: 3.0 / s as f64,
                lr: 1e-3,
            })
            .collect();
        let path = dir.path().join("loss.svg");
        plot_loss_curves(&rows, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.contains("<svg") && svg.contains("polyline"));
        assert!(matches!(plot_loss_curves(&[], &path), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn snr_plot_bins_items() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<ItemScore> = (0..8)
            .map(|i| ItemScore {
                id: format!("u{i}"),
                task: None,
                system: if i % 2 == 0 { "a" } else { "b" }.into(),
                snr_db: Some(i as f64 * 2.5),
                scores: Scores {
                    cer: Some(0.1 * i as f64),
                    ..Scores::default()
                },
            })
            .collect();
        let path = dir.path().join("snr.svg");
        plot_metric_vs_snr(&items, "CER", |i| i.scores.cer, &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("polyline"));
    }
}
