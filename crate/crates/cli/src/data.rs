//! Reading input patterns and building center densities.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use compclust::ingest::{
    detect_format, ingest_and_clean, read_records_csv, read_xy_csv, Categories, InputFormat, MergeEvent,
};
use compclust::intensity::{bandwidth_grid, kde_intensity, lscv_bandwidth, normalize_to_density, quadrature_cell};
use compclust::pattern::Point;
use compclust::{CenterDensity, ObservationWindow, PointPattern, UniformDensity};
use log::info;

use crate::config::{DensityChoice, InputConfig};

/// A cleaned pattern with its type names and merge log.
pub struct Loaded {
    pub pattern: PointPattern,
    /// Place-name category of each type, for record input.
    pub names: Option<Vec<String>>,
    pub merges: Vec<MergeEvent>,
    /// Records read before cleaning.
    pub n_records: usize,
}

pub fn window_of(w: &[f64; 4]) -> Result<ObservationWindow> {
    Ok(ObservationWindow::rect(w[0], w[1], w[2], w[3])?)
}

pub fn load_pattern(cfg: &InputConfig) -> Result<Loaded> {
    let text = fs::read_to_string(&cfg.path).with_context(|| format!("reading {}", cfg.path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    let window = cfg.window.as_ref().map(window_of).transpose()?;
    match detect_format(header)? {
        InputFormat::Xy => {
            let pattern = read_xy_csv(text.as_bytes(), cfg.n_types, window)?;
            let n_records = pattern.len();
            Ok(Loaded {
                pattern,
                names: None,
                merges: Vec::new(),
                n_records,
            })
        }
        InputFormat::Records => {
            let records = read_records_csv(text.as_bytes())?;
            let mut cats = Categories::new(cfg.unknown_place);
            if let Some(path) = &cfg.merge_list {
                let list = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                cats.load_merge_list(&list)?;
            }
            let ing = ingest_and_clean(&records, &mut cats, cfg.threshold_km, window)?;
            info!(
                "{} records cleaned to {} points of {} types ({} merges)",
                records.len(),
                ing.pattern.len(),
                ing.names.len(),
                ing.merges.len()
            );
            Ok(Loaded {
                pattern: ing.pattern,
                names: Some(ing.names),
                merges: ing.merges,
                n_records: records.len(),
            })
        }
    }
}

/// Cross-validated bandwidth over a geometric grid scaled to the window.
pub fn cv_bandwidth(points: &[Point], window: &ObservationWindow) -> Result<f64> {
    let b = window.bounding_box();
    let span = b.width().max(b.height());
    let grid = bandwidth_grid(span / 200.0, span / 4.0, 16);
    let fit = lscv_bandwidth(points, window, &grid)?;
    Ok(fit.bandwidth)
}

/// The center density and the bandwidth used, if any.
pub fn center_density(choice: &DensityChoice, x: &PointPattern) -> Result<(Box<dyn CenterDensity>, Option<f64>)> {
    match choice {
        DensityChoice::Uniform => Ok((Box::new(UniformDensity::new(x.window().clone())), None)),
        DensityChoice::Kde { bandwidth } => {
            let pts: Vec<Point> = x.points().iter().map(|p| p.loc).collect();
            let h = match bandwidth {
                Some(h) => *h,
                None => cv_bandwidth(&pts, x.window())?,
            };
            info!("center density bandwidth {h} km (cell {} km)", quadrature_cell(h));
            let field = kde_intensity(&pts, x.window(), h)?;
            Ok((Box::new(normalize_to_density(&field)?), Some(h)))
        }
    }
}

/// Reads a dense matrix of numbers, one row per line, skipping blank and
/// `#` lines.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: not a row of numbers", path.display(), n + 1))?;
        rows.push(row);
    }
    anyhow::ensure!(!rows.is_empty(), "{} holds no weights", path.display());
    anyhow::ensure!(
        rows.iter().all(|r| r.len() == rows[0].len()),
        "{}: rows have different lengths",
        path.display()
    );
    Ok(rows)
}
