//! CSV report rows, aggregate tables, figures and atomic file writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use qosdiff_core::{AggregateReport, MetricsReport, Scale};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::plot::{LinePlot, Series};
use crate::runner::Variant;

/// One line of a report CSV: a single (model, density, seed, noise) cell at
/// one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub density: f64,
    pub noise: f64,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub scale: String,
}

impl ReportRow {
    pub fn from_report(r: &MetricsReport) -> Self {
        ReportRow {
            dataset: r.dataset.clone(),
            model: r.model.clone(),
            density: r.density,
            noise: r.noise_ratio,
            seed: r.seed,
            mae: r.mae,
            rmse: r.rmse,
            scale: r.scale.as_str().to_string(),
        }
    }

    pub fn to_report(&self) -> Result<MetricsReport> {
        let scale = match self.scale.as_str() {
            s if s == Scale::Raw.as_str() => Scale::Raw,
            s if s == Scale::Normalized.as_str() => Scale::Normalized,
            other => return Err(CliError::Config(format!("unknown scale `{other}` in report"))),
        };
        Ok(MetricsReport {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            density: self.density,
            seed: self.seed,
            noise_ratio: self.noise,
            mae: self.mae,
            rmse: self.rmse,
            scale,
        })
    }
}

/// Orders rows by model, density, seed, noise and scale.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.dataset
            .cmp(&b.dataset)
            .then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.density.total_cmp(&b.density))
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.noise.total_cmp(&b.noise))
            .then_with(|| a.scale.cmp(&b.scale))
    });
}

pub fn rows_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["dataset", "model", "density", "noise", "seed", "mae", "rmse", "scale"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

pub fn aggregate_csv(agg: &[AggregateReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "model",
        "density",
        "noise",
        "scale",
        "seeds",
        "mae_mean",
        "mae_std",
        "rmse_mean",
        "rmse_std",
        "degradation",
    ])?;
    for a in agg {
        let seeds: Vec<String> = a.seeds.iter().map(|s| s.to_string()).collect();
        w.write_record([
            a.key.dataset.clone(),
            a.key.model.clone(),
            a.key.density.to_string(),
            a.key.noise_ratio.to_string(),
            a.key.scale.as_str().to_string(),
            seeds.join(";"),
            a.mae_mean.to_string(),
            a.mae_std.to_string(),
            a.rmse_mean.to_string(),
            a.rmse_std.to_string(),
            a.degradation.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Line plots of raw-scale aggregates: error against density per model,
/// error against noise per model and density when noise levels were run, and
/// error against the swept value per density for sweeps.
pub fn figures(agg: &[AggregateReport], variants: &[Variant]) -> Vec<(String, LinePlot)> {
    let mut out = Vec::new();
    let clean: Vec<&AggregateReport> = agg.iter().filter(|a| a.key.noise_ratio == 0.0).collect();
    let swept: BTreeMap<&str, (&str, f64)> = variants
        .iter()
        .filter_map(|v| v.axis_value.map(|av| (v.label.as_str(), av)))
        .collect();

    if let Some(&(axis, _)) = swept.values().next() {
        let mut by_density: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for a in &clean {
            if let Some(&(_, x)) = swept.get(a.key.model.as_str()) {
                by_density.entry(a.key.density.to_bits()).or_default().push((x, a.mae_mean));
            }
        }
        let series = by_density
            .into_iter()
            .map(|(d, mut pts)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    name: format!("density {}%", f64::from_bits(d) * 100.0),
                    points: pts,
                }
            })
            .collect();
        out.push((
            format!("sweep_{axis}.svg"),
            LinePlot {
                title: format!("MAE vs {axis}"),
                x_label: axis.to_string(),
                y_label: "MAE (raw scale)".into(),
                series,
            },
        ));
        return out;
    }

    for (metric, pick) in [("mae", (|a: &AggregateReport| a.mae_mean) as fn(&AggregateReport) -> f64), ("rmse", |a| a.rmse_mean)] {
        let mut by_model: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for a in &clean {
            by_model.entry(&a.key.model).or_default().push((a.key.density * 100.0, pick(a)));
        }
        out.push((
            format!("{metric}_vs_density.svg"),
            LinePlot {
                title: format!("{} vs density", metric.to_uppercase()),
                x_label: "density (%)".into(),
                y_label: format!("{} (raw scale)", metric.to_uppercase()),
                series: by_model
                    .into_iter()
                    .map(|(m, mut pts)| {
                        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series { name: m.to_string(), points: pts }
                    })
                    .collect(),
            },
        ));
    }

    if agg.iter().any(|a| a.key.noise_ratio > 0.0) {
        let mut by_cell: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
        for a in agg {
            by_cell
                .entry((a.key.model.clone(), a.key.density.to_bits()))
                .or_default()
                .push((a.key.noise_ratio, a.mae_mean));
        }
        out.push((
            "mae_vs_noise.svg".into(),
            LinePlot {
                title: "MAE vs identity noise".into(),
                x_label: "noise (%)".into(),
                y_label: "MAE (raw scale)".into(),
                series: by_cell
                    .into_iter()
                    .map(|((m, d), mut pts)| {
                        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series {
                            name: format!("{m} @ {}%", f64::from_bits(d) * 100.0),
                            points: pts,
                        }
                    })
                    .collect(),
            },
        ));
    }
    out
}
