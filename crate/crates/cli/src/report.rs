//! Consolidated model × density tables from every report under a directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use qosdiff_core::eval::aggregate;
use qosdiff_core::AggregateReport;

use crate::error::{CliError, Result};
use crate::output::{read_rows, ReportRow};

pub const NO_RUNS: &str = "no runs";

/// Raw-scale `reports.csv` files below `dir`, sorted.
pub fn find_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if !dir.is_dir() {
        return Ok(found);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                if path.file_name().is_some_and(|n| n != "cells") {
                    stack.push(path);
                }
            } else if path.file_name().is_some_and(|n| n == "reports.csv") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// `mean±std` with four decimals.
pub fn cell_text(mean: f64, std: f64) -> String {
    format!("{mean:.4}±{std:.4}")
}

fn grid(title: &str, rows: &[String], cols: &[String], cells: &BTreeMap<(String, String), String>) -> String {
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    let first = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0).max(5);
    let widths: Vec<usize> = cols
        .iter()
        .map(|c| {
            rows.iter()
                .filter_map(|r| cells.get(&(r.clone(), c.clone())))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(1)
                .max(c.chars().count())
        })
        .collect();
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let mut line = pad("model", first);
    for (c, w) in cols.iter().zip(&widths) {
        line.push_str("  ");
        line.push_str(&pad(c, *w));
    }
    writeln!(out, "{}", line.trim_end()).unwrap();
    for r in rows {
        let mut line = pad(r, first);
        for (c, w) in cols.iter().zip(&widths) {
            line.push_str("  ");
            let v = cells.get(&(r.clone(), c.clone())).map(String::as_str).unwrap_or("-");
            line.push_str(&pad(v, *w));
        }
        writeln!(out, "{}", line.trim_end()).unwrap();
    }
    out
}

fn density_label(d: f64) -> String {
    format!("{}%", (d * 1000.0).round() / 10.0)
}

/// Renders the aggregate as text tables: clean MAE and RMSE per model and
/// density, then MAE with degradation per noise level for each density that
/// has corrupted runs.
pub fn render(agg: &[AggregateReport]) -> String {
    let mut out = String::new();
    let datasets: BTreeSet<&str> = agg.iter().map(|a| a.key.dataset.as_str()).collect();
    for ds in datasets {
        let group: Vec<&AggregateReport> = agg.iter().filter(|a| a.key.dataset == ds).collect();
        let models: Vec<String> = group
            .iter()
            .map(|a| a.key.model.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut densities: Vec<f64> = group.iter().map(|a| a.key.density).collect();
        densities.sort_by(f64::total_cmp);
        densities.dedup();
        let cols: Vec<String> = densities.iter().map(|&d| density_label(d)).collect();
        for (metric, pick) in [
            ("MAE", (|a: &AggregateReport| (a.mae_mean, a.mae_std)) as fn(&AggregateReport) -> (f64, f64)),
            ("RMSE", |a| (a.rmse_mean, a.rmse_std)),
        ] {
            let mut cells = BTreeMap::new();
            for a in group.iter().filter(|a| a.key.noise_ratio == 0.0) {
                let (m, s) = pick(a);
                cells.insert((a.key.model.clone(), density_label(a.key.density)), cell_text(m, s));
            }
            if !cells.is_empty() {
                out.push_str(&grid(&format!("{ds}: {metric} (raw scale, clean test)"), &models, &cols, &cells));
                out.push('\n');
            }
        }
        for &d in &densities {
            let at: Vec<&&AggregateReport> = group.iter().filter(|a| a.key.density == d).collect();
            if !at.iter().any(|a| a.key.noise_ratio > 0.0) {
                continue;
            }
            let mut noise: Vec<f64> = at.iter().map(|a| a.key.noise_ratio).collect();
            noise.sort_by(f64::total_cmp);
            noise.dedup();
            let cols: Vec<String> = noise.iter().map(|p| format!("p={p}%")).collect();
            let mut cells = BTreeMap::new();
            for a in at {
                let mut text = cell_text(a.mae_mean, a.mae_std);
                if let (Some(deg), true) = (a.degradation, a.key.noise_ratio > 0.0) {
                    write!(text, " ({deg:+.1}%)").unwrap();
                }
                cells.insert((a.key.model.clone(), format!("p={}%", a.key.noise_ratio)), text);
            }
            out.push_str(&grid(
                &format!("{ds}: MAE under identity noise at density {}", density_label(d)),
                &models,
                &cols,
                &cells,
            ));
            out.push('\n');
        }
    }
    out
}

/// Merges every report under `dir` and renders the tables, or the
/// [`NO_RUNS`] message when there is nothing to show.
pub fn report(dir: &Path) -> Result<String> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for path in find_reports(dir)? {
        rows.extend(read_rows(&path)?);
    }
    let mut seen = BTreeSet::new();
    let before = rows.len();
    rows.retain(|r| {
        seen.insert((
            r.dataset.clone(),
            r.model.clone(),
            r.density.to_bits(),
            r.seed,
            r.noise.to_bits(),
            r.scale.clone(),
        ))
    });
    if rows.len() < before {
        warn!("{} duplicate report rows ignored", before - rows.len());
    }
    if rows.is_empty() {
        return Ok(format!("{NO_RUNS} found in {}\n", dir.display()));
    }
    let reports = rows.iter().map(ReportRow::to_report).collect::<Result<Vec<_>>>()?;
    Ok(render(&aggregate(&reports)?))
}
