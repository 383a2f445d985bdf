//! Error metrics, seed aggregation and robustness degradation.

use std::collections::BTreeMap;
use std::fmt;

use crate::data::{QoSDataset, Triplet};
use crate::error::{Error, Result};

/// Anything that predicts normalized QoS values for `(user, service)` pairs.
pub trait QosPredictor {
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>>;
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    Normalized,
    Raw,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Normalized => "normalized",
            Scale::Raw => "raw",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub density: f64,
    pub seed: u64,
    pub noise_ratio: f64,
    pub mae: f64,
    pub rmse: f64,
    pub scale: Scale,
}

/// MAE and RMSE of clamped predictions against the test targets, both taken
/// on the normalized scale of `ds`.
pub fn score(predictions: &[f64], test: &[Triplet], ds: &QoSDataset, scale: Scale) -> Result<(f64, f64)> {
    let factor = match scale {
        Scale::Normalized => 1.0,
        Scale::Raw => ds.raw_scale(),
    };
    let pred: Vec<f64> = predictions
        .iter()
        .map(|p| p.clamp(0.0, 1.0) * factor)
        .collect();
    let truth: Vec<f64> = test.iter().map(|t| t.value * factor).collect();
    Ok((mae(&pred, &truth)?, rmse(&pred, &truth)?))
}

/// Scores `model` on `test` at both scales, returning `[normalized, raw]`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<P: QosPredictor + ?Sized>(
    model: &P,
    model_name: &str,
    test: &[Triplet],
    ds: &QoSDataset,
    density: f64,
    seed: u64,
    noise_ratio: f64,
) -> Result<[MetricsReport; 2]> {
    if !ds.is_normalized() {
        return Err(Error::InvalidArgument(
            "evaluation expects a normalized dataset".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = test.iter().map(|t| (t.user, t.service)).collect();
    let predictions = model.predict(&pairs)?;
    let report = |scale| -> Result<MetricsReport> {
        let (mae, rmse) = score(&predictions, test, ds, scale)?;
        Ok(MetricsReport {
            dataset: ds.name.clone(),
            model: model_name.to_string(),
            density,
            seed,
            noise_ratio,
            mae,
            rmse,
            scale,
        })
    };
    Ok([report(Scale::Normalized)?, report(Scale::Raw)?])
}

/// Relative MAE increase in percent.
pub fn degradation(mae_p: f64, mae_0: f64) -> Result<f64> {
    if !(mae_0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline MAE must be positive, got {mae_0}"
        )));
    }
    Ok((mae_p - mae_0) / mae_0 * 100.0)
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for `n = 1`).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty group".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Grouping key of an aggregate row.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct GroupKey {
    pub dataset: String,
    pub model: String,
    pub density: f64,
    pub noise_ratio: f64,
    pub scale: Scale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub key: GroupKey,
    pub seeds: Vec<u64>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Relative to the clean (`noise_ratio = 0`) group of the same model,
    /// density and scale, when that group exists.
    pub degradation: Option<f64>,
}

/// Groups reports by `(dataset, model, density, noise, scale)` and summarizes
/// each group over its seeds.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateReport>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to aggregate".into()));
    }
    // Floats are keyed by their bit patterns so grouping is exact.
    type Key = (String, String, u64, u64, Scale);
    let mut groups: BTreeMap<Key, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        let key = (
            r.dataset.clone(),
            r.model.clone(),
            r.density.to_bits(),
            r.noise_ratio.to_bits(),
            r.scale,
        );
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let first = members[0];
        let maes: Vec<f64> = members.iter().map(|r| r.mae).collect();
        let rmses: Vec<f64> = members.iter().map(|r| r.rmse).collect();
        let (mae_mean, mae_std) = mean_std(&maes)?;
        let (rmse_mean, rmse_std) = mean_std(&rmses)?;
        out.push(AggregateReport {
            key: GroupKey {
                dataset: first.dataset.clone(),
                model: first.model.clone(),
                density: first.density,
                noise_ratio: first.noise_ratio,
                scale: first.scale,
            },
            seeds: members.iter().map(|r| r.seed).collect(),
            mae_mean,
            mae_std,
            rmse_mean,
            rmse_std,
            degradation: None,
        });
    }
    let clean: Vec<(GroupKey, f64)> = out
        .iter()
        .filter(|a| a.key.noise_ratio == 0.0)
        .map(|a| (a.key.clone(), a.mae_mean))
        .collect();
    for a in &mut out {
        let base = clean.iter().find(|(k, _)| {
            k.dataset == a.key.dataset
                && k.model == a.key.model
                && k.density == a.key.density
                && k.scale == a.key.scale
        });
        if let Some((_, mae_0)) = base {
            a.degradation = degradation(a.mae_mean, *mae_0).ok();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
