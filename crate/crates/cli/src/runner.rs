//! Experiment execution: one cell per (model, density, seed), run in
//! parallel, each producing clean and corrupted test metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use qosdiff_core::baselines::{factor_fit, NeighborModel, Similarity, Uipcc};
use qosdiff_core::data::synthetic::low_rank;
use qosdiff_core::data::{corrupt_test, load_triplets_csv, load_wsdream, make_split_with};
use qosdiff_core::eval::{aggregate, evaluate};
use qosdiff_core::train::{fit, loss_log_csv};
use qosdiff_core::{
    AaimConfig, FactorVariant, LossConfig, MetricsReport, QoSDataset, QoSDiff, QosPredictor, Scale, Section,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, ModelKind};
use crate::error::{CliError, Result};
use crate::output::{self, ReportRow};
use crate::seeds;

/// Environment variable capping the number of cells run concurrently.
pub const THREADS_ENV: &str = "QOSDIFF_THREADS";

/// One trainable configuration: a model kind plus the QoSDiff settings it
/// uses. Sweeps produce one variant per axis value.
#[derive(Clone, Debug)]
pub struct Variant {
    pub label: String,
    pub kind: ModelKind,
    pub qosdiff: AaimConfig,
    pub training: LossConfig,
    /// Sweep axis name and coordinate, when the variant comes from a sweep.
    pub axis_value: Option<(&'static str, f64)>,
}

impl Variant {
    pub fn plain(kind: ModelKind, config: &ExperimentConfig) -> Self {
        Variant {
            label: kind.as_str().to_string(),
            kind,
            qosdiff: config.qosdiff.clone(),
            training: config.training.clone(),
            axis_value: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub model: String,
    pub density: f64,
    pub seed: u64,
    /// Digest of everything that determines the cell's results.
    pub fingerprint: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub split_seconds: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    /// QoSDiff epochs actually run.
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    /// Canonical config text; parses back to the config that produced it.
    pub config: String,
    pub variants: Vec<String>,
    pub load_seconds: f64,
    pub wall_seconds: f64,
    pub cells: BTreeMap<String, CellRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub output: PathBuf,
    /// Cells trained and evaluated in this invocation.
    pub executed: usize,
    /// Cells reused from an earlier identical run.
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Cell {
    id: String,
    variant: usize,
    density: f64,
    seed: u64,
    fingerprint: String,
}

struct CellOutcome {
    rows: Vec<ReportRow>,
    record: CellRecord,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<QoSDataset> {
    let ds = match spec {
        DatasetSpec::WsDream {
            matrix,
            user_list,
            service_list,
            user_fields,
            service_fields,
        } => load_wsdream(
            matrix,
            user_list.as_deref(),
            service_list.as_deref(),
            user_fields,
            service_fields,
        )?,
        DatasetSpec::Csv {
            path,
            user_fields,
            service_fields,
        } => {
            let (ds, report) = load_triplets_csv(path, user_fields, service_fields)?;
            if report.rejected > 0 || report.duplicates > 0 {
                warn!(
                    "{}: {} rows rejected, {} duplicates overwritten",
                    path.display(),
                    report.rejected,
                    report.duplicates
                );
            }
            ds
        }
        DatasetSpec::Synthetic(s) => low_rank(s)?,
    };
    Ok(ds.normalize())
}

fn cell_id(label: &str, density: f64, seed: u64) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '-' })
        .collect();
    format!("{clean}_d{density}_s{seed}")
}

fn fingerprint(config: &ExperimentConfig, variant: &Variant, density: f64, seed: u64) -> String {
    let mut single = config.clone();
    single.models = vec![variant.kind];
    single.densities = vec![density];
    single.seeds = vec![seed];
    single.output = PathBuf::new();
    // Settings a model never reads are reset so changing them leaves its
    // cells valid.
    let defaults = ExperimentConfig::new(config.dataset.clone());
    single.qosdiff = defaults.qosdiff.clone();
    single.training = defaults.training.clone();
    single.neighbors = defaults.neighbors.clone();
    single.factor = defaults.factor.clone();
    match variant.kind {
        ModelKind::QoSDiff => {
            single.qosdiff = variant.qosdiff.clone();
            single.training = variant.training.clone();
        }
        ModelKind::Upcc | ModelKind::Ipcc | ModelKind::Uipcc => single.neighbors = config.neighbors.clone(),
        ModelKind::Pmf | ModelKind::BiasMf => single.factor = config.factor.clone(),
    }
    seeds::text_hash(&format!("{}\n{}\n{}", env!("CARGO_PKG_VERSION"), variant.label, single.to_text()))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a count, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker threads: {e}")))
}

/// Runs every cell of `variants × densities × seeds` into `out_dir`.
///
/// A cell whose fingerprint matches a completed record of the existing
/// manifest is reused unless `force` is set. Failing cells are recorded and
/// the remaining cells continue.
pub fn run_variants(
    config: &ExperimentConfig,
    variants: &[Variant],
    out_dir: &Path,
    force: bool,
) -> Result<RunSummary> {
    config.validate()?;
    for v in variants {
        v.qosdiff.validate()?;
        v.training.validate()?;
    }
    let started = Instant::now();
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| CliError::io(&cells_dir, e))?;
    let manifest_path = out_dir.join("manifest.json");
    let previous = if force || !manifest_path.exists() {
        None
    } else {
        match RunManifest::read(&manifest_path) {
            Ok(m) => Some(m),
            Err(e) => {
                warn!("ignoring unreadable manifest {}: {e}", manifest_path.display());
                None
            }
        }
    };

    let mut cells = Vec::new();
    for (vi, v) in variants.iter().enumerate() {
        for &density in &config.densities {
            for &seed in &config.seeds {
                cells.push(Cell {
                    id: cell_id(&v.label, density, seed),
                    variant: vi,
                    density,
                    seed,
                    fingerprint: fingerprint(config, v, density, seed),
                });
            }
        }
    }

    let mut reused: BTreeMap<String, (Vec<ReportRow>, CellRecord)> = BTreeMap::new();
    if let Some(prev) = &previous {
        for cell in &cells {
            let Some(rec) = prev.cells.get(&cell.id) else { continue };
            if rec.status != CellStatus::Completed || rec.fingerprint != cell.fingerprint {
                continue;
            }
            match output::read_rows(&cells_dir.join(format!("{}.csv", cell.id))) {
                Ok(rows) => {
                    reused.insert(cell.id.clone(), (rows, rec.clone()));
                }
                Err(e) => warn!("re-running {}: {e}", cell.id),
            }
        }
    }
    let pending: Vec<&Cell> = cells.iter().filter(|c| !reused.contains_key(&c.id)).collect();
    info!(
        "{} cells: {} to run, {} already complete",
        cells.len(),
        pending.len(),
        reused.len()
    );

    let mut load_seconds = 0.0;
    let mut outcomes: BTreeMap<String, std::result::Result<CellOutcome, (String, CellRecord)>> = BTreeMap::new();
    if !pending.is_empty() {
        let t = Instant::now();
        let ds = load_dataset(&config.dataset)?;
        load_seconds = t.elapsed().as_secs_f64();
        info!(
            "dataset {}: {} users, {} services, {} observations",
            ds.name,
            ds.num_users,
            ds.num_services,
            ds.len()
        );
        let pool = thread_pool()?;
        let results: Vec<_> = pool.install(|| {
            pending
                .par_iter()
                .map(|cell| {
                    let res = run_cell(config, &variants[cell.variant], cell, &ds, &cells_dir);
                    (cell.id.clone(), res, cell)
                })
                .collect()
        });
        for (id, res, cell) in results {
            let entry = match res {
                Ok(outcome) => {
                    info!("{id}: done");
                    Ok(outcome)
                }
                Err(e) => {
                    warn!("{id}: {e}");
                    let v = &variants[cell.variant];
                    Err((
                        e.to_string(),
                        CellRecord {
                            model: v.label.clone(),
                            density: cell.density,
                            seed: cell.seed,
                            fingerprint: cell.fingerprint.clone(),
                            status: CellStatus::Failed,
                            error: Some(e.to_string()),
                            split_seconds: 0.0,
                            train_seconds: 0.0,
                            eval_seconds: 0.0,
                            epochs: None,
                        },
                    ))
                }
            };
            outcomes.insert(id, entry);
        }
    }

    let mut summary = RunSummary {
        output: out_dir.to_path_buf(),
        executed: pending.len(),
        skipped: reused.len(),
        ..RunSummary::default()
    };
    let mut records = BTreeMap::new();
    for cell in &cells {
        if let Some((rows, rec)) = reused.remove(&cell.id) {
            summary.rows.extend(rows);
            records.insert(cell.id.clone(), rec);
            continue;
        }
        match outcomes.remove(&cell.id) {
            Some(Ok(outcome)) => {
                summary.rows.extend(outcome.rows);
                records.insert(cell.id.clone(), outcome.record);
            }
            Some(Err((msg, rec))) => {
                summary.failed.push((cell.id.clone(), msg));
                records.insert(cell.id.clone(), rec);
            }
            None => unreachable!("every pending cell yields an outcome"),
        }
    }
    output::sort_rows(&mut summary.rows);

    write_outputs(out_dir, &summary.rows, variants)?;
    if summary.executed > 0 || previous.is_none() {
        let config_text = config.to_text();
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: seeds::text_hash(&config_text),
            config: config_text,
            variants: variants.iter().map(|v| v.label.clone()).collect(),
            load_seconds,
            wall_seconds: started.elapsed().as_secs_f64(),
            cells: records,
        };
        output::write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    }
    Ok(summary)
}

/// Reports, aggregates and figures for the completed rows.
fn write_outputs(out_dir: &Path, rows: &[ReportRow], variants: &[Variant]) -> Result<()> {
    for (scale, suffix) in [(Scale::Raw, ""), (Scale::Normalized, "_normalized")] {
        let subset: Vec<ReportRow> = rows.iter().filter(|r| r.scale == scale.as_str()).cloned().collect();
        output::write_atomic(&out_dir.join(format!("reports{suffix}.csv")), &output::rows_csv(&subset)?)?;
        let reports: Vec<MetricsReport> = subset.iter().map(ReportRow::to_report).collect::<Result<_>>()?;
        let agg = if reports.is_empty() { Vec::new() } else { aggregate(&reports)? };
        output::write_atomic(&out_dir.join(format!("aggregate{suffix}.csv")), &output::aggregate_csv(&agg)?)?;
        if scale == Scale::Raw && !agg.is_empty() {
            let figures = out_dir.join("figures");
            fs::create_dir_all(&figures).map_err(|e| CliError::io(&figures, e))?;
            for (name, plot) in output::figures(&agg, variants) {
                output::write_atomic(&figures.join(name), plot.to_svg().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn run_cell(
    config: &ExperimentConfig,
    variant: &Variant,
    cell: &Cell,
    ds: &QoSDataset,
    cells_dir: &Path,
) -> Result<CellOutcome> {
    let (density, seed) = (cell.density, cell.seed);
    let t = Instant::now();
    let split = make_split_with(ds, density, config.val_fraction, seeds::split_seed(seed, density))?;
    let split_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let train = split.triplets(ds, Section::Train);
    let train_seed = seeds::train_seed(seed, density, &variant.label);
    let (m, n) = (ds.num_users, ds.num_services);
    let nb = &config.neighbors;
    let mut epochs = None;
    let model: Box<dyn QosPredictor> = match variant.kind {
        ModelKind::QoSDiff => {
            let mut model = QoSDiff::new(ds, &variant.qosdiff, seeds::derive("init", &[train_seed]))?;
            let state = fit(&mut model, ds, &split, &variant.training, train_seed)?;
            epochs = Some(state.epoch);
            output::write_atomic(
                &cells_dir.join(format!("{}.loss.csv", cell.id)),
                loss_log_csv(&state.log).as_bytes(),
            )?;
            Box::new(model)
        }
        ModelKind::Upcc => Box::new(NeighborModel::fit(&train, m, n, Similarity::User, nb.top_k)?),
        ModelKind::Ipcc => Box::new(NeighborModel::fit(&train, m, n, Similarity::Service, nb.top_k)?),
        ModelKind::Uipcc => Box::new(Uipcc::new(
            NeighborModel::fit(&train, m, n, Similarity::User, nb.top_k)?,
            NeighborModel::fit(&train, m, n, Similarity::Service, nb.top_k)?,
            nb.uipcc_weight,
        )?),
        ModelKind::Pmf => Box::new(factor_fit(&train, m, n, FactorVariant::Pmf, &config.factor, train_seed)?),
        ModelKind::BiasMf => Box::new(factor_fit(&train, m, n, FactorVariant::BiasMf, &config.factor, train_seed)?),
    };
    let train_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut rows = Vec::new();
    let test = split.triplets(ds, Section::Test);
    for r in evaluate(model.as_ref(), &variant.label, &test, ds, density, seed, 0.0)? {
        rows.push(ReportRow::from_report(&r));
    }
    for &p in config.noise.iter().filter(|p| **p > 0.0) {
        let corrupted = corrupt_test(&split, ds, p, seeds::noise_seed(seed, density, p))?;
        for r in evaluate(model.as_ref(), &variant.label, &corrupted.triplets, ds, density, seed, p)? {
            rows.push(ReportRow::from_report(&r));
        }
    }
    output::sort_rows(&mut rows);
    output::write_atomic(&cells_dir.join(format!("{}.csv", cell.id)), &output::rows_csv(&rows)?)?;
    let eval_seconds = t.elapsed().as_secs_f64();

    Ok(CellOutcome {
        rows,
        record: CellRecord {
            model: variant.label.clone(),
            density,
            seed,
            fingerprint: cell.fingerprint.clone(),
            status: CellStatus::Completed,
            error: None,
            split_seconds,
            train_seconds,
            eval_seconds,
            epochs,
        },
    })
}

/// Runs the configured models into the configured output directory.
pub fn run(config: &ExperimentConfig, force: bool) -> Result<RunSummary> {
    let variants: Vec<Variant> = config.models.iter().map(|&k| Variant::plain(k, config)).collect();
    run_variants(config, &variants, &config.output, force)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Dimension,
    Heads,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Dimension => "dimension",
            SweepAxis::Heads => "heads",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" => Ok(SweepAxis::Lambda),
            "dimension" | "dim" => Ok(SweepAxis::Dimension),
            "heads" => Ok(SweepAxis::Heads),
            _ => Err(format!("unknown sweep axis `{s}` (expected lambda, dimension or heads)")),
        }
    }
}

/// QoSDiff variants with one hyperparameter replaced by each of `values`.
pub fn sweep_variants(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<Variant>> {
    if let Some(other) = config.models.iter().find(|m| **m != ModelKind::QoSDiff) {
        return Err(CliError::Config(format!(
            "sweeps apply to qosdiff only, but models lists {other}"
        )));
    }
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let mut out = Vec::new();
    for &value in values {
        let mut v = Variant::plain(ModelKind::QoSDiff, config);
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(CliError::Config(format!("{} values must be positive integers, got {value}", axis.as_str())))
            }
        };
        match axis {
            SweepAxis::Lambda => v.training.lambda = value,
            SweepAxis::Dimension => v.qosdiff.dim = as_count()?,
            SweepAxis::Heads => v.qosdiff.heads = as_count()?,
        }
        v.qosdiff.validate()?;
        v.training.validate()?;
        v.label = format!("qosdiff[{}={value}]", axis.as_str());
        v.axis_value = Some((axis.as_str(), value));
        out.push(v);
    }
    Ok(out)
}

/// Runs a one-axis sweep into `<output>/sweep_<axis>`.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64], force: bool) -> Result<RunSummary> {
    let variants = sweep_variants(config, axis, values)?;
    run_variants(config, &variants, &config.output.join(format!("sweep_{}", axis.as_str())), force)
}
