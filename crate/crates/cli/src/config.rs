//! Experiment configuration in a plain `key = value` format with `[section]`
//! headers. Every key is optional except `dataset.format`; unknown sections
//! and keys are rejected.
//!
//! ```text
//! [dataset]
//! format = wsdream
//! matrix = data/rtMatrix.txt
//!
//! [experiment]
//! models = qosdiff, upcc, pmf
//! densities = 0.05
//! seeds = 1, 2, 3
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qosdiff_core::data::synthetic::SyntheticSpec;
use qosdiff_core::{AaimConfig, AdamWConfig, FactorConfig, LossConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    QoSDiff,
    Upcc,
    Ipcc,
    Uipcc,
    Pmf,
    BiasMf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::QoSDiff,
        ModelKind::Upcc,
        ModelKind::Ipcc,
        ModelKind::Uipcc,
        ModelKind::Pmf,
        ModelKind::BiasMf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::QoSDiff => "qosdiff",
            ModelKind::Upcc => "upcc",
            ModelKind::Ipcc => "ipcc",
            ModelKind::Uipcc => "uipcc",
            ModelKind::Pmf => "pmf",
            ModelKind::BiasMf => "biasmf",
        }
    }
}

impl Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model `{s}` (expected qosdiff, upcc, ipcc, uipcc, pmf or biasmf)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// WS-DREAM dense matrix plus optional user/service lists.
    WsDream {
        matrix: PathBuf,
        user_list: Option<PathBuf>,
        service_list: Option<PathBuf>,
        user_fields: Vec<String>,
        service_fields: Vec<String>,
    },
    /// `user_id,service_id,value,...` rows.
    Csv {
        path: PathBuf,
        user_fields: Vec<String>,
        service_fields: Vec<String>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSettings {
    pub top_k: usize,
    pub uipcc_weight: f64,
}

impl Default for NeighborSettings {
    fn default() -> Self {
        NeighborSettings {
            top_k: qosdiff_core::baselines::DEFAULT_TOP_K,
            uipcc_weight: qosdiff_core::baselines::DEFAULT_UIPCC_WEIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub models: Vec<ModelKind>,
    pub densities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Identity-corruption percentages evaluated in addition to the clean
    /// test set.
    pub noise: Vec<f64>,
    pub val_fraction: f64,
    pub output: PathBuf,
    pub qosdiff: AaimConfig,
    pub training: LossConfig,
    pub neighbors: NeighborSettings,
    pub factor: FactorConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            dataset,
            models: vec![ModelKind::QoSDiff],
            densities: vec![0.05],
            seeds: vec![1, 2, 3],
            noise: vec![0.0],
            val_fraction: qosdiff_core::data::VALIDATION_FRACTION,
            output: PathBuf::from("results"),
            qosdiff: AaimConfig::default(),
            training: LossConfig::default(),
            neighbors: NeighborSettings::default(),
            factor: FactorConfig::default(),
        }
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = ExperimentConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::WsDream {
                matrix,
                user_list,
                service_list,
                ..
            } => {
                fix(matrix);
                user_list.iter_mut().for_each(fix);
                service_list.iter_mut().for_each(fix);
            }
            DatasetSpec::Csv { path, .. } => fix(path),
            DatasetSpec::Synthetic(_) => {}
        }
        fix(&mut self.output);
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = parse_sections(text)?;
        let mut dataset = sections
            .remove("dataset")
            .ok_or_else(|| CliError::Config("missing [dataset] section".into()))?;
        let mut config = ExperimentConfig::new(parse_dataset(&mut dataset)?);
        dataset.finish()?;

        for (name, mut sec) in sections {
            match name.as_str() {
                "experiment" => {
                    let c = &mut config;
                    sec.take_with("models", &mut c.models, parse_list)?;
                    sec.take_with("densities", &mut c.densities, parse_list)?;
                    sec.take_with("seeds", &mut c.seeds, parse_list)?;
                    sec.take_with("noise", &mut c.noise, parse_list)?;
                    sec.take("val_fraction", &mut c.val_fraction)?;
                    sec.take_with("output", &mut c.output, |v| Ok(PathBuf::from(v)))?;
                }
                "qosdiff" => {
                    let q = &mut config.qosdiff;
                    sec.take("dim", &mut q.dim)?;
                    sec.take("heads", &mut q.heads)?;
                    sec.take("hidden", &mut q.hidden)?;
                    sec.take("ff", &mut q.ff)?;
                    sec.take("out", &mut q.out)?;
                    sec.take("disc_hidden", &mut q.disc_hidden)?;
                    sec.take("tau", &mut q.tau)?;
                    sec.take("gamma", &mut q.gamma)?;
                    sec.take("leaky_slope", &mut q.leaky_slope)?;
                    sec.take("keep_prob", &mut q.keep_prob)?;
                }
                "training" => {
                    let t = &mut config.training;
                    sec.take("lambda", &mut t.lambda)?;
                    sec.take("batch_size", &mut t.batch_size)?;
                    sec.take("max_epochs", &mut t.max_epochs)?;
                    sec.take("patience", &mut t.patience)?;
                }
                "optimizer.generator" => take_optimizer(&mut sec, &mut config.training.generator)?,
                "optimizer.discriminator" => {
                    take_optimizer(&mut sec, &mut config.training.discriminator)?
                }
                "neighbors" => {
                    sec.take("top_k", &mut config.neighbors.top_k)?;
                    sec.take("uipcc_weight", &mut config.neighbors.uipcc_weight)?;
                }
                "factor" => {
                    let f = &mut config.factor;
                    sec.take("factors", &mut f.factors)?;
                    sec.take("reg", &mut f.reg)?;
                    sec.take("lr", &mut f.lr)?;
                    sec.take("epochs", &mut f.epochs)?;
                    sec.take("init_std", &mut f.init_std)?;
                }
                _ => {
                    return Err(CliError::ConfigLine {
                        line: sec.line,
                        msg: format!("unknown section [{name}]"),
                    })
                }
            }
            sec.finish()?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks every field; nothing else runs on an invalid config.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.densities.is_empty() || self.seeds.is_empty() {
            return bad("densities and seeds must be non-empty".into());
        }
        if let Some(d) = self.densities.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return bad(format!("density {d} is outside (0, 1]"));
        }
        if let Some(p) = self.noise.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return bad(format!("noise level {p} is outside [0, 100]"));
        }
        if has_duplicates(&self.models)
            || has_duplicates(&self.seeds)
            || has_duplicates(&self.densities.iter().map(|d| d.to_bits()).collect::<Vec<_>>())
            || has_duplicates(&self.noise.iter().map(|d| d.to_bits()).collect::<Vec<_>>())
        {
            return bad("models, densities, seeds and noise levels must not repeat".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} is outside [0, 1)", self.val_fraction));
        }
        if self.output.as_os_str().is_empty() {
            return bad("output directory is empty".into());
        }
        self.qosdiff.validate()?;
        self.training.validate()?;
        for (net, o) in [("generator", &self.training.generator), ("discriminator", &self.training.discriminator)] {
            if !(o.lr > 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1)
                && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0)
            {
                return bad(format!("invalid {net} optimizer settings {o:?}"));
            }
        }
        if self.neighbors.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.neighbors.uipcc_weight) {
            return bad(format!("uipcc_weight {} is outside [0, 1]", self.neighbors.uipcc_weight));
        }
        let f = &self.factor;
        if f.factors == 0 || f.epochs == 0 || !(f.lr > 0.0) || !(f.reg >= 0.0) || !(f.init_std >= 0.0) {
            return bad(format!("invalid factor settings {f:?}"));
        }
        match &self.dataset {
            DatasetSpec::WsDream { matrix, .. } if matrix.as_os_str().is_empty() => {
                bad("dataset.matrix is required for wsdream".into())
            }
            DatasetSpec::Csv { path, .. } if path.as_os_str().is_empty() => {
                bad("dataset.path is required for csv".into())
            }
            DatasetSpec::Synthetic(s)
                if s.num_users == 0 || s.num_services == 0 || s.rank == 0 || !(s.observed > 0.0 && s.observed <= 1.0) =>
            {
                bad("synthetic dataset needs users, services, rank ≥ 1 and observed in (0, 1]".into())
            }
            _ => Ok(()),
        }
    }

    /// Canonical text form listing every key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut w = TextWriter::default();
        w.section("dataset");
        match &self.dataset {
            DatasetSpec::WsDream {
                matrix,
                user_list,
                service_list,
                user_fields,
                service_fields,
            } => {
                w.kv("format", "wsdream".into());
                w.kv("matrix", matrix.display().to_string());
                if let Some(p) = user_list {
                    w.kv("user_list", p.display().to_string());
                }
                if let Some(p) = service_list {
                    w.kv("service_list", p.display().to_string());
                }
                w.kv("user_fields", join(user_fields));
                w.kv("service_fields", join(service_fields));
            }
            DatasetSpec::Csv {
                path,
                user_fields,
                service_fields,
            } => {
                w.kv("format", "csv".into());
                w.kv("path", path.display().to_string());
                w.kv("user_fields", join(user_fields));
                w.kv("service_fields", join(service_fields));
            }
            DatasetSpec::Synthetic(s) => {
                w.kv("format", "synthetic".into());
                w.kv("users", s.num_users.to_string());
                w.kv("services", s.num_services.to_string());
                w.kv("rank", s.rank.to_string());
                w.kv("observed", s.observed.to_string());
                w.kv("user_attrs", join(&s.user_attrs));
                w.kv("service_attrs", join(&s.service_attrs));
                w.kv("noise", s.noise.to_string());
                w.kv("seed", s.seed.to_string());
            }
        }
        w.section("experiment");
        w.kv("models", join(&self.models));
        w.kv("densities", join(&self.densities));
        w.kv("seeds", join(&self.seeds));
        w.kv("noise", join(&self.noise));
        w.kv("val_fraction", self.val_fraction.to_string());
        w.kv("output", self.output.display().to_string());
        let q = &self.qosdiff;
        w.section("qosdiff");
        w.kv("dim", q.dim.to_string());
        w.kv("heads", q.heads.to_string());
        w.kv("hidden", q.hidden.to_string());
        w.kv("ff", q.ff.to_string());
        w.kv("out", q.out.to_string());
        w.kv("disc_hidden", q.disc_hidden.to_string());
        w.kv("tau", q.tau.to_string());
        w.kv("gamma", q.gamma.to_string());
        w.kv("leaky_slope", q.leaky_slope.to_string());
        w.kv("keep_prob", q.keep_prob.to_string());
        let t = &self.training;
        w.section("training");
        w.kv("lambda", t.lambda.to_string());
        w.kv("batch_size", t.batch_size.to_string());
        w.kv("max_epochs", t.max_epochs.to_string());
        w.kv("patience", t.patience.to_string());
        for (name, o) in [("generator", &t.generator), ("discriminator", &t.discriminator)] {
            w.section(&format!("optimizer.{name}"));
            w.kv("lr", o.lr.to_string());
            w.kv("weight_decay", o.weight_decay.to_string());
            w.kv("beta1", o.beta1.to_string());
            w.kv("beta2", o.beta2.to_string());
            w.kv("eps", o.eps.to_string());
        }
        w.section("neighbors");
        w.kv("top_k", self.neighbors.top_k.to_string());
        w.kv("uipcc_weight", self.neighbors.uipcc_weight.to_string());
        let f = &self.factor;
        w.section("factor");
        w.kv("factors", f.factors.to_string());
        w.kv("reg", f.reg.to_string());
        w.kv("lr", f.lr.to_string());
        w.kv("epochs", f.epochs.to_string());
        w.kv("init_std", f.init_std.to_string());
        w.out.trim_start().to_string()
    }
}

#[derive(Default)]
struct TextWriter {
    out: String,
}

impl TextWriter {
    fn section(&mut self, name: &str) {
        writeln!(self.out, "\n[{name}]").unwrap();
    }

    fn kv(&mut self, key: &str, value: String) {
        writeln!(self.out, "{key} = {value}").unwrap();
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().any(|(i, a)| items[..i].contains(a))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_names(v: &str) -> std::result::Result<Vec<String>, String> {
    parse_list(v)
}

fn take_optimizer(sec: &mut Section, o: &mut AdamWConfig) -> Result<()> {
    sec.take("lr", &mut o.lr)?;
    sec.take("weight_decay", &mut o.weight_decay)?;
    sec.take("beta1", &mut o.beta1)?;
    sec.take("beta2", &mut o.beta2)?;
    sec.take("eps", &mut o.eps)
}

fn parse_dataset(sec: &mut Section) -> Result<DatasetSpec> {
    let mut format = String::new();
    sec.take_with("format", &mut format, |v| Ok(v.to_ascii_lowercase()))?;
    let mut user_fields = Vec::new();
    let mut service_fields = Vec::new();
    match format.as_str() {
        "wsdream" => {
            let mut matrix = PathBuf::new();
            let mut user_list = None;
            let mut service_list = None;
            sec.take_with("matrix", &mut matrix, |v| Ok(PathBuf::from(v)))?;
            sec.take_with("user_list", &mut user_list, |v| Ok(Some(PathBuf::from(v))))?;
            sec.take_with("service_list", &mut service_list, |v| Ok(Some(PathBuf::from(v))))?;
            sec.take_with("user_fields", &mut user_fields, parse_names)?;
            sec.take_with("service_fields", &mut service_fields, parse_names)?;
            Ok(DatasetSpec::WsDream {
                matrix,
                user_list,
                service_list,
                user_fields,
                service_fields,
            })
        }
        "csv" => {
            let mut path = PathBuf::new();
            sec.take_with("path", &mut path, |v| Ok(PathBuf::from(v)))?;
            sec.take_with("user_fields", &mut user_fields, parse_names)?;
            sec.take_with("service_fields", &mut service_fields, parse_names)?;
            Ok(DatasetSpec::Csv {
                path,
                user_fields,
                service_fields,
            })
        }
        "synthetic" => {
            let mut s = SyntheticSpec::default();
            sec.take("users", &mut s.num_users)?;
            sec.take("services", &mut s.num_services)?;
            sec.take("rank", &mut s.rank)?;
            sec.take("observed", &mut s.observed)?;
            sec.take_with("user_attrs", &mut s.user_attrs, parse_list)?;
            sec.take_with("service_attrs", &mut s.service_attrs, parse_list)?;
            sec.take("noise", &mut s.noise)?;
            sec.take("seed", &mut s.seed)?;
            Ok(DatasetSpec::Synthetic(s))
        }
        "" => Err(CliError::ConfigLine {
            line: sec.line,
            msg: "[dataset] needs a format (wsdream, csv or synthetic)".into(),
        }),
        other => Err(CliError::ConfigLine {
            line: sec.line,
            msg: format!("unknown dataset format `{other}`"),
        }),
    }
}

struct Section {
    name: String,
    /// Line of the section header.
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        self.take_with(key, slot, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        slot: &mut T,
        parse: impl FnOnce(&str) -> std::result::Result<T, String>,
    ) -> Result<()> {
        if let Some((value, line)) = self.entries.remove(key) {
            *slot = parse(&value).map_err(|e| CliError::ConfigLine {
                line,
                msg: format!("{}.{key}: {e}", self.name),
            })?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(CliError::ConfigLine {
                line,
                msg: format!("unknown key `{key}` in [{}]", self.name),
            }),
            None => Ok(()),
        }
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') {
            continue;
        }
        if let Some(rest) = l.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::ConfigLine {
                    line,
                    msg: format!("malformed section header `{l}`"),
                })?
                .trim()
                .to_string();
            if sections.contains_key(&name) {
                return Err(CliError::ConfigLine {
                    line,
                    msg: format!("section [{name}] appears twice"),
                });
            }
            sections.insert(
                name.clone(),
                Section {
                    name: name.clone(),
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = l.split_once('=').ok_or_else(|| CliError::ConfigLine {
            line,
            msg: format!("expected `key = value`, got `{l}`"),
        })?;
        let section = current
            .as_ref()
            .and_then(|c| sections.get_mut(c))
            .ok_or_else(|| CliError::ConfigLine {
                line,
                msg: "key outside of any section".into(),
            })?;
        let key = key.trim().to_string();
        if section.entries.insert(key.clone(), (value.trim().to_string(), line)).is_some() {
            return Err(CliError::ConfigLine {
                line,
                msg: format!("duplicate key `{key}` in [{}]", section.name),
            });
        }
    }
    Ok(sections)
}
