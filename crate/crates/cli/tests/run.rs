use std::fs;
use std::path::Path;
use std::process::Command;

use qosdiff_cli::report::{cell_text, report, NO_RUNS};
use qosdiff_cli::{run, sweep, ExperimentConfig, RunManifest, SweepAxis};

fn config(out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "[dataset]
format = synthetic
users = 24
services = 30
observed = 0.8

[experiment]
output = {}
{extra}

[qosdiff]
dim = 8
hidden = 8
ff = 6
out = 4
disc_hidden = 4

[training]
batch_size = 16
max_epochs = 3
patience = 2
",
        out.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn three_seeds_give_three_rows_and_one_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = upcc\ndensities = 0.05\nseeds = 1, 2, 3");
    let summary = run(&cfg, false).unwrap();
    assert!(summary.success());
    assert_eq!(summary.executed, 3);
    let reports = lines(&dir.path().join("reports.csv"));
    assert_eq!(reports[0], "dataset,model,density,noise,seed,mae,rmse,scale");
    assert_eq!(reports.len(), 1 + 3);
    assert!(reports[1..].iter().all(|l| l.starts_with("synthetic,upcc,0.05,0.0,") && l.ends_with(",raw")));
    assert_eq!(lines(&dir.path().join("aggregate.csv")).len(), 1 + 1);
    assert_eq!(lines(&dir.path().join("reports_normalized.csv")).len(), 1 + 3);
    assert!(dir.path().join("figures/mae_vs_density.svg").exists());
    for s in 1..=3 {
        assert!(dir.path().join(format!("cells/upcc_d0.05_s{s}.csv")).exists());
    }
}

#[test]
fn noise_levels_get_degradation_against_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = pmf\nseeds = 1, 2\nnoise = 0, 5, 10");
    run(&cfg, false).unwrap();
    let agg = lines(&dir.path().join("aggregate.csv"));
    assert_eq!(agg.len(), 1 + 3);
    let degradation: Vec<&str> = agg[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(degradation[0], "0");
    assert!(degradation[1..].iter().all(|d| d.parse::<f64>().is_ok()));
    assert!(dir.path().join("figures/mae_vs_noise.svg").exists());
}

#[test]
fn rerun_is_a_no_op_and_force_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = qosdiff, biasmf\nseeds = 4, 5\nnoise = 0, 10");
    let first = run(&cfg, false).unwrap();
    assert_eq!((first.executed, first.skipped), (4, 0));
    let reports = fs::read(dir.path().join("reports.csv")).unwrap();
    let aggregate = fs::read(dir.path().join("aggregate.csv")).unwrap();
    let manifest = fs::read(dir.path().join("manifest.json")).unwrap();
    assert!(dir.path().join("cells/qosdiff_d0.05_s4.loss.csv").exists());

    let again = run(&cfg, false).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 4));
    assert_eq!(fs::read(dir.path().join("reports.csv")).unwrap(), reports);
    assert_eq!(fs::read(dir.path().join("aggregate.csv")).unwrap(), aggregate);
    assert_eq!(fs::read(dir.path().join("manifest.json")).unwrap(), manifest);

    let forced = run(&cfg, true).unwrap();
    assert_eq!((forced.executed, forced.skipped), (4, 0));
    assert_eq!(fs::read(dir.path().join("reports.csv")).unwrap(), reports);

    // A new seed runs only its own cells; a changed setting reruns its model.
    let mut more = cfg.clone();
    more.seeds.push(6);
    assert_eq!(run(&more, false).unwrap().executed, 2);
    more.factor.epochs = 7;
    let changed = run(&more, false).unwrap();
    assert_eq!((changed.executed, changed.skipped), (3, 3));
}

#[test]
fn manifest_snapshot_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = ipcc, uipcc\nseeds = 1");
    run(&cfg, false).unwrap();
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ExperimentConfig::parse(&manifest.config).unwrap(), cfg);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest.cells.len(), 2);
    assert_eq!(manifest.variants, ["ipcc", "uipcc"]);
}

#[test]
fn failing_cells_are_recorded_and_others_continue() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "models = upcc, pmf\nseeds = 1, 2");
    cfg.factor.lr = 50.0;
    cfg.factor.init_std = 1.0;
    let summary = run(&cfg, false).unwrap();
    assert_eq!(summary.failed.len(), 2);
    assert!(summary.failed.iter().all(|(id, msg)| id.starts_with("pmf") && msg.contains("learning rate")));
    assert_eq!(lines(&dir.path().join("reports.csv")).len(), 1 + 2);
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
    // Failed cells are retried on the next invocation.
    assert_eq!(run(&cfg, false).unwrap().executed, 2);
}

#[test]
fn lambda_sweep_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = qosdiff\nseeds = 1, 2\ndensities = 0.05, 0.1");
    let values = [0.2, 0.4, 0.6, 0.8];
    let summary = sweep(&cfg, SweepAxis::Lambda, &values, false).unwrap();
    assert!(summary.success());
    let out = dir.path().join("sweep_lambda");
    assert_eq!(lines(&out.join("reports.csv")).len(), 1 + 4 * 2 * 2);
    assert!(lines(&out.join("reports.csv"))[1].contains("qosdiff[lambda=0.2]"));
    assert!(out.join("figures/sweep_lambda.svg").exists());
}

#[test]
fn sweep_rejects_baselines_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "models = qosdiff, upcc");
    assert!(sweep(&cfg, SweepAxis::Lambda, &[0.2], false).is_err());
    let cfg = config(dir.path(), "models = qosdiff");
    assert!(sweep(&cfg, SweepAxis::Heads, &[3.0], false).is_err());
    assert!(sweep(&cfg, SweepAxis::Dimension, &[2.0], false).is_err());
    assert!(sweep(&cfg, SweepAxis::Heads, &[1.5], false).is_err());
    assert!(sweep(&cfg, SweepAxis::Lambda, &[1.2], false).is_err());
    assert!(sweep(&cfg, SweepAxis::Lambda, &[], false).is_err());
    assert!(!dir.path().join("sweep_lambda").exists());
}

#[test]
fn report_merges_models_into_one_grid() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path()).unwrap().starts_with(NO_RUNS));
    assert!(report(&dir.path().join("absent")).unwrap().starts_with(NO_RUNS));

    run(&config(&dir.path().join("a"), "models = upcc\nseeds = 1, 2"), false).unwrap();
    run(&config(&dir.path().join("b"), "models = biasmf\nseeds = 1, 2\nnoise = 0, 10"), false).unwrap();
    let text = report(dir.path()).unwrap();
    let mae = text.split("\n\n").next().unwrap();
    assert!(mae.starts_with("synthetic: MAE (raw scale, clean test)"));
    let rows: Vec<&str> = mae.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("model") && rows[1].contains("5%"));
    assert!(rows[2].starts_with("biasmf") && rows[3].starts_with("upcc"));
    assert!(rows[2].contains('±'));
    assert!(text.contains("MAE under identity noise at density 5%"));
    assert!(text.contains("p=10%"));
    assert_eq!(cell_text(0.358, 0.006), "0.3580±0.0060");
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_qosdiff");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe).args(["report", "--dir"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(NO_RUNS));

    let write = |name: &str, extra: &str| {
        let path = dir.path().join(name);
        fs::write(&path, format!("[dataset]\nformat = synthetic\nusers = 20\nservices = 20\n[experiment]\noutput = out_{name}\nseeds = 1\n{extra}")).unwrap();
        path
    };
    let good = write("good.ini", "models = upcc\n");
    let status = Command::new(exe).args(["run", "--config"]).arg(&good).env("QOSDIFF_THREADS", "2").status().unwrap();
    assert!(status.success());
    assert!(dir.path().join("out_good.ini/reports.csv").exists());

    let failing = write("bad.ini", "models = upcc, pmf\n[factor]\nlr = 50\ninit_std = 1\n");
    let status = Command::new(exe).args(["run", "--config"]).arg(&failing).status().unwrap();
    assert!(!status.success());

    let invalid = write("invalid.ini", "models = knn\n");
    let status = Command::new(exe).args(["run", "--config"]).arg(&invalid).status().unwrap();
    assert!(!status.success());

    let status = Command::new(exe)
        .args(["sweep", "--config"])
        .arg(&good)
        .args(["--axis", "heads", "--values", "1,2"])
        .status()
        .unwrap();
    assert!(!status.success(), "sweep over a baseline config must fail");
}
