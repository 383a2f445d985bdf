use std::path::PathBuf;

use qosdiff_cli::config::NeighborSettings;
use qosdiff_cli::{CliError, DatasetSpec, ExperimentConfig, ModelKind};

const EXAMPLE: &str = "
# response times
[dataset]
format = wsdream
matrix = data/rtMatrix.txt
user_list = data/userlist.txt
user_fields = Country, AS

[experiment]
models = qosdiff, upcc, PMF
densities = 0.025, 0.05
seeds = 1, 2, 3
noise = 0, 5, 10
output = out

[training]
lambda = 0.4
max_epochs = 40
patience = 5

[optimizer.discriminator]
lr = 0.0005
";

fn line_of(err: CliError) -> usize {
    match err {
        CliError::ConfigLine { line, .. } => line,
        other => panic!("expected a line error, got {other}"),
    }
}

#[test]
fn parses_example() {
    let c = ExperimentConfig::parse(EXAMPLE).unwrap();
    assert_eq!(
        c.dataset,
        DatasetSpec::WsDream {
            matrix: "data/rtMatrix.txt".into(),
            user_list: Some("data/userlist.txt".into()),
            service_list: None,
            user_fields: vec!["Country".into(), "AS".into()],
            service_fields: vec![],
        }
    );
    assert_eq!(c.models, [ModelKind::QoSDiff, ModelKind::Upcc, ModelKind::Pmf]);
    assert_eq!(c.densities, [0.025, 0.05]);
    assert_eq!(c.seeds, [1, 2, 3]);
    assert_eq!(c.noise, [0.0, 5.0, 10.0]);
    assert_eq!(c.training.lambda, 0.4);
    assert_eq!(c.training.batch_size, 256);
    assert_eq!(c.training.discriminator.lr, 0.0005);
    assert_eq!(c.training.generator.lr, 0.001);
    assert_eq!(c.qosdiff.dim, 256);
    assert_eq!(c.neighbors, NeighborSettings::default());
}

#[test]
fn canonical_text_round_trips() {
    let c = ExperimentConfig::parse(EXAMPLE).unwrap();
    let text = c.to_text();
    let again = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(c, again);
    assert_eq!(text, again.to_text());

    let synthetic = ExperimentConfig::parse("[dataset]\nformat = synthetic\nusers = 12\nuser_attrs =\n").unwrap();
    let DatasetSpec::Synthetic(s) = &synthetic.dataset else { panic!() };
    assert_eq!(s.num_users, 12);
    assert!(s.user_attrs.is_empty());
    assert_eq!(ExperimentConfig::parse(&synthetic.to_text()).unwrap(), synthetic);

    let mut odd = synthetic.clone();
    odd.training.generator.eps = 1.0e-300 / 3.0;
    odd.qosdiff.tau = 0.1 + 0.2;
    odd.factor.reg = 1e-17;
    assert_eq!(ExperimentConfig::parse(&odd.to_text()).unwrap(), odd);
}

#[test]
fn unknown_keys_and_sections_are_rejected_with_lines() {
    let err = ExperimentConfig::parse("[dataset]\nformat = synthetic\nuserz = 3\n").unwrap_err();
    assert_eq!(line_of(err), 3);
    let err = ExperimentConfig::parse("[dataset]\nformat = synthetic\n\n[modle]\nx = 1\n").unwrap_err();
    assert_eq!(line_of(err), 4);
    let err = ExperimentConfig::parse("[dataset]\nformat = csv\npath = a.csv\nmatrix = m.txt\n").unwrap_err();
    assert!(err.to_string().contains("matrix"), "{err}");
}

#[test]
fn malformed_text_is_rejected() {
    for (text, line) in [
        ("format = csv\n", 1),
        ("[dataset\nformat = csv\n", 1),
        ("[dataset]\nformat csv\n", 2),
        ("[dataset]\nformat = csv\nformat = csv\n", 3),
        ("[dataset]\nformat = synthetic\n[dataset]\n", 3),
        ("[dataset]\nformat = synthetic\nusers = many\n", 3),
        ("[dataset]\nformat = parquet\n", 1),
    ] {
        assert_eq!(line_of(ExperimentConfig::parse(text).unwrap_err()), line, "{text}");
    }
    assert!(matches!(ExperimentConfig::parse("[experiment]\nseeds = 1\n"), Err(CliError::Config(_))));
}

#[test]
fn values_are_validated() {
    let base = "[dataset]\nformat = synthetic\n[experiment]\n";
    for bad in [
        "densities = 0",
        "densities = 1.5",
        "densities = 0.05, 0.05",
        "seeds =",
        "noise = 150",
        "models = knn",
        "models = upcc, upcc",
        "val_fraction = 1",
    ] {
        assert!(ExperimentConfig::parse(&format!("{base}{bad}\n")).is_err(), "{bad}");
    }
    for (section, bad) in [
        ("training", "lambda = 1.5"),
        ("training", "patience = 500"),
        ("training", "batch_size = 1"),
        ("qosdiff", "dim = 2"),
        ("qosdiff", "heads = 3"),
        ("qosdiff", "gamma = 0"),
        ("neighbors", "top_k = 0"),
        ("neighbors", "uipcc_weight = 2"),
        ("factor", "lr = 0"),
        ("optimizer.generator", "beta1 = 1"),
    ] {
        let text = format!("[dataset]\nformat = synthetic\n[{section}]\n{bad}\n");
        assert!(ExperimentConfig::parse(&text).is_err(), "[{section}] {bad}");
    }
    assert!(ExperimentConfig::parse("[dataset]\nformat = wsdream\n").is_err());
}

#[test]
fn file_paths_resolve_against_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.ini");
    std::fs::write(&path, "[dataset]\nformat = csv\npath = data/qos.csv\n[experiment]\noutput = /abs/out\n").unwrap();
    let c = ExperimentConfig::from_file(&path).unwrap();
    let DatasetSpec::Csv { path: p, .. } = &c.dataset else { panic!() };
    assert_eq!(p, &dir.path().join("data/qos.csv"));
    assert_eq!(c.output, PathBuf::from("/abs/out"));
    assert!(ExperimentConfig::from_file(&dir.path().join("missing.ini")).is_err());
}
