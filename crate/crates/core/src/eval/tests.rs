use super::*;
use crate::data::ContextTable;

struct Constant(f64);

impl QosPredictor for Constant {
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        Ok(vec![self.0; pairs.len()])
    }
}

/// Looks each pair up in the dataset itself.
struct Oracle(Vec<Triplet>);

impl QosPredictor for Oracle {
    fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|&(u, s)| {
                self.0
                    .iter()
                    .find(|t| t.user == u && t.service == s)
                    .map_or(0.0, |t| t.value)
            })
            .collect())
    }
}

fn toy() -> QoSDataset {
    let values = [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 4.0), (1, 1, 3.0)];
    let triplets = values
        .iter()
        .map(|&(user, service, value)| Triplet { user, service, value })
        .collect();
    QoSDataset::new("toy", 2, 2, triplets, ContextTable::empty(2), ContextTable::empty(2))
        .unwrap()
        .normalize()
}

fn report(model: &str, density: f64, noise: f64, seed: u64, mae: f64) -> MetricsReport {
    MetricsReport {
        dataset: "rt".into(),
        model: model.into(),
        density,
        seed,
        noise_ratio: noise,
        mae,
        rmse: mae * 1.5,
        scale: Scale::Raw,
    }
}

#[test]
fn metric_hand_example() {
    let (p, t) = ([1.0, 2.0, 3.0], [1.0, 2.0, 5.0]);
    assert!((mae(&p, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((rmse(&p, &t).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((mae(&p, &t).unwrap() - 0.6667).abs() < 1e-4);
    assert!((rmse(&p, &t).unwrap() - 1.1547).abs() < 1e-4);
}

#[test]
fn metric_equalities() {
    let t = [0.3, -1.0, 8.0];
    assert_eq!(mae(&t, &t).unwrap(), 0.0);
    assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    let shifted: Vec<f64> = t.iter().map(|v| v - 0.25).collect();
    assert!((mae(&shifted, &t).unwrap() - 0.25).abs() < 1e-15);
    assert!((rmse(&shifted, &t).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn metric_errors() {
    assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    assert!(rmse(&[], &[]).is_err());
}

#[test]
fn oracle_scores_zero_on_both_scales() {
    let ds = toy();
    let [n, r] = evaluate(&Oracle(ds.triplets.clone()), "oracle", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    assert_eq!((n.mae, n.rmse, r.mae, r.rmse), (0.0, 0.0, 0.0, 0.0));
    assert_eq!((n.scale, r.scale), (Scale::Normalized, Scale::Raw));
}

#[test]
fn constant_predictor_hand_enumeration() {
    let ds = toy();
    // Normalized values are 0.5, 0.25, 1.0, 0.75; residuals to 0.5 are 0, 0.25, 0.5, 0.25.
    let [n, r] = evaluate(&Constant(0.5), "half", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    assert!((n.mae - 0.25).abs() < 1e-15);
    assert!((n.rmse - (0.375f64 / 4.0).sqrt()).abs() < 1e-15);
    assert!((r.mae - 1.0).abs() < 1e-15);
    assert!((r.rmse - 4.0 * (0.375f64 / 4.0).sqrt()).abs() < 1e-14);
}

#[test]
fn raw_metrics_scale_with_global_max() {
    let ds = toy();
    let [n, r] = evaluate(&Constant(0.1), "c", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    assert!((r.mae - n.mae * ds.global_max).abs() < 1e-14);
    assert!((r.rmse - n.rmse * ds.global_max).abs() < 1e-14);
}

#[test]
fn predictions_are_clamped() {
    let ds = toy();
    let high = evaluate(&Constant(7.0), "c", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    let one = evaluate(&Constant(1.0), "c", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    assert_eq!(high[0].mae, one[0].mae);
    let low = evaluate(&Constant(-3.0), "c", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    let zero = evaluate(&Constant(0.0), "c", &ds.triplets, &ds, 0.5, 1, 0.0).unwrap();
    assert_eq!(low[1].rmse, zero[1].rmse);
}

#[test]
fn evaluate_requires_normalized_data() {
    let raw = toy().denormalize();
    assert!(evaluate(&Constant(0.5), "c", &raw.triplets, &raw, 0.5, 1, 0.0).is_err());
}

#[test]
fn degradation_table_examples() {
    let d = degradation(0.4892, 0.4459).unwrap();
    assert!((d - 9.7107).abs() < 1e-4, "{d}");
    assert_eq!(format!("{d:.1}"), "9.7");
    let d = degradation(0.5537, 0.4139).unwrap();
    assert!((d - 33.7763).abs() < 1e-4, "{d}");
    assert_eq!(format!("{d:.1}"), "33.8");
    assert_eq!(degradation(0.37, 0.37).unwrap(), 0.0);
    assert!(degradation(0.4, 0.0).is_err());
    assert!(degradation(0.4, -0.1).is_err());
}

#[test]
fn mean_std_cases() {
    let (m, s) = mean_std(&[0.4, 0.6]).unwrap();
    assert!((m - 0.5).abs() < 1e-15);
    assert!((s - 0.02f64.sqrt()).abs() < 1e-15);
    assert!((s - 0.1414).abs() < 1e-4);
    assert_eq!(mean_std(&[0.3, 0.3, 0.3]).unwrap().1, 0.0);
    assert_eq!(mean_std(&[0.9]).unwrap(), (0.9, 0.0));
    assert!(mean_std(&[]).is_err());
}

#[test]
fn aggregate_groups_and_degrades() {
    let reports = vec![
        report("upcc", 0.05, 0.0, 1, 0.4),
        report("upcc", 0.05, 0.0, 2, 0.6),
        report("upcc", 0.05, 10.0, 1, 0.55),
        report("upcc", 0.05, 10.0, 2, 0.65),
        report("pmf", 0.05, 10.0, 1, 0.7),
    ];
    let agg = aggregate(&reports).unwrap();
    assert_eq!(agg.len(), 3);
    let find = |model: &str, noise: f64| {
        agg.iter()
            .find(|a| a.key.model == model && a.key.noise_ratio == noise)
            .unwrap()
    };
    let clean = find("upcc", 0.0);
    assert_eq!(clean.seeds, vec![1, 2]);
    assert!((clean.mae_std - 0.1414).abs() < 1e-4);
    assert_eq!(clean.degradation, Some(0.0));
    let noisy = find("upcc", 10.0);
    assert!((noisy.degradation.unwrap() - 20.0).abs() < 1e-9);
    // No clean pmf group to compare against.
    assert_eq!(find("pmf", 10.0).degradation, None);
    assert_eq!(find("pmf", 10.0).mae_std, 0.0);
    assert!(aggregate(&[]).is_err());
}
