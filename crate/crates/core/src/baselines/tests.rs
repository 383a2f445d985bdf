use super::*;

fn triplets(rows: &[&[Option<f64>]]) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (user, row) in rows.iter().enumerate() {
        for (service, v) in row.iter().enumerate() {
            if let Some(value) = *v {
                out.push(Triplet { user, service, value });
            }
        }
    }
    out
}

fn dense(rows: &[&[f64]]) -> Vec<Triplet> {
    let owned: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    let refs: Vec<&[Option<f64>]> = owned.iter().map(|r| r.as_slice()).collect();
    triplets(&refs)
}

/// Straight transcription of the user-based rule over a dense option matrix,
/// with no sorting tricks: O(m²n) loops and explicit means.
fn upcc_oracle(m: &[Vec<Option<f64>>], i: usize, j: usize, k: usize) -> f64 {
    let mean = |u: usize| {
        let obs: Vec<f64> = m[u].iter().flatten().copied().collect();
        (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
    };
    let sim = |a: usize, b: usize| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&ra, &rb) in m[a].iter().zip(&m[b]) {
            if let (Some(x), Some(y)) = (ra, rb) {
                xs.push(x);
                ys.push(y);
            }
        }
        if xs.len() < 2 {
            return 0.0;
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if vx == 0.0 || vy == 0.0 {
            0.0
        } else {
            cov / (vx * vy).sqrt()
        }
    };
    let Some(base) = mean(i) else {
        let all: Vec<f64> = m.iter().flatten().flatten().copied().collect();
        return all.iter().sum::<f64>() / all.len() as f64;
    };
    let mut cands: Vec<(f64, usize)> = (0..m.len())
        .filter(|&v| v != i && m[v][j].is_some())
        .map(|v| (sim(i, v), v))
        .filter(|c| c.0 > 0.0)
        .collect();
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    cands.truncate(k);
    let den: f64 = cands.iter().map(|c| c.0.abs()).sum();
    if den == 0.0 {
        return base;
    }
    let num: f64 = cands.iter().map(|&(s, v)| s * (m[v][j].unwrap() - mean(v).unwrap())).sum();
    base + num / den
}

#[test]
fn pearson_examples() {
    let a = [(0, 1.0), (1, 2.0), (2, 3.0)];
    assert!((pearson(&a, &a) - 1.0).abs() < 1e-15);
    let b = [(0, 3.0), (1, 2.0), (2, 1.0)];
    assert!((pearson(&a, &b) + 1.0).abs() < 1e-15);
    assert_eq!(pearson(&a, &[(1, 5.0)]), 0.0);
    assert_eq!(pearson(&a, &[(5, 1.0), (6, 2.0)]), 0.0);
    // Constant side has no variance.
    assert_eq!(pearson(&a, &[(0, 4.0), (1, 4.0), (2, 4.0)]), 0.0);
}

#[test]
fn pearson_uses_co_observed_positions_only() {
    let a = [(0, 1.0), (1, 2.0), (2, 3.0), (3, 100.0)];
    let b = [(0, 2.0), (1, 4.0), (2, 6.0), (7, -50.0)];
    assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
}

#[test]
fn similarity_is_symmetric_and_self_one() {
    let train = dense(&[&[1.0, 4.0, 2.0, 8.0], &[3.0, 1.0, 2.0, 2.5], &[0.5, 0.7, 0.1, 0.9]]);
    for kind in [Similarity::User, Similarity::Service] {
        let model = NeighborModel::fit(&train, 3, 4, kind, 2).unwrap();
        let n = if kind == Similarity::User { 3 } else { 4 };
        for a in 0..n {
            assert!((model.similarity(a, a) - 1.0).abs() < 1e-12);
            for b in 0..n {
                assert_eq!(model.similarity(a, b), model.similarity(b, a));
                assert!((-1.0..=1.0).contains(&model.similarity(a, b)));
            }
        }
    }
}

#[test]
fn two_by_two_falls_back_to_user_mean() {
    let train = triplets(&[&[Some(1.0), Some(2.0)], &[Some(1.0), None]]);
    let model = NeighborModel::fit(&train, 2, 2, Similarity::User, 1).unwrap();
    assert_eq!(model.similarity(0, 1), 0.0);
    assert_eq!(model.predict_one(1, 1).unwrap(), 1.0);
}

#[test]
fn identical_rows_match_brute_force() {
    let m = vec![
        vec![Some(1.0), Some(2.0), Some(3.0)],
        vec![Some(1.0), Some(2.0), Some(3.0)],
        vec![Some(1.0), Some(2.0), None],
    ];
    let refs: Vec<&[Option<f64>]> = m.iter().map(|r| r.as_slice()).collect();
    let model = NeighborModel::fit(&triplets(&refs), 3, 3, Similarity::User, 10).unwrap();
    let p = model.predict_one(2, 2).unwrap();
    assert!((p - upcc_oracle(&m, 2, 2, 10)).abs() < 1e-12);
    // Mean-centring offsets the neighbours' deviation by the target's own
    // (partial) row mean: 1.5 + 1.0.
    assert!((p - 2.5).abs() < 1e-12);

    // Hiding the entry that sits at the row mean reproduces the column value.
    let m = [
        vec![Some(1.0), Some(2.0), Some(3.0)],
        vec![Some(1.0), Some(2.0), Some(3.0)],
        vec![Some(1.0), None, Some(3.0)],
    ];
    let refs: Vec<&[Option<f64>]> = m.iter().map(|r| r.as_slice()).collect();
    let model = NeighborModel::fit(&triplets(&refs), 3, 3, Similarity::User, 10).unwrap();
    assert!((model.predict_one(2, 1).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn upcc_matches_brute_force_on_random_matrices() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..40 {
        let (rows, cols) = (rng.random_range(2..7), rng.random_range(2..7));
        let m: Vec<Vec<Option<f64>>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| rng.random_bool(0.7).then(|| (rng.random_range(0..20) as f64) / 4.0))
                    .collect()
            })
            .collect();
        let refs: Vec<&[Option<f64>]> = m.iter().map(|r| r.as_slice()).collect();
        let train = triplets(&refs);
        if train.is_empty() {
            continue;
        }
        // Two co-observations give similarities of exactly ±1 up to rounding,
        // so top-k cut-offs would hinge on last-bit noise. Keep every neighbour
        // here; truncation is covered separately.
        let k = rows;
        let model = NeighborModel::fit(&train, rows, cols, Similarity::User, k).unwrap();
        let pairs: Vec<(usize, usize)> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
        let batch = model.predict(&pairs).unwrap();
        for (&(i, j), b) in pairs.iter().zip(batch) {
            let expected = upcc_oracle(&m, i, j, k);
            assert!((model.predict_one(i, j).unwrap() - expected).abs() < 1e-12);
            assert!((b - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn top_k_keeps_most_similar_neighbours() {
    let m = vec![
        vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), None],
        vec![Some(1.0), Some(2.0), Some(3.0), Some(4.5), Some(9.0)],
        vec![Some(1.0), Some(3.0), Some(2.0), Some(4.0), Some(1.0)],
        vec![Some(2.0), Some(1.0), Some(3.0), Some(5.0), Some(5.0)],
    ];
    let refs: Vec<&[Option<f64>]> = m.iter().map(|r| r.as_slice()).collect();
    let train = triplets(&refs);
    for k in 1..=4 {
        let model = NeighborModel::fit(&train, 4, 5, Similarity::User, k).unwrap();
        assert!((model.predict_one(0, 4).unwrap() - upcc_oracle(&m, 0, 4, k)).abs() < 1e-12);
    }
    let sims = NeighborModel::fit(&train, 4, 5, Similarity::User, 1).unwrap().similarity_row(0);
    assert!(sims[1] > sims[2] && sims[2] > 0.0 && sims[3] > 0.0 && sims[2] != sims[3]);
    let one = NeighborModel::fit(&train, 4, 5, Similarity::User, 1).unwrap();
    let m1 = 19.5 / 5.0;
    assert!((one.predict_one(0, 4).unwrap() - (2.5 + 9.0 - m1)).abs() < 1e-12);
}

#[test]
fn ipcc_is_upcc_on_the_transpose() {
    let train = triplets(&[
        &[Some(0.2), Some(0.4), None, Some(0.9)],
        &[Some(0.3), None, Some(0.8), Some(0.7)],
        &[None, Some(0.5), Some(0.6), Some(0.1)],
    ]);
    let transposed: Vec<Triplet> = train
        .iter()
        .map(|t| Triplet { user: t.service, service: t.user, value: t.value })
        .collect();
    let ipcc = NeighborModel::fit(&train, 3, 4, Similarity::Service, 2).unwrap();
    let upcc_t = NeighborModel::fit(&transposed, 4, 3, Similarity::User, 2).unwrap();
    for u in 0..3 {
        for s in 0..4 {
            assert_eq!(ipcc.predict_one(u, s).unwrap(), upcc_t.predict_one(s, u).unwrap());
        }
    }
}

#[test]
fn no_neighbour_observed_target_gives_own_mean() {
    let train = triplets(&[
        &[Some(1.0), Some(2.0), Some(4.0), None],
        &[Some(1.0), Some(2.0), Some(3.0), None],
    ]);
    let model = NeighborModel::fit(&train, 2, 4, Similarity::User, 5).unwrap();
    assert!((model.predict_one(0, 3).unwrap() - 7.0 / 3.0).abs() < 1e-15);
}

#[test]
fn unobserved_entity_gives_global_mean() {
    let train = triplets(&[&[Some(1.0), Some(2.0)], &[Some(6.0), None], &[None, None]]);
    let model = NeighborModel::fit(&train, 3, 2, Similarity::User, 5).unwrap();
    assert_eq!(model.mean(2), None);
    assert_eq!(model.predict_one(2, 0).unwrap(), 3.0);
    assert_eq!(model.global_mean(), 3.0);
}

#[test]
fn negative_neighbours_are_excluded() {
    // User 1 is perfectly anti-correlated with user 0 and is the only one
    // who observed column 3.
    let train = triplets(&[
        &[Some(1.0), Some(2.0), Some(3.0), None],
        &[Some(3.0), Some(2.0), Some(1.0), Some(9.0)],
    ]);
    let model = NeighborModel::fit(&train, 2, 4, Similarity::User, 5).unwrap();
    assert!((model.similarity(0, 1) + 1.0).abs() < 1e-12);
    assert_eq!(model.predict_one(0, 3).unwrap(), 2.0);
}

#[test]
fn neighbour_errors() {
    assert!(matches!(
        NeighborModel::fit(&[], 2, 2, Similarity::User, 3),
        Err(Error::NoObservations)
    ));
    let train = dense(&[&[1.0, 2.0]]);
    assert!(NeighborModel::fit(&train, 1, 2, Similarity::User, 0).is_err());
    assert!(matches!(
        NeighborModel::fit(&train, 1, 1, Similarity::User, 1),
        Err(Error::IndexOutOfRange { what: "service", index: 1, limit: 1 })
    ));
    let model = NeighborModel::fit(&train, 1, 2, Similarity::User, 1).unwrap();
    assert!(model.predict_one(4, 0).is_err());
    assert!(model.predict(&[(0, 0), (1, 0)]).is_err());
}

fn toy_3x3() -> Vec<Triplet> {
    triplets(&[
        &[Some(0.1), Some(0.5), Some(0.3)],
        &[Some(0.2), None, Some(0.4)],
        &[Some(0.9), Some(0.6), None],
    ])
}

#[test]
fn uipcc_blend_limits() {
    let train = toy_3x3();
    let upcc = NeighborModel::fit(&train, 3, 3, Similarity::User, 2).unwrap();
    let ipcc = NeighborModel::fit(&train, 3, 3, Similarity::Service, 2).unwrap();
    let pairs = [(1, 1), (2, 2), (0, 0)];
    let u = upcc.predict(&pairs).unwrap();
    let s = ipcc.predict(&pairs).unwrap();
    for (w, expect) in [(1.0, u.clone()), (0.0, s.clone())] {
        let model = Uipcc::new(upcc.clone(), ipcc.clone(), w).unwrap();
        assert_eq!(model.predict(&pairs).unwrap(), expect);
    }
    let half = Uipcc::new(upcc.clone(), ipcc.clone(), DEFAULT_UIPCC_WEIGHT).unwrap();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let p = half.predict_one(a, b).unwrap();
        assert!((p - (u[k] + s[k]) / 2.0).abs() < 1e-15);
        assert_eq!(p, half.predict(&pairs).unwrap()[k]);
    }
}

#[test]
fn uipcc_rejects_bad_inputs() {
    let train = toy_3x3();
    let upcc = NeighborModel::fit(&train, 3, 3, Similarity::User, 2).unwrap();
    let ipcc = NeighborModel::fit(&train, 3, 3, Similarity::Service, 2).unwrap();
    assert!(Uipcc::new(upcc.clone(), ipcc.clone(), 1.5).is_err());
    assert!(Uipcc::new(upcc.clone(), ipcc.clone(), -0.1).is_err());
    assert!(Uipcc::new(ipcc, upcc, 0.5).is_err());
}

fn factor_rmse(model: &FactorModel, train: &[Triplet]) -> f64 {
    let sq: f64 = train
        .iter()
        .map(|t| (model.predict_one(t.user, t.service).unwrap() - t.value).powi(2))
        .sum();
    (sq / train.len() as f64).sqrt()
}

#[test]
fn pmf_recovers_planted_rank_one() {
    let (p, q) = ([0.5, 1.0, 1.5], [0.4, 0.8, 1.2]);
    let rows: Vec<Vec<f64>> = p.iter().map(|a| q.iter().map(|b| a * b).collect()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let train = dense(&refs);
    let config = FactorConfig {
        factors: 1,
        reg: 0.0,
        epochs: 2000,
        ..FactorConfig::default()
    };
    let model = factor_fit(&train, 3, 3, FactorVariant::Pmf, &config, 3).unwrap();
    assert!(factor_rmse(&model, &train) < 1e-2, "{}", factor_rmse(&model, &train));
}

#[test]
fn biasmf_with_zero_factors_is_additive() {
    let train = toy_3x3();
    let config = FactorConfig {
        init_std: 0.0,
        epochs: 50,
        ..FactorConfig::default()
    };
    let model = factor_fit(&train, 3, 3, FactorVariant::BiasMf, &config, 5).unwrap();
    let mu = train.iter().map(|t| t.value).sum::<f64>() / train.len() as f64;
    assert_eq!(model.global_bias, mu);
    assert!(model.user_factors.iter().chain(&model.service_factors).flatten().all(|&v| v == 0.0));
    for u in 0..3 {
        for s in 0..3 {
            let expect = mu + model.user_bias[u] + model.service_bias[s];
            assert_eq!(model.predict_one(u, s).unwrap(), expect);
        }
    }
}

#[test]
fn heavy_regularization_shrinks_to_prior() {
    let train = toy_3x3();
    // lr·reg = 0.5 keeps the shrinkage contraction stable.
    let config = FactorConfig {
        reg: 100.0,
        lr: 0.005,
        epochs: 300,
        ..FactorConfig::default()
    };
    let mu = train.iter().map(|t| t.value).sum::<f64>() / train.len() as f64;
    let biasmf = factor_fit(&train, 3, 3, FactorVariant::BiasMf, &config, 1).unwrap();
    let pmf = factor_fit(&train, 3, 3, FactorVariant::Pmf, &config, 1).unwrap();
    for u in 0..3 {
        for s in 0..3 {
            assert!((biasmf.predict_one(u, s).unwrap() - mu).abs() < 1e-2);
            assert!(pmf.predict_one(u, s).unwrap().abs() < 1e-6);
        }
    }
}

#[test]
fn divergence_is_reported_with_hint() {
    let train = dense(&[&[5.0, 9.0], &[7.0, 2.0]]);
    let config = FactorConfig {
        lr: 5.0,
        init_std: 1.0,
        ..FactorConfig::default()
    };
    match factor_fit(&train, 2, 2, FactorVariant::Pmf, &config, 0) {
        Err(Error::Divergence(msg)) => assert!(msg.contains("learning rate"), "{msg}"),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn factor_fit_is_deterministic_and_seeded() {
    let train = toy_3x3();
    let config = FactorConfig::default();
    let a = factor_fit(&train, 3, 3, FactorVariant::BiasMf, &config, 9).unwrap();
    let b = factor_fit(&train, 3, 3, FactorVariant::BiasMf, &config, 9).unwrap();
    let c = factor_fit(&train, 3, 3, FactorVariant::BiasMf, &config, 10).unwrap();
    assert_eq!(a.user_factors, b.user_factors);
    assert_eq!(a.service_bias, b.service_bias);
    assert_ne!(a.user_factors, c.user_factors);
    assert!(a.user_factors.iter().chain(&a.service_factors).flatten().all(|v| v.is_finite()));
}

#[test]
fn factor_errors() {
    let config = FactorConfig::default();
    assert!(matches!(
        factor_fit(&[], 2, 2, FactorVariant::Pmf, &config, 0),
        Err(Error::NoObservations)
    ));
    let zero = FactorConfig { factors: 0, ..config.clone() };
    assert!(factor_fit(&toy_3x3(), 3, 3, FactorVariant::Pmf, &zero, 0).is_err());
    assert!(matches!(
        factor_fit(&toy_3x3(), 2, 3, FactorVariant::Pmf, &config, 0),
        Err(Error::IndexOutOfRange { what: "user", index: 2, limit: 2 })
    ));
    let model = factor_fit(&toy_3x3(), 3, 3, FactorVariant::Pmf, &config, 0).unwrap();
    assert!(model.predict_one(0, 3).is_err());
}
