use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn set(store: &mut ParamStore, id: ParamId, t: Tensor) {
    store.set_value(id, t).unwrap();
}

fn zeros_like(store: &ParamStore, id: ParamId) -> Tensor {
    let [r, c] = store.value(id).shape();
    Tensor::zeros(r, c)
}

/// Denoiser whose final linear map is zero, so `ε̂(e) = bias`.
fn constant_noise_net(store: &mut ParamStore, dim: usize, bias: Vec<f64>) -> DenoiserNet {
    let net = DenoiserNet::new(store, "net", dim, 1, &mut rng(1)).unwrap();
    let w = zeros_like(store, net.linear.weight);
    set(store, net.linear.weight, w);
    set(store, net.linear.bias, Tensor::row(bias));
    net
}

fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

/// `x Wᵀ + b` by explicit loops.
fn affine(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(l.weight);
    let b = store.value(l.bias).data();
    (0..l.out_dim)
        .map(|o| b[o] + (0..l.in_dim).map(|i| w.get(o, i) * x[i]).sum::<f64>())
        .collect()
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[test]
fn schedule_rejects_small_dimensions() {
    for d in [0, 1, 2] {
        let err = DiffusionSchedule::new(d).unwrap_err();
        assert!(err.to_string().starts_with("schedule degenerate: α₁ ≤ 0"), "{err}");
        assert!(kaiming_init(4, d, 0).is_err());
    }
    let s = DiffusionSchedule::new(3).unwrap();
    assert_eq!(s.alpha + s.beta, 1.0);
}

#[test]
fn kaiming_variance_at_256() {
    let t = kaiming_init(400, 256, 17).unwrap();
    assert!(t.len() >= 100_000);
    let var = variance(t.data());
    let mean = t.data().iter().sum::<f64>() / t.len() as f64;
    assert!((var / 0.0078125 - 1.0).abs() < 0.05, "variance {var}");
    // Standard error of the mean is √(β/N) ≈ 2.8e-4.
    assert!(mean.abs() < 5.0 * (0.0078125 / t.len() as f64).sqrt(), "mean {mean}");
}

#[test]
fn kaiming_is_deterministic() {
    assert_eq!(kaiming_init(10, 16, 3).unwrap(), kaiming_init(10, 16, 3).unwrap());
    assert_ne!(kaiming_init(10, 16, 3).unwrap(), kaiming_init(10, 16, 4).unwrap());
}

#[test]
fn identity_denoiser_returns_input() {
    let dim = 6;
    let mut store = ParamStore::new();
    let net = DenoiserNet::new(&mut store, "net", dim, 1, &mut rng(2)).unwrap();
    for l in [&net.attention.value, &net.attention.output, &net.linear] {
        set(&mut store, l.weight, Tensor::identity(dim));
    }
    let e = vec![0.3, -1.2, 4.0, 0.0, 2.5, -0.7];
    assert_eq!(net.predict_noise(&store, &e).unwrap(), e);
}

#[test]
fn zero_input_gives_zero_noise() {
    let mut store = ParamStore::new();
    let net = DenoiserNet::new(&mut store, "net", 5, 1, &mut rng(3)).unwrap();
    assert!(net.predict_noise(&store, &[0.0; 5]).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn denoiser_matches_projection_composition() {
    for heads in [1, 2, 4] {
        let dim = 8;
        let mut store = ParamStore::new();
        let net = DenoiserNet::new(&mut store, "net", dim, heads, &mut rng(4)).unwrap();
        let mut r = rng(40);
        let biases: Vec<ParamId> = store
            .ids()
            .filter(|&id| store.name(id).ends_with(".bias"))
            .collect();
        for id in biases {
            set(&mut store, id, gaussian(1, dim, 1.0, &mut r));
        }
        let e = gaussian(1, dim, 1.0, &mut r).into_data();
        let v = affine(&store, &net.attention.value, &e);
        let o = affine(&store, &net.attention.output, &v);
        let expected = affine(&store, &net.linear, &o);
        let got = net.predict_noise(&store, &e).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "heads {heads}: {a} vs {b}");
        }
    }
}

#[test]
fn reconstruct_scales_by_inverse_sqrt_alpha() {
    let mut store = ParamStore::new();
    let net = constant_noise_net(&mut store, 8, vec![0.0; 8]);
    let sched = DiffusionSchedule::new(8).unwrap();
    assert_eq!(sched.beta, 0.25);
    let out = reconstruct_vector(&store, &net, &sched, &unit(8, 0), &[0.0; 8]).unwrap();
    assert!((out[0] - 1.0 / 0.75f64.sqrt()).abs() < 1e-12);
    assert!((out[0] - 1.154_700_538_379_251_5).abs() < 1e-12);
    assert!(out[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn reconstruct_subtracts_scaled_noise() {
    let mut store = ParamStore::new();
    let mut bias = vec![0.0; 8];
    bias[0] = 1.0;
    bias[1] = 1.0;
    let net = constant_noise_net(&mut store, 8, bias);
    let sched = DiffusionSchedule::new(8).unwrap();
    let out = reconstruct_vector(&store, &net, &sched, &unit(8, 0), &[0.0; 8]).unwrap();
    let expected = 0.5 / 0.75f64.sqrt();
    assert!((out[0] - expected).abs() < 1e-12);
    assert!((out[1] + expected).abs() < 1e-12);
    assert!((out[0] - 0.5774).abs() < 1e-4);
}

#[test]
fn reconstruct_adds_scaled_stochastic_term() {
    let mut store = ParamStore::new();
    let net = DenoiserNet::new(&mut store, "net", 8, 1, &mut rng(5)).unwrap();
    let sched = DiffusionSchedule::new(8).unwrap();
    let e: Vec<f64> = (0..8).map(|i| (i as f64 - 3.0) / 4.0).collect();
    let z: Vec<f64> = (0..8).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let base = reconstruct_vector(&store, &net, &sched, &e, &[0.0; 8]).unwrap();
    let noisy = reconstruct_vector(&store, &net, &sched, &e, &z).unwrap();
    for k in 0..8 {
        assert!((noisy[k] - base[k] - 0.5 * z[k]).abs() < 1e-12);
    }
}

#[test]
fn reconstruct_reports_table_on_overflow() {
    let mut store = ParamStore::new();
    let net = constant_noise_net(&mut store, 4, vec![0.0; 4]);
    let sched = DiffusionSchedule::new(4).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::row(vec![f64::MAX, 0.0, 0.0, 0.0]));
    let err = single_step_reconstruct(&mut g, &store, &net, &sched, x, None, "user.id").unwrap_err();
    assert!(err.to_string().contains("user.id"), "{err}");
}

fn context(rows: Vec<Vec<usize>>, vocab_sizes: Vec<usize>) -> ContextTable {
    ContextTable {
        fields: (0..vocab_sizes.len()).map(|k| format!("f{k}")).collect(),
        rows,
        vocab_sizes,
    }
}

/// Zero every denoiser so each refined component is its table row scaled by
/// `1/√α₁`.
fn silence_denoisers(store: &mut ParamStore, bank: &EmbeddingBank) {
    for t in bank.users.tables().chain(bank.services.tables()) {
        for id in t.denoiser.params() {
            let z = zeros_like(store, id);
            set(store, id, z);
        }
    }
}

#[test]
fn constant_components_normalize_to_zero() {
    let dim = 8;
    let ctx = context(vec![vec![1], vec![2]], vec![3]);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &ctx, &ctx, dim, 1, &mut rng(6)).unwrap();
    silence_denoisers(&mut store, &bank);
    set(&mut store, bank.users.identity.param, Tensor::filled(2, dim, 0.7));
    set(&mut store, bank.users.attributes[0].param, Tensor::filled(3, dim, -0.2));
    let v = bank.refine_user(&store, 1, Mode::Eval, &mut rng(0)).unwrap();
    assert!(v.iter().all(|&x| x == 0.0), "{v:?}");
}

#[test]
fn no_attributes_is_layer_norm_of_identity() {
    let dim = 8;
    let ctx = ContextTable::empty(3);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &ctx, &ctx, dim, 1, &mut rng(7)).unwrap();
    assert_eq!(bank.num_denoisers(), 2);
    let row = store.value(bank.users.identity.param).row_slice(2).to_vec();
    let e_hat =
        reconstruct_vector(&store, &bank.users.identity.denoiser, &bank.schedule, &row, &[0.0; 8])
            .unwrap();
    let mean = e_hat.iter().sum::<f64>() / dim as f64;
    let sd = (variance(&e_hat) + AGGREGATE_LN_EPS).sqrt();
    let got = bank.refine_user(&store, 2, Mode::Eval, &mut rng(0)).unwrap();
    for (g, e) in got.iter().zip(&e_hat) {
        assert!((g - (e - mean) / sd).abs() < 1e-12);
    }
}

#[test]
fn bank_has_one_denoiser_per_table() {
    let users = context(vec![vec![1, 1]; 4], vec![2, 2]);
    let services = context(vec![vec![1, 2, 1]; 5], vec![2, 3, 2]);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &users, &services, 16, 2, &mut rng(8)).unwrap();
    assert_eq!(bank.num_denoisers(), 2 + 3 + 2);
    assert_eq!(store.value(bank.services.identity.param).shape(), [5, 16]);
    assert_eq!(store.value(bank.services.attributes[1].param).shape(), [3, 16]);
}

#[test]
fn refined_vectors_are_standardized() {
    let spec = crate::data::synthetic::SyntheticSpec {
        num_users: 30,
        num_services: 25,
        ..Default::default()
    };
    let ds = crate::data::synthetic::low_rank(&spec).unwrap();
    let mut store = ParamStore::new();
    let bank =
        EmbeddingBank::new(&mut store, &ds.user_context, &ds.service_context, 256, 1, &mut rng(9))
            .unwrap();
    for (entity, t) in [
        (&bank.users, bank.users.refine_all(&store, &bank.schedule).unwrap()),
        (&bank.services, bank.services.refine_all(&store, &bank.schedule).unwrap()),
    ] {
        assert_eq!(t.rows(), entity.count());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((variance(row) - 1.0).abs() < 1e-6, "variance {}", variance(row));
        }
    }
}

#[test]
fn eval_refinement_is_bit_identical() {
    let ds = crate::data::synthetic::low_rank(&Default::default()).unwrap();
    let mut store = ParamStore::new();
    let bank =
        EmbeddingBank::new(&mut store, &ds.user_context, &ds.service_context, 16, 1, &mut rng(10))
            .unwrap();
    let a = bank.users.refine_all(&store, &bank.schedule).unwrap();
    let b = bank.users.refine_all(&store, &bank.schedule).unwrap();
    assert_eq!(a, b);
    // A different generator state does not matter in evaluation mode.
    let x = bank.refine_service(&store, 3, Mode::Eval, &mut rng(1)).unwrap();
    let y = bank.refine_service(&store, 3, Mode::Eval, &mut rng(2)).unwrap();
    assert_eq!(x, y);
    let all = bank.services.refine_all(&store, &bank.schedule).unwrap();
    assert_eq!(all.row_slice(3), &x[..]);
}

#[test]
fn user_and_service_paths_are_symmetric() {
    let ctx = context(vec![vec![1, 2], vec![2, 1], vec![1, 1]], vec![3, 3]);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &ctx, &ctx, 8, 2, &mut rng(11)).unwrap();
    let user_ids: Vec<ParamId> = bank.users.params();
    for id in user_ids {
        let name = store.name(id).replacen("user", "service", 1);
        let twin = store.find(&name).unwrap();
        let v = store.value(id).clone();
        set(&mut store, twin, v);
    }
    for j in 0..3 {
        let u = bank.refine_user(&store, j, Mode::Eval, &mut rng(0)).unwrap();
        let s = bank.refine_service(&store, j, Mode::Eval, &mut rng(0)).unwrap();
        assert_eq!(u, s);
    }
}

#[test]
fn train_mode_variance_grows_by_beta_per_component() {
    let dim = 8;
    let ctx = context(vec![vec![1, 2]], vec![2, 3]);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &ctx, &ctx, dim, 1, &mut rng(12)).unwrap();
    let draws = 10_000;
    let mut r = rng(13);
    let mut g = Graph::new();
    let eval = bank.users.aggregate(&mut g, &store, &bank.schedule, &[0], Mode::Eval, &mut r).unwrap();
    let center = g.value(eval).data().to_vec();
    let mut sq = 0.0;
    for _ in 0..draws {
        let mut g = Graph::new();
        let v = bank.users.aggregate(&mut g, &store, &bank.schedule, &[0], Mode::Train, &mut r).unwrap();
        sq += g.value(v).data().iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let per_coord = sq / (draws * dim) as f64;
    let components = 3.0;
    let expected = components * bank.schedule.beta;
    assert!((per_coord / expected - 1.0).abs() < 0.05, "{per_coord} vs {expected}");
}

#[test]
fn gradient_reaches_touched_rows_only() {
    let dim = 6;
    let users = context(vec![vec![1], vec![2], vec![1]], vec![3]);
    let services = ContextTable::empty(2);
    let mut store = ParamStore::new();
    let bank = EmbeddingBank::new(&mut store, &users, &services, dim, 1, &mut rng(14)).unwrap();
    let mut g = Graph::new();
    let v = bank.users.refine(&mut g, &store, &bank.schedule, &[0, 2], Mode::Train, &mut rng(15)).unwrap();
    let weights = gaussian(2, dim, 1.0, &mut rng(16));
    let y = g.mul_const(v, weights).unwrap();
    let loss = g.sum(y);
    g.backward(loss, &mut store).unwrap();
    let id_grad = store.grad(bank.users.identity.param).unwrap();
    for (row, touched) in [(0, true), (1, false), (2, true)] {
        let norm: f64 = id_grad.row_slice(row).iter().map(|v| v.abs()).sum();
        assert_eq!(norm > 0.0, touched, "identity row {row}");
    }
    let attr_grad = store.grad(bank.users.attributes[0].param).unwrap();
    for (row, touched) in [(0, false), (1, true), (2, false)] {
        let norm: f64 = attr_grad.row_slice(row).iter().map(|v| v.abs()).sum();
        assert_eq!(norm > 0.0, touched, "attribute row {row}");
    }
}
