//! Central finite-difference checks of the autodiff engine and the model
//! layers built on it.
//!
//! Each check builds a random instance, reduces the output to a scalar with a
//! random weighting, and compares the reverse-mode gradient with central
//! differences `(f(x + h) - f(x - h)) / 2h`. The error of a check is the
//! relative error of the whole gradient vector (all inputs, or all
//! parameters, concatenated).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aaim::{aaim_forward, AaimConfig, Discriminator, Generator};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::data::ContextTable;
use crate::delm::{single_step_reconstruct, DenoiserNet, DiffusionSchedule, EmbeddingBank};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mode, MultiHeadAttention};
use crate::train::{discriminator_loss, generator_loss};

pub const STEP: f64 = 1e-5;
/// Norm below which a gradient is compared in absolute terms.
pub const FLOOR: f64 = 1e-6;
/// Trials whose ReLU or leaky-ReLU inputs come closer than this to zero are
/// redrawn, since a perturbation of size `STEP` could cross the kink.
pub const KINK_MARGIN: f64 = 1e-3;
/// Coordinates compared per tensor and trial for the larger composites.
const MAX_COORDS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    /// Instances discarded for lying too close to a kink.
    pub redrawn: usize,
}

/// `‖a - n‖ / max(‖a‖, ‖n‖, FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(FLOOR)
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).expect("consistent shape")
}

/// Entries bounded away from zero, for piecewise-linear activations.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(rows, cols, data).expect("consistent shape")
}

fn weighted_sum(g: &mut Graph, out: Var, w: &Tensor) -> Result<Var> {
    let p = g.mul_const(out, w.clone())?;
    Ok(g.sum(p))
}

fn coords(len: usize, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rand::seq::SliceRandom::shuffle(all.as_mut_slice(), rng);
    all.truncate(limit);
    all
}

/// Worst relative error of the gradients with respect to graph inputs, or
/// `None` when the instance lies within [`KINK_MARGIN`] of a kink.
///
/// `store` must hold every parameter the graph built by `f` reads.
pub fn input_check<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    f: F,
    rng: &mut ChaCha8Rng,
    max_coords: usize,
) -> Result<Option<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.nearest_kink() < KINK_MARGIN {
        return Ok(None);
    }
    let [r, c] = g.shape(out);
    let w = uniform(r, c, -1.0, 1.0, rng);
    let loss = weighted_sum(&mut g, out, &w)?;
    g.backward(loss, &mut store.clone())?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let l = weighted_sum(&mut g, out, &w)?;
        Ok(g.value(l).item())
    };
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let picked = coords(inputs[k].len(), max_coords, rng);
        for &i in &picked {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += STEP;
            let plus = eval(&xs)?;
            xs[k].data_mut()[i] -= 2.0 * STEP;
            let minus = eval(&xs)?;
            a.push(analytic.data()[i]);
            n.push((plus - minus) / (2.0 * STEP));
        }
    }
    Ok(Some(relative_error(&a, &n)))
}

/// Worst relative error of the gradients with respect to stored parameters,
/// or `None` near a kink as in [`input_check`].
pub fn param_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    rng: &mut ChaCha8Rng,
    max_coords: usize,
) -> Result<Option<f64>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    if g.nearest_kink() < KINK_MARGIN {
        return Ok(None);
    }
    let [r, c] = g.shape(out);
    let w = uniform(r, c, -1.0, 1.0, rng);
    let loss = weighted_sum(&mut g, out, &w)?;
    store.zero_grads();
    g.backward(loss, store)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            let [r, c] = store.value(id).shape();
            store.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(r, c))
        })
        .collect();
    store.zero_grads();
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        let l = weighted_sum(&mut g, out, &w)?;
        Ok(g.value(l).item())
    };
    let (mut a, mut n) = (Vec::new(), Vec::new());
    for (k, &id) in ids.iter().enumerate() {
        let picked = coords(store.value(id).len(), max_coords, rng);
        for &i in &picked {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + STEP;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - STEP;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            a.push(analytic[k].data()[i]);
            n.push((plus - minus) / (2.0 * STEP));
        }
    }
    Ok(Some(relative_error(&a, &n)))
}

type Case = fn(&mut ChaCha8Rng) -> Result<Option<f64>>;

fn both(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a?.max(b?))
}

fn primitive_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |rng| {
            let (m, k, n) = (3, 4, 2);
            input_check(
                &ParamStore::new(),
                &[uniform(m, k, -1.0, 1.0, rng), uniform(k, n, -1.0, 1.0, rng)],
                |g, v| g.matmul(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("matmul_t(transposed a)", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(4, 3, -1.0, 1.0, rng), uniform(4, 2, -1.0, 1.0, rng)],
                |g, v| g.matmul_t(v[0], v[1], true, false),
                rng,
                usize::MAX,
            )
        }),
        ("matmul_t(transposed b)", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(2, 4, -1.0, 1.0, rng)],
                |g, v| g.matmul_t(v[0], v[1], false, true),
                rng,
                usize::MAX,
            )
        }),
        ("matmul_t(both transposed)", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(4, 3, -1.0, 1.0, rng), uniform(2, 4, -1.0, 1.0, rng)],
                |g, v| g.matmul_t(v[0], v[1], true, true),
                rng,
                usize::MAX,
            )
        }),
        ("add", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.add(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("sub", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.sub(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("mul", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.mul(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("add_row", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(1, 4, -1.0, 1.0, rng)],
                |g, v| g.add_row(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("mul_col", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 1, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.mul_col(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("mul_const", |rng| {
            let c = uniform(3, 4, -1.0, 1.0, rng);
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng)],
                move |g, v| g.mul_const(v[0], c.clone()),
                rng,
                usize::MAX,
            )
        }),
        ("add_const", |rng| {
            let c = uniform(3, 4, -1.0, 1.0, rng);
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng)],
                move |g, v| g.add_const(v[0], &c),
                rng,
                usize::MAX,
            )
        }),
        ("scale", |rng| {
            let s = rng.random_range(-2.0..2.0);
            input_check(&ParamStore::new(), &[uniform(3, 4, -1.0, 1.0, rng)], move |g, v| Ok(g.scale(v[0], s)), rng, usize::MAX)
        }),
        ("relu", |rng| {
            input_check(&ParamStore::new(), &[away_from_zero(3, 4, rng)], |g, v| Ok(g.relu(v[0])), rng, usize::MAX)
        }),
        ("leaky_relu", |rng| {
            input_check(&ParamStore::new(), &[away_from_zero(3, 4, rng)], |g, v| Ok(g.leaky_relu(v[0], 0.2)), rng, usize::MAX)
        }),
        ("sigmoid", |rng| {
            input_check(&ParamStore::new(), &[uniform(3, 4, -4.0, 4.0, rng)], |g, v| Ok(g.sigmoid(v[0])), rng, usize::MAX)
        }),
        ("softmax_rows", |rng| {
            input_check(&ParamStore::new(), &[uniform(3, 5, -2.0, 2.0, rng)], |g, v| Ok(g.softmax_rows(v[0])), rng, usize::MAX)
        }),
        ("softmax_rows(single column)", |rng| {
            input_check(&ParamStore::new(), &[uniform(4, 1, -2.0, 2.0, rng)], |g, v| Ok(g.softmax_rows(v[0])), rng, usize::MAX)
        }),
        ("layer_norm", |rng| {
            input_check(
                &ParamStore::new(),
                &[
                    uniform(3, 5, -2.0, 2.0, rng),
                    uniform(1, 5, 0.5, 1.5, rng),
                    uniform(1, 5, -0.5, 0.5, rng),
                ],
                |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
                rng,
                usize::MAX,
            )
        }),
        ("batch_norm_train", |rng| {
            input_check(
                &ParamStore::new(),
                &[
                    uniform(5, 3, -2.0, 2.0, rng),
                    uniform(1, 3, 0.5, 1.5, rng),
                    uniform(1, 3, -0.5, 0.5, rng),
                ],
                |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0),
                rng,
                usize::MAX,
            )
        }),
        ("batch_norm_eval", |rng| {
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            input_check(
                &ParamStore::new(),
                &[
                    uniform(4, 3, -2.0, 2.0, rng),
                    uniform(1, 3, 0.5, 1.5, rng),
                    uniform(1, 3, -0.5, 0.5, rng),
                ],
                move |g, v| g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5),
                rng,
                usize::MAX,
            )
        }),
        ("concat_cols", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 2, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.concat_cols(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("slice_cols", |rng| {
            input_check(&ParamStore::new(), &[uniform(3, 6, -1.0, 1.0, rng)], |g, v| g.slice_cols(v[0], 2, 3), rng, usize::MAX)
        }),
        ("gather_rows", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(4, 3, -1.0, 1.0, rng)],
                |g, v| g.gather_rows(v[0], &[2, 0, 2, 3, 2]),
                rng,
                usize::MAX,
            )
        }),
        ("row_dot", |rng| {
            input_check(
                &ParamStore::new(),
                &[uniform(3, 4, -1.0, 1.0, rng), uniform(3, 4, -1.0, 1.0, rng)],
                |g, v| g.row_dot(v[0], v[1]),
                rng,
                usize::MAX,
            )
        }),
        ("sum", |rng| input_check(&ParamStore::new(), &[uniform(3, 4, -1.0, 1.0, rng)], |g, v| Ok(g.sum(v[0])), rng, usize::MAX)),
        ("mean", |rng| input_check(&ParamStore::new(), &[uniform(3, 4, -1.0, 1.0, rng)], |g, v| Ok(g.mean(v[0])), rng, usize::MAX)),
        ("squared_error", |rng| {
            let t = uniform(4, 1, 0.0, 1.0, rng);
            input_check(
                &ParamStore::new(),
                &[uniform(4, 1, 0.0, 1.0, rng)],
                move |g, v| g.squared_error(v[0], t.clone()),
                rng,
                usize::MAX,
            )
        }),
        ("bce", |rng| {
            let labels: Vec<f64> = (0..4).map(|_| f64::from(rng.random::<bool>() as u8)).collect();
            let t = Tensor::column(labels);
            input_check(
                &ParamStore::new(),
                &[uniform(4, 1, -3.0, 3.0, rng)],
                move |g, v| g.bce(v[0], t.clone()),
                rng,
                usize::MAX,
            )
        }),
        ("gather(parameter rows)", |rng| {
            let mut store = ParamStore::new();
            let id = store.add("table", uniform(6, 3, -1.0, 1.0, rng));
            param_check(
                &mut store,
                &[id],
                move |g, s| {
                    let rows = g.gather(s, id, &[0, 2, 2, 5])?;
                    Ok(g.sigmoid(rows))
                },
                rng,
                usize::MAX,
            )
        }),
    ]
}

/// Trainable parameters after adding `U(-0.1, 0.1)` to each entry.
///
/// Zero-initialized biases otherwise make a dead ReLU row propagate exact
/// zeros into the next ReLU, a kink where finite differences are undefined.
fn all_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Vec<ParamId> {
    let ids = store.trainable_ids();
    for &id in &ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    ids
}

fn composite_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("linear", |rng| {
            let mut store = ParamStore::new();
            let lin = Linear::new(&mut store, "lin", 4, 3, 0.5, rng);
            let x = uniform(5, 4, -1.0, 1.0, rng);
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let lin = lin.clone();
                    let x = x.clone();
                    move |g, s| {
                        let xv = g.input(x.clone());
                        lin.forward(g, s, xv)
                    }
                },
                rng,
                usize::MAX,
            )?;
            let scratch = store.clone();
            let e2 = input_check(&scratch, &[x], move |g, v| lin.forward(g, &store, v[0]), rng, usize::MAX)?;
            Ok(both(e1, e2))
        }),
        ("multi-head attention", |rng| {
            let mut store = ParamStore::new();
            let mha = MultiHeadAttention::new(&mut store, "mha", 4, 2, 0.5, rng)?;
            let inputs = [
                uniform(3, 4, -1.0, 1.0, rng),
                uniform(3, 4, -1.0, 1.0, rng),
                uniform(3, 4, -1.0, 1.0, rng),
            ];
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let mha = mha.clone();
                    let inputs = inputs.clone();
                    move |g, s| {
                        let q = g.input(inputs[0].clone());
                        let k = g.input(inputs[1].clone());
                        let v = g.input(inputs[2].clone());
                        mha.forward(g, s, q, k, v)
                    }
                },
                rng,
                usize::MAX,
            )?;
            let scratch = store.clone();
            let e2 = input_check(&scratch, &inputs, move |g, v| mha.forward(g, &store, v[0], v[1], v[2]), rng, usize::MAX)?;
            Ok(both(e1, e2))
        }),
        ("denoiser", |rng| {
            let mut store = ParamStore::new();
            let net = DenoiserNet::new(&mut store, "den", 6, 1, rng)?;
            let x = uniform(3, 6, -1.0, 1.0, rng);
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let net = net.clone();
                    let x = x.clone();
                    move |g, s| {
                        let xv = g.input(x.clone());
                        net.forward(g, s, xv)
                    }
                },
                rng,
                usize::MAX,
            )?;
            let scratch = store.clone();
            let e2 = input_check(&scratch, &[x], move |g, v| net.forward(g, &store, v[0]), rng, usize::MAX)?;
            Ok(both(e1, e2))
        }),
        ("single-step reconstruction", |rng| {
            let mut store = ParamStore::new();
            let net = DenoiserNet::new(&mut store, "den", 6, 2, rng)?;
            let sched = DiffusionSchedule::new(6)?;
            let z = uniform(3, 6, -1.0, 1.0, rng);
            let e = uniform(3, 6, -1.0, 1.0, rng);
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let (net, z, e) = (net.clone(), z.clone(), e.clone());
                    move |g, s| {
                        let ev = g.input(e.clone());
                        single_step_reconstruct(g, s, &net, &sched, ev, Some(&z), "check")
                    }
                },
                rng,
                usize::MAX,
            )?;
            let scratch = store.clone();
            let e2 = input_check(
                &scratch,
                &[e],
                move |g, v| single_step_reconstruct(g, &store, &net, &sched, v[0], Some(&z), "check"),
                rng,
                usize::MAX,
            )?;
            Ok(both(e1, e2))
        }),
        ("entity refinement", |rng| {
            let mut store = ParamStore::new();
            let (uctx, sctx) = toy_contexts();
            let bank = EmbeddingBank::new(&mut store, &uctx, &sctx, 4, 1, rng)?;
            let noise_seed: u64 = rng.random();
            all_params(&mut store, rng);
            let ids = bank.users.params();
            param_check(
                &mut store,
                &ids,
                move |g, s| {
                    let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
                    bank.users.refine(g, s, &bank.schedule, &[0, 2, 2, 1], Mode::Train, &mut r)
                },
                rng,
                MAX_COORDS,
            )
        }),
        ("generator", |rng| {
            let mut store = ParamStore::new();
            let cfg = small_config();
            let gen = Generator::new(&mut store, &cfg, rng)?;
            let x = uniform(4, 2 * cfg.dim, -1.0, 1.0, rng);
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let gen = gen.clone();
                    let x = x.clone();
                    move |g, s| {
                        let xv = g.input(x.clone());
                        gen.forward(g, s, xv)
                    }
                },
                rng,
                MAX_COORDS,
            )?;
            let scratch = store.clone();
            let e2 = input_check(&scratch, &[x], move |g, v| gen.forward(g, &store, v[0]), rng, usize::MAX)?;
            Ok(both(e1, e2))
        }),
        ("discriminator", |rng| {
            let mut store = ParamStore::new();
            let cfg = small_config();
            let disc = Discriminator::new(&mut store, &cfg, rng)?;
            let x = uniform(5, 1, 0.05, 0.95, rng);
            let mask_seed: u64 = rng.random();
            let ids = all_params(&mut store, rng);
            let e1 = param_check(
                &mut store,
                &ids,
                {
                    let disc = disc.clone();
                    let x = x.clone();
                    move |g, s| {
                        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                        let xv = g.input(x.clone());
                        disc.forward(g, s, xv, Mode::Train, &mut r)
                    }
                },
                rng,
                MAX_COORDS,
            )?;
            let scratch = store.clone();
            let e2 = input_check(
                &scratch,
                &[x],
                move |g, v| {
                    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                    disc.forward(g, &store, v[0], Mode::Train, &mut r)
                },
                rng,
                usize::MAX,
            )?;
            Ok(both(e1, e2))
        }),
        ("adversarial losses", |rng| {
            let mut store = ParamStore::new();
            let cfg = small_config();
            let (uctx, sctx) = toy_contexts();
            let bank = EmbeddingBank::new(&mut store, &uctx, &sctx, cfg.dim, cfg.heads, rng)?;
            let gen = Generator::new(&mut store, &cfg, rng)?;
            let disc = Discriminator::new(&mut store, &cfg, rng)?;
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let seed: u64 = rng.random();
            let ids = all_params(&mut store, rng);
            param_check(
                &mut store,
                &ids,
                move |g, s| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let out = aaim_forward(g, s, &bank, &gen, &disc, &[0, 1, 2, 1], &[1, 0, 1, 2], cfg.tau, Mode::Train, &mut r)?;
                    let lg = generator_loss(g, &out, &targets, 0.3)?;
                    let ld = discriminator_loss(g, &out)?;
                    g.concat_cols(lg.total, ld)
                },
                rng,
                MAX_COORDS / 4,
            )
        }),
    ]
}

fn small_config() -> AaimConfig {
    AaimConfig {
        dim: 4,
        heads: 2,
        hidden: 6,
        ff: 5,
        out: 4,
        disc_hidden: 5,
        ..AaimConfig::default()
    }
}

fn toy_contexts() -> (ContextTable, ContextTable) {
    let users = ContextTable {
        fields: vec!["region".into()],
        rows: vec![vec![1], vec![2], vec![1]],
        vocab_sizes: vec![3],
    };
    let services = ContextTable {
        fields: vec!["provider".into(), "region".into()],
        rows: vec![vec![1, 2], vec![2, 1], vec![1, 1]],
        vocab_sizes: vec![3, 3],
    };
    (users, services)
}

fn run(cases: Vec<(&'static str, Case)>, trials: usize, seed: u64) -> Result<Vec<GradCheck>> {
    cases
        .into_par_iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut worst: f64 = 0.0;
            let (mut done, mut redrawn) = (0, 0);
            while done < trials {
                match case(&mut rng)? {
                    Some(e) => {
                        worst = worst.max(e);
                        done += 1;
                    }
                    None => {
                        redrawn += 1;
                        if redrawn > 20 * trials.max(1) {
                            return Err(Error::InvalidArgument(format!(
                                "gradient check `{name}` keeps landing near kinks"
                            )));
                        }
                    }
                }
            }
            Ok(GradCheck {
                name: name.to_string(),
                trials,
                max_rel_err: worst,
                redrawn,
            })
        })
        .collect()
}

/// One entry per graph operation.
pub fn primitive_suite(trials: usize, seed: u64) -> Result<Vec<GradCheck>> {
    run(primitive_cases(), trials, seed)
}

/// One entry per model layer: linear, attention, denoiser, reconstruction,
/// refinement, generator, discriminator and the two losses.
pub fn composite_suite(trials: usize, seed: u64) -> Result<Vec<GradCheck>> {
    run(composite_cases(), trials, seed)
}
