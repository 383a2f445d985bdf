//! Layers shared by the embedding and interaction modules.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine map `y = x Wᵀ + b` with `W` stored as `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Gaussian weights with the given variance, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        variance: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_gaussian(format!("{name}.weight"), out_dim, in_dim, variance, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// He-normal initialization, variance `2 / fan_in`.
    pub fn kaiming<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, in_dim, out_dim, 2.0 / in_dim as f64, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul_t(x, w, false, true)?;
        g.add_row(xw, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, self.eps)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Batch normalization over the batch axis with running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        BatchNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(1, dim)),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::filled(1, dim, 1.0)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// In training mode the batch statistics are used and the updated running
    /// estimates are staged on the graph; in evaluation mode the running
    /// estimates are used.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gain, bias, self.eps)?;
                let m = self.momentum;
                let blend = |old: &Tensor, new: &[f64]| {
                    Tensor::row(
                        old.data()
                            .iter()
                            .zip(new)
                            .map(|(o, n)| (1.0 - m) * o + m * n)
                            .collect(),
                    )
                };
                let mean = blend(store.value(self.running_mean), &stats.mean);
                let var = blend(store.value(self.running_var), &stats.var_unbiased);
                g.stage_buffer(self.running_mean, mean);
                g.stage_buffer(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gain,
                bias,
                store.value(self.running_mean).data(),
                store.value(self.running_var).data(),
                self.eps,
            ),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Inverted dropout: surviving activations are scaled by `1 / keep_prob`.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    keep_prob: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if mode == Mode::Eval || keep_prob >= 1.0 {
        return Ok(x);
    }
    if !(keep_prob > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dropout keep probability must be in (0, 1], got {keep_prob}"
        )));
    }
    let [r, c] = g.shape(x);
    let bern = Bernoulli::new(keep_prob).expect("probability in range");
    let mask = (0..r * c)
        .map(|_| if bern.sample(rng) { 1.0 / keep_prob } else { 0.0 })
        .collect();
    g.mul_const(x, Tensor::new(r, c, mask)?)
}

/// Multi-head attention applied to every row as an independent sequence of
/// length one.
///
/// With a single key per query the softmax weight is exactly 1, so the output
/// is `W_o (W_v v + b_v) + b_o` regardless of query and key; the score path is
/// still evaluated.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        variance: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, variance, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, variance, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, variance, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, variance, rng),
            heads,
            dim,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<Var> {
        let q = self.query.forward(g, store, query)?;
        let k = self.key.forward(g, store, key)?;
        let v = self.value.forward(g, store, value)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut merged: Option<Var> = None;
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * head_dim, head_dim)?,
                    g.slice_cols(k, h * head_dim, head_dim)?,
                    g.slice_cols(v, h * head_dim, head_dim)?,
                )
            };
            // One key per query: the score matrix is B x 1.
            let score = g.row_dot(qh, kh)?;
            let score = g.scale(score, scale);
            let weight = g.softmax_rows(score);
            let out = g.mul_col(weight, vh)?;
            merged = Some(match merged {
                None => out,
                Some(prev) => g.concat_cols(prev, out)?,
            });
        }
        let merged = merged.expect("at least one head");
        self.output.forward(g, store, merged)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}
