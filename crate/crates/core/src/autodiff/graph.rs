//! Tape of recorded primitive applications and its reverse sweep.
//!
//! A [`Graph`] lives for one forward/backward pass. Parameters are copied in
//! from a [`ParamStore`] when first referenced and their gradients are written
//! back to the store by [`Graph::backward`].

use std::collections::HashMap;

use super::gemm::{gemm, View};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower bound applied to `σ(x)` (and `1 - σ(x)`) before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather {
        param: ParamId,
        rows: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    SquaredError {
        pred: Var,
        target: Tensor,
    },
    Bce {
        x: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch-norm application.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (`n - 1`) variance, as used for running estimates.
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Var>,
    staged: Vec<(ParamId, Tensor)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.leaf_grads.clear();
        self.params.clear();
        self.staged.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for an input created by [`Graph::input_with_grad`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Records a parameter leaf; repeated references reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.param(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.params.insert(id, v);
        v
    }

    /// Embedding lookup: rows of a parameter table, with scatter-add backward.
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let p = store.param(id);
        let limit = p.value.rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= limit) {
            return Err(Error::IndexOutOfRange {
                what: "embedding row",
                index: bad,
                limit,
            });
        }
        let value = p.value.select_rows(rows);
        Ok(self.push(
            value,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
            p.trainable,
        ))
    }

    /// Records a buffer update that [`Graph::commit_buffers`] will apply.
    pub fn stage_buffer(&mut self, id: ParamId, value: Tensor) {
        self.staged.push((id, value));
    }

    pub fn commit_buffers(&mut self, store: &mut ParamStore) -> Result<()> {
        for (id, value) in self.staged.drain(..) {
            store.set_value(id, value)?;
        }
        Ok(())
    }

    pub fn discard_buffers(&mut self) {
        self.staged.clear();
    }

    // ---------------------------------------------------------------------
    // primitives

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let av = View::of(self.value(a), ta);
        let bv = View::of(self.value(b), tb);
        if av.cols != bv.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "inner dimensions differ: {}x{} · {}x{}",
                    av.rows, av.cols, bv.rows, bv.cols
                ),
            ));
        }
        let (m, n) = (av.rows, bv.cols);
        let mut out = vec![0.0; m * n];
        gemm(av, bv, &mut out, (n, 1), 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x c` row to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} does not broadcast over {r}x{c}", self.shape(row)),
            ));
        }
        let bias = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..r {
            for (v, b) in value.row_slice_mut(i).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `m` by `col[i]`.
    pub fn mul_col(&mut self, col: Var, m: Var) -> Result<Var> {
        let [r, c] = self.shape(m);
        if self.shape(col) != [r, 1] {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} does not scale rows of {r}x{c}", self.shape(col)),
            ));
        }
        let w = self.value(col).data().to_vec();
        let mut value = self.value(m).clone();
        for (i, wi) in w.iter().enumerate() {
            value.row_slice_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        let rg = self.rg(&[col, m]);
        Ok(self.push(value, Op::MulCol(col, m), rg))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?} vs {:?}", self.shape(a), c.shape()),
            ));
        }
        let value = {
            let ta = self.value(a);
            let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
            Tensor::new(ta.rows(), ta.cols(), data)?
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::shape(
                "add_const",
                format!("{:?} vs {:?}", self.shape(a), c.shape()),
            ));
        }
        let value = {
            let ta = self.value(a);
            let data = ta.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
            Tensor::new(ta.rows(), ta.cols(), data)?
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(&[a]);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_slice_mut(i));
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Per-row normalization with a `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let [r, c] = self.shape(x);
        if self.shape(gain) != [1, c] || self.shape(bias) != [1, c] {
            return Err(Error::shape(
                "layer_norm",
                format!("affine parameters must be 1x{c}"),
            ));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xs.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Batch normalization over rows using the batch's own statistics.
    ///
    /// Returns the output and the statistics for running-average updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let [r, c] = self.shape(x);
        if r < 2 {
            return Err(Error::shape(
                "batch_norm",
                format!("batch statistics need at least 2 rows, got {r}"),
            ));
        }
        let xs = self.value(x);
        let mut mean = vec![0.0; c];
        for i in 0..r {
            for (m, v) in mean.iter_mut().zip(xs.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        let mut ss = vec![0.0; c];
        for i in 0..r {
            for ((s, v), m) in ss.iter_mut().zip(xs.row_slice(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let var_biased: Vec<f64> = ss.iter().map(|s| s / r as f64).collect();
        let var_unbiased: Vec<f64> = ss.iter().map(|s| s / (r - 1) as f64).collect();
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.affine_norm(x, gain, bias, &mean, inv_std, true)?;
        Ok((v, BatchStats { mean, var_unbiased }))
    }

    /// Batch normalization with externally supplied (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.affine_norm(x, gain, bias, mean, inv_std, false)
    }

    fn affine_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let [r, c] = self.shape(x);
        if self.shape(gain) != [1, c]
            || self.shape(bias) != [1, c]
            || mean.len() != c
            || inv_std.len() != c
        {
            return Err(Error::shape(
                "batch_norm",
                format!("per-feature parameters must have length {c}"),
            ));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xs.row_slice(i);
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(r, c, out)?,
            Op::BatchNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([ra, ca], [rb, cb]) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts differ: {ra} vs {rb}"),
            ));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(ra, ca + cb, data)?, Op::ConcatCols(a, b), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} exceed width {c}", start + len),
            ));
        }
        let tx = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&tx.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(r, len, data)?, Op::SliceCols { x, start }, rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let r = self.shape(x)[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: bad,
                limit: r,
            });
        }
        let value = self.value(x).select_rows(idx);
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise dot product: `r x c`, `r x c` -> `r x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = (0..ta.rows())
            .map(|i| {
                ta.row_slice(i)
                    .iter()
                    .zip(tb.row_slice(i))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::column(data), Op::RowDot(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Elementwise `(pred - target)^2`.
    pub fn squared_error(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "squared_error",
                format!("{:?} vs {:?}", self.shape(pred), target.shape()),
            ));
        }
        let value = {
            let tp = self.value(pred);
            let data = tp
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| (p - t).powi(2))
                .collect();
            Tensor::new(tp.rows(), tp.cols(), data)?
        };
        let rg = self.rg(&[pred]);
        Ok(self.push(value, Op::SquaredError { pred, target }, rg))
    }

    /// Elementwise binary cross-entropy of `σ(x)` against `target`.
    pub fn bce(&mut self, x: Var, target: Tensor) -> Result<Var> {
        if self.shape(x) != target.shape() {
            return Err(Error::shape(
                "bce",
                format!("{:?} vs {:?}", self.shape(x), target.shape()),
            ));
        }
        let value = {
            let tx = self.value(x);
            let data = tx
                .data()
                .iter()
                .zip(target.data())
                .map(|(&x, &y)| bce_value(x, y))
                .collect();
            Tensor::new(tx.rows(), tx.cols(), data)?
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Bce { x, target }, rg))
    }

    /// Errors with `stage` in the message if `v` holds a non-finite value.
    /// Smallest distance of any ReLU or leaky-ReLU input to the kink at zero.
    pub fn nearest_kink(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::LeakyRelu(a, _) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(stage.to_string()))
        }
    }

    // ---------------------------------------------------------------------
    // reverse sweep

    /// Accumulates `∂loss/∂leaf` into parameter gradients in `store` and into
    /// the gradients of inputs created with [`Graph::input_with_grad`].
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let [r, c] = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {
                    let [r, c] = node.value.shape();
                    let slot = self
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| Tensor::zeros(r, c));
                    axpy(slot.data_mut(), &gout, 1.0);
                }
                Op::Param(id) => {
                    let slot = store.grad_slot(*id);
                    axpy(slot.data_mut(), &gout, 1.0);
                }
                Op::Gather { param, rows } => {
                    let slot = store.grad_slot(*param);
                    let c = slot.cols();
                    for (k, &row) in rows.iter().enumerate() {
                        axpy(slot.row_slice_mut(row), &gout[k * c..(k + 1) * c], 1.0);
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                    let [m, n] = node.value.shape();
                    let gview = View::raw(&gout, m, n, false);
                    if self.nodes[a.0].requires_grad {
                        let bval = &self.nodes[b.0].value;
                        let (ar, ac) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                        let slot = slot(&mut grads, a.0, ar * ac);
                        // d op(A) = dC · op(B)^T, written through op's strides.
                        let strides = if ta { (1, ac) } else { (ac, 1) };
                        gemm(gview, View::of(bval, tb).t(), slot, strides, 1.0);
                    }
                    if self.nodes[b.0].requires_grad {
                        let aval = &self.nodes[a.0].value;
                        let (br, bc) = (self.nodes[b.0].value.rows(), self.nodes[b.0].value.cols());
                        let slot = slot(&mut grads, b.0, br * bc);
                        let strides = if tb { (1, bc) } else { (bc, 1) };
                        gemm(View::of(aval, ta).t(), gview, slot, strides, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    self.pass(&mut grads, *a, &gout, 1.0);
                    self.pass(&mut grads, *b, &gout, 1.0);
                }
                Op::Sub(a, b) => {
                    self.pass(&mut grads, *a, &gout, 1.0);
                    self.pass(&mut grads, *b, &gout, -1.0);
                }
                Op::AddRow(a, row) => {
                    self.pass(&mut grads, *a, &gout, 1.0);
                    if self.nodes[row.0].requires_grad {
                        let c = node.value.cols();
                        let s = slot(&mut grads, row.0, c);
                        for chunk in gout.chunks(c) {
                            axpy(s, chunk, 1.0);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        let bv = self.nodes[b.0].value.data();
                        let s = slot(&mut grads, a.0, gout.len());
                        for ((s, g), y) in s.iter_mut().zip(&gout).zip(bv) {
                            *s += g * y;
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let av = self.nodes[a.0].value.data();
                        let s = slot(&mut grads, b.0, gout.len());
                        for ((s, g), x) in s.iter_mut().zip(&gout).zip(av) {
                            *s += g * x;
                        }
                    }
                }
                Op::MulCol(col, m) => {
                    let (col, m) = (*col, *m);
                    let [r, c] = node.value.shape();
                    if self.nodes[col.0].requires_grad {
                        let mv = self.nodes[m.0].value.data();
                        let s = slot(&mut grads, col.0, r);
                        for i in 0..r {
                            s[i] += (0..c).map(|j| gout[i * c + j] * mv[i * c + j]).sum::<f64>();
                        }
                    }
                    if self.nodes[m.0].requires_grad {
                        let w = self.nodes[col.0].value.data();
                        let s = slot(&mut grads, m.0, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                s[i * c + j] += gout[i * c + j] * w[i];
                            }
                        }
                    }
                }
                Op::MulConst(a, k) => {
                    if self.nodes[a.0].requires_grad {
                        let s = slot(&mut grads, a.0, gout.len());
                        for ((s, g), y) in s.iter_mut().zip(&gout).zip(k.data()) {
                            *s += g * y;
                        }
                    }
                }
                Op::AddConst(a) => self.pass(&mut grads, *a, &gout, 1.0),
                Op::Scale(a, k) => self.pass(&mut grads, *a, &gout, *k),
                Op::Relu(a) => {
                    let a = *a;
                    if self.nodes[a.0].requires_grad {
                        let x = self.nodes[a.0].value.data();
                        let s = slot(&mut grads, a.0, gout.len());
                        for ((s, g), x) in s.iter_mut().zip(&gout).zip(x) {
                            if *x > 0.0 {
                                *s += g;
                            }
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    if self.nodes[a.0].requires_grad {
                        let x = self.nodes[a.0].value.data();
                        let s = slot(&mut grads, a.0, gout.len());
                        for ((s, g), x) in s.iter_mut().zip(&gout).zip(x) {
                            *s += if *x > 0.0 { *g } else { slope * g };
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    if self.nodes[a.0].requires_grad {
                        let y = node.value.data();
                        let s = slot(&mut grads, a.0, gout.len());
                        for ((s, g), y) in s.iter_mut().zip(&gout).zip(y) {
                            *s += g * y * (1.0 - y);
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    if self.nodes[a.0].requires_grad {
                        let [r, c] = node.value.shape();
                        let y = node.value.data();
                        let s = slot(&mut grads, a.0, r * c);
                        for i in 0..r {
                            let row = i * c..(i + 1) * c;
                            let dot: f64 = gout[row.clone()]
                                .iter()
                                .zip(&y[row.clone()])
                                .map(|(g, y)| g * y)
                                .sum();
                            for j in row {
                                s[j] += y[j] * (gout[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let [r, c] = node.value.shape();
                    let gv = self.nodes[gain.0].value.data().to_vec();
                    self.affine_param_grads(&mut grads, gain, bias, &gout, xhat, c);
                    if self.nodes[x.0].requires_grad {
                        let s = slot(&mut grads, x.0, r * c);
                        let n = c as f64;
                        for i in 0..r {
                            let mut sum_d = 0.0;
                            let mut sum_dh = 0.0;
                            for j in 0..c {
                                let d = gout[i * c + j] * gv[j];
                                sum_d += d;
                                sum_dh += d * xhat[i * c + j];
                            }
                            for j in 0..c {
                                let d = gout[i * c + j] * gv[j];
                                s[i * c + j] +=
                                    inv_std[i] / n * (n * d - sum_d - xhat[i * c + j] * sum_dh);
                            }
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let [r, c] = node.value.shape();
                    let gv = self.nodes[gain.0].value.data().to_vec();
                    self.affine_param_grads(&mut grads, gain, bias, &gout, xhat, c);
                    if self.nodes[x.0].requires_grad {
                        let s = slot(&mut grads, x.0, r * c);
                        if *batch_stats {
                            let n = r as f64;
                            for j in 0..c {
                                let mut sum_d = 0.0;
                                let mut sum_dh = 0.0;
                                for i in 0..r {
                                    let d = gout[i * c + j] * gv[j];
                                    sum_d += d;
                                    sum_dh += d * xhat[i * c + j];
                                }
                                for i in 0..r {
                                    let d = gout[i * c + j] * gv[j];
                                    s[i * c + j] += inv_std[j] / n
                                        * (n * d - sum_d - xhat[i * c + j] * sum_dh);
                                }
                            }
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    s[i * c + j] += gout[i * c + j] * gv[j] * inv_std[j];
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let [r, c] = node.value.shape();
                    let ca = self.nodes[a.0].value.cols();
                    let cb = c - ca;
                    if self.nodes[a.0].requires_grad {
                        let s = slot(&mut grads, a.0, r * ca);
                        for i in 0..r {
                            axpy(&mut s[i * ca..(i + 1) * ca], &gout[i * c..i * c + ca], 1.0);
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let s = slot(&mut grads, b.0, r * cb);
                        for i in 0..r {
                            axpy(
                                &mut s[i * cb..(i + 1) * cb],
                                &gout[i * c + ca..(i + 1) * c],
                                1.0,
                            );
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    if self.nodes[x.0].requires_grad {
                        let [r, len] = node.value.shape();
                        let cx = self.nodes[x.0].value.cols();
                        let s = slot(&mut grads, x.0, r * cx);
                        for i in 0..r {
                            axpy(
                                &mut s[i * cx + start..i * cx + start + len],
                                &gout[i * len..(i + 1) * len],
                                1.0,
                            );
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    if self.nodes[x.0].requires_grad {
                        let [rx, c] = self.nodes[x.0].value.shape();
                        let s = slot(&mut grads, x.0, rx * c);
                        for (k, &row) in idx.iter().enumerate() {
                            axpy(&mut s[row * c..(row + 1) * c], &gout[k * c..(k + 1) * c], 1.0);
                        }
                    }
                }
                Op::RowDot(a, b) => {
                    let (a, b) = (*a, *b);
                    let [r, c] = self.nodes[a.0].value.shape();
                    if self.nodes[a.0].requires_grad {
                        let bv = self.nodes[b.0].value.data();
                        let s = slot(&mut grads, a.0, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                s[i * c + j] += gout[i] * bv[i * c + j];
                            }
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let av = self.nodes[a.0].value.data();
                        let s = slot(&mut grads, b.0, r * c);
                        for i in 0..r {
                            for j in 0..c {
                                s[i * c + j] += gout[i] * av[i * c + j];
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    if self.nodes[a.0].requires_grad {
                        let n = self.nodes[a.0].value.len();
                        slot(&mut grads, a.0, n).iter_mut().for_each(|s| *s += gout[0]);
                    }
                }
                Op::Mean(a) => {
                    let a = *a;
                    if self.nodes[a.0].requires_grad {
                        let n = self.nodes[a.0].value.len();
                        let g = gout[0] / n.max(1) as f64;
                        slot(&mut grads, a.0, n).iter_mut().for_each(|s| *s += g);
                    }
                }
                Op::SquaredError { pred, target } => {
                    let pred = *pred;
                    if self.nodes[pred.0].requires_grad {
                        let p = self.nodes[pred.0].value.data();
                        let s = slot(&mut grads, pred.0, p.len());
                        for (((s, g), p), t) in s.iter_mut().zip(&gout).zip(p).zip(target.data()) {
                            *s += 2.0 * (p - t) * g;
                        }
                    }
                }
                Op::Bce { x, target } => {
                    let x = *x;
                    if self.nodes[x.0].requires_grad {
                        let xv = self.nodes[x.0].value.data();
                        let s = slot(&mut grads, x.0, xv.len());
                        for (((s, g), x), t) in s.iter_mut().zip(&gout).zip(xv).zip(target.data()) {
                            *s += bce_grad(*x, *t) * g;
                        }
                    }
                }
            }
        }

        // Parameters that took part in the pass but received no signal still
        // get a (zero) gradient slot.
        for node in &self.nodes {
            match node.op {
                Op::Param(id) | Op::Gather { param: id, .. } if node.requires_grad => {
                    store.grad_slot(id);
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn pass(&self, grads: &mut [Option<Vec<f64>>], a: Var, gout: &[f64], k: f64) {
        if self.nodes[a.0].requires_grad {
            let s = slot(grads, a.0, gout.len());
            axpy(s, gout, k);
        }
    }

    fn affine_param_grads(
        &self,
        grads: &mut [Option<Vec<f64>>],
        gain: Var,
        bias: Var,
        gout: &[f64],
        xhat: &[f64],
        c: usize,
    ) {
        if self.nodes[gain.0].requires_grad {
            let s = slot(grads, gain.0, c);
            for (k, g) in gout.iter().enumerate() {
                s[k % c] += g * xhat[k];
            }
        }
        if self.nodes[bias.0].requires_grad {
            let s = slot(grads, bias.0, c);
            for (k, g) in gout.iter().enumerate() {
                s[k % c] += g;
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], x: &[f64], k: f64) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += k * x;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// `-[y log σ(x) + (1 - y) log(1 - σ(x))]` with `σ(x)` clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce_value(x: f64, y: f64) -> f64 {
    let p = sigmoid(x).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(x: f64, y: f64) -> f64 {
    let s = sigmoid(x);
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&s) {
        0.0
    } else {
        s - y
    }
}
