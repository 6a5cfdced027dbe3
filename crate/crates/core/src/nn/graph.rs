//! Tape-based reverse-mode differentiation over rank-2 tensors.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward mode. `Eval` makes batch normalization use running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    /// Row-wise normalization; `stats` holds per-row inverse std.
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Column-wise normalization with batch statistics.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Column-wise affine normalization with fixed (running) statistics.
    FixedNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(Vec<Var>),
    L2Normalize {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    SumRows(Var),
    SumAll(Var),
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running-statistic update emitted by a train-mode batch normalization.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Computation tape. Parameters are borrowed for the lifetime `'p`.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    mode: Mode,
    trainable: HashMap<String, Var>,
    frozen: HashMap<(usize, String), Var>,
    stat_updates: Vec<StatUpdate<T>>,
    nonfinite: Option<&'static str>,
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Linear(..) => "linear",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::MulCol(..) => "mul_col",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Elu(..) => "elu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Square(..) => "square",
        Op::LayerNorm { .. } => "layer_norm",
        Op::BatchNorm { .. } => "batch_norm",
        Op::FixedNorm { .. } => "batch_norm(eval)",
        Op::Concat(..) => "concat",
        Op::L2Normalize { .. } => "l2_normalize",
        Op::SumRows(..) => "sum_rows",
        Op::SumAll(..) => "sum_all",
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            trainable: HashMap::new(),
            frozen: HashMap::new(),
            stat_updates: Vec::new(),
            nonfinite: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(op_name(&op));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fails if any node produced NaN/Inf.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Trainable parameter leaf; gradients are reported for it by `backward`.
    pub fn param(&mut self, ps: &'p ParamSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.trainable.get(name) {
            return Ok(v);
        }
        let t = ps.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let v = self.push(Cow::Borrowed(t), Op::Leaf, true);
        self.trainable.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter leaf that never receives gradient (targets, frozen critics).
    pub fn frozen(&mut self, ps: &'p ParamSet<T>, name: &str) -> Result<Var> {
        let key = (ps as *const ParamSet<T> as usize, name.to_string());
        if let Some(&v) = self.frozen.get(&key) {
            return Ok(v);
        }
        let t = ps.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let v = self.push(Cow::Borrowed(t), Op::Leaf, false);
        self.frozen.insert(key, v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Copy of `v` cut from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn check2(&self, op: &'static str, a: Var, b: Var) -> (usize, usize) {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.rows() == tb.rows() && ta.cols() == tb.cols(),
            "{op}: {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        (ta.rows(), ta.cols())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (r, c) = self.check2(op_name(&op), a, b);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::from_rows(r, c, data)), op, rg)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let t = self.value(a);
        let out = Tensor::from_rows(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(Cow::Owned(out), op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert_eq!(k, tb.rows(), "matmul: {:?} x {:?}", ta.shape(), tb.shape());
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), ta.data(), false, tb.data(), false, T::zero(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::from_rows(m, n, out)), Op::MatMul(a, b), rg)
    }

    /// `x · w + b` with `w` stored as (in × out).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        assert_eq!(k, tw.rows(), "linear: input {:?} weight {:?}", tx.shape(), tw.shape());
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let tb = self.value(b);
            assert_eq!(tb.len(), n, "linear: bias {:?}", tb.shape());
            for row in out.chunks_mut(n) {
                row.copy_from_slice(tb.data());
            }
        }
        T::gemm(m, k, n, T::one(), tx.data(), false, tw.data(), false, T::one(), &mut out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Cow::Owned(Tensor::from_rows(m, n, out)), Op::Linear(x, w, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        assert_eq!(tr.len(), c, "row broadcast: {:?} with {:?}", ta.shape(), tr.shape());
        let mut data = ta.data().to_vec();
        for r in data.chunks_mut(c) {
            for (x, &y) in r.iter_mut().zip(tr.data()) {
                if mul {
                    *x *= y
                } else {
                    *x += y
                }
            }
        }
        let out = Tensor::from_rows(ta.rows(), c, data);
        let rg = self.rg(a) || self.rg(row);
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        self.push(Cow::Owned(out), op, rg)
    }

    /// `a + row` with `row` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, false)
    }

    /// `a * row` with `row` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, true)
    }

    /// `a * col` with an `n × 1` column broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ta, tc) = (self.value(a), self.value(col));
        let (r, c) = (ta.rows(), ta.cols());
        assert_eq!(tc.len(), r, "mul_col: {:?} with {:?}", ta.shape(), tc.shape());
        let mut data = ta.data().to_vec();
        for (row, &w) in data.chunks_mut(c).zip(tc.data()) {
            row.iter_mut().for_each(|x| *x *= w);
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(Cow::Owned(Tensor::from_rows(r, c, data)), Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -T::one());
        self.add_scalar(n, T::one())
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x > T::zero() { x } else { x.exp_m1() })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert!(g.len() == c && b.len() == c, "layer_norm: width {c}");
        let nc = T::of(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = tx.row_slice(i);
            let mean = row.iter().copied().sum::<T>() / nc;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nc;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push(Cow::Owned(Tensor::from_rows(r, c, out)), op, rg)
    }

    /// Column-wise normalization. In train mode uses batch statistics and
    /// records a [`StatUpdate`] under `name`; in eval mode uses the supplied
    /// running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        name: &str,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert!(g.len() == c && b.len() == c, "batch_norm: width {c}");
        let (mean, var, train) = if self.mode == Mode::Train && r > 1 {
            let nr = T::of(r as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for i in 0..r {
                for (m, &v) in mean.iter_mut().zip(tx.row_slice(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nr);
            for i in 0..r {
                for (j, &v) in tx.row_slice(i).iter().enumerate() {
                    var[j] += (v - mean[j]) * (v - mean[j]);
                }
            }
            var.iter_mut().for_each(|v| *v /= nr);
            (mean, var, true)
        } else {
            (running_mean.to_vec(), running_var.to_vec(), false)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); r * c];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = tx.row_slice(i);
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = if train {
            self.stat_updates.push(StatUpdate {
                name: name.to_string(),
                mean,
                var,
            });
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            }
        } else {
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            }
        };
        self.push(Cow::Owned(Tensor::from_rows(r, c, out)), op, rg)
    }

    /// Column concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let r = self.value(parts[0]).rows();
        let cols: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = cols.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), r, "concat: row mismatch");
                data.extend_from_slice(t.row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Cow::Owned(Tensor::from_rows(r, total, data)),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// Row-wise `x / (‖x‖₂ + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = tx.row_slice(i);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            let d = n + eps;
            out.extend(row.iter().map(|&v| v / d));
        }
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Tensor::from_rows(r, c, out)),
            Op::L2Normalize { x, norms, eps },
            rg,
        )
    }

    /// `n × m → n × 1`
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row_slice(i).iter().copied().sum()).collect();
        let out = Tensor::from_rows(t.rows(), 1, data);
        let rg = self.rg(a);
        self.push(Cow::Owned(out), Op::SumRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Gradients with respect to every parameter in `ps`; parameters that do
    /// not reach `loss` get zeros.
    pub fn backward(&self, loss: Var, ps: &ParamSet<T>) -> Result<ParamSet<T>> {
        self.ensure_finite()?;
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Invalid(format!("loss must be scalar, got {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut out = ps.zeros_like();
        for (name, &v) in &self.trainable {
            if let (Some(g), Some(slot)) = (grads[v.0].take(), out.get_mut(name)) {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
                slot.data_mut().copy_from_slice(&g);
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (r, c) = (out.rows(), out.cols());
        let val = |v: Var| -> &Tensor<T> { &self.nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) | Op::Linear(a, b, _) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = ta.cols();
                acc(*a, &mut |s| T::gemm(r, c, k, T::one(), g, false, tb.data(), true, T::one(), s));
                acc(*b, &mut |s| T::gemm(k, r, c, T::one(), ta.data(), true, g, false, T::one(), s));
                if let Op::Linear(_, _, Some(bias)) = &node.op {
                    acc(*bias, &mut |s| col_sum_into(g, c, s));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((x, &gy), &bv) in s.iter_mut().zip(g).zip(tb.data()) {
                        *x += gy * bv;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, &gy), &av) in s.iter_mut().zip(g).zip(ta.data()) {
                        *x += gy * av;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*row, &mut |s| col_sum_into(g, c, s));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * tr.data()[i % c];
                    }
                });
                acc(*row, &mut |s| {
                    for (i, (&gy, &av)) in g.iter().zip(ta.data()).enumerate() {
                        s[i % c] += gy * av;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * tc.data()[i / c];
                    }
                });
                acc(*col, &mut |s| {
                    for (i, (&gy, &av)) in g.iter().zip(ta.data()).enumerate() {
                        s[i / c] += gy * av;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(x, &y)| *x += *k * y)
            }),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Elu(a) => {
                let (ti, to) = (val(*a), out);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let d = if ti.data()[i] > T::zero() {
                            T::one()
                        } else {
                            to.data()[i] + T::one()
                        };
                        s[i] += g[i] * d;
                    }
                })
            }
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    let y = out.data()[i];
                    s[i] += g[i] * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    let y = out.data()[i];
                    s[i] += g[i] * y * (T::one() - y);
                }
            }),
            Op::Square(a) => {
                let ta = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (ta.data()[i] + ta.data()[i]);
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (i, &gy) in g.iter().enumerate() {
                        s[i % c] += gy * xhat[i];
                    }
                });
                acc(*beta, &mut |s| col_sum_into(g, c, s));
                let nc = T::of(c as f64);
                acc(*x, &mut |s| {
                    for i in 0..r {
                        let base = i * c;
                        let mut sum_gh = T::zero();
                        let mut sum_ghx = T::zero();
                        for j in 0..c {
                            let gh = g[base + j] * tg.data()[j];
                            sum_gh += gh;
                            sum_ghx += gh * xhat[base + j];
                        }
                        for j in 0..c {
                            let gh = g[base + j] * tg.data()[j];
                            s[base + j] += inv_std[i] / nc
                                * (nc * gh - sum_gh - xhat[base + j] * sum_ghx);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (i, &gy) in g.iter().enumerate() {
                        s[i % c] += gy * xhat[i];
                    }
                });
                acc(*beta, &mut |s| col_sum_into(g, c, s));
                let nr = T::of(r as f64);
                acc(*x, &mut |s| {
                    let mut sum_gh = vec![T::zero(); c];
                    let mut sum_ghx = vec![T::zero(); c];
                    for i in 0..r * c {
                        let j = i % c;
                        let gh = g[i] * tg.data()[j];
                        sum_gh[j] += gh;
                        sum_ghx[j] += gh * xhat[i];
                    }
                    for i in 0..r * c {
                        let j = i % c;
                        let gh = g[i] * tg.data()[j];
                        s[i] += inv_std[j] / nr * (nr * gh - sum_gh[j] - xhat[i] * sum_ghx[j]);
                    }
                });
            }
            Op::FixedNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (i, &gy) in g.iter().enumerate() {
                        s[i % c] += gy * xhat[i];
                    }
                });
                acc(*beta, &mut |s| col_sum_into(g, c, s));
                acc(*x, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        let j = i % c;
                        *x += g[i] * tg.data()[j] * inv_std[j];
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    acc(p, &mut |s| {
                        for i in 0..r {
                            for j in 0..pc {
                                s[i * pc + j] += g[i * c + off + j];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::L2Normalize { x, norms, eps } => {
                let tx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..r {
                        let row = tx.row_slice(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let n = norms[i];
                        let d = n + *eps;
                        let dot: T = gr.iter().zip(row).map(|(&a, &b)| a * b).sum();
                        let k = if n > T::zero() { dot / (d * d * n) } else { T::zero() };
                        for j in 0..c {
                            s[i * c + j] += gr[j] / d - row[j] * k;
                        }
                    }
                });
            }
            Op::SumRows(a) => {
                let ca = val(*a).cols();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i / ca];
                    }
                })
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
        }
    }
}

fn add_into<T: Scalar>(s: &mut [T], g: &[T]) {
    s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
}

fn col_sum_into<T: Scalar>(g: &[T], c: usize, s: &mut [T]) {
    for row in g.chunks(c) {
        for (x, &y) in s.iter_mut().zip(row) {
            *x += y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_of_dot_product() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::from_rows(1, 1, vec![2.0])).unwrap();
        ps.insert("unused", Tensor::from_rows(1, 2, vec![1.0, 1.0])).unwrap();
        let mut g = Graph::new(Mode::Train);
        let w = g.param(&ps, "w").unwrap();
        let x = g.constant(Tensor::scalar(3.0));
        let y = g.matmul(x, w);
        let loss = g.sum(y);
        let grads = g.backward(loss, &ps).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[3.0]);
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new(Mode::Train);
        let w = g.frozen(&ps, "w").unwrap();
        let x = g.constant(Tensor::scalar(3.0));
        let y = g.mul(x, w);
        let loss = g.sum(y);
        let grads = g.backward(loss, &ps).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.constant(Tensor::row(vec![5.0, 5.0, 5.0]));
        let gamma = g.constant(Tensor::row(vec![1.0; 3]));
        let beta = g.constant(Tensor::row(vec![0.0; 3]));
        let y = g.layer_norm(x, gamma, beta, 1e-6);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.constant(Tensor::row(vec![1e300]));
        let y = g.square(x);
        let _ = g.square(y);
        assert!(matches!(g.ensure_finite(), Err(Error::NonFinite(_))));
    }
}
