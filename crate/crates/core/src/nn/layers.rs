//! Layer zoo: MLP (optionally normalized), standalone layer/batch norm and a
//! GRU cell. Layers are descriptions; their tensors live in a [`ParamSet`]
//! under a name prefix.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Linear => x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    None,
    Layer,
    Batch,
}

/// Where a layer reads its tensors from.
#[derive(Clone, Copy)]
pub struct Source<'p, T> {
    pub params: &'p ParamSet<T>,
    /// Running batch-norm statistics.
    pub stats: &'p ParamSet<T>,
    pub trainable: bool,
}

impl<'p, T: Scalar> Source<'p, T> {
    pub fn trainable(params: &'p ParamSet<T>, stats: &'p ParamSet<T>) -> Self {
        Self {
            params,
            stats,
            trainable: true,
        }
    }

    pub fn frozen(params: &'p ParamSet<T>, stats: &'p ParamSet<T>) -> Self {
        Self {
            params,
            stats,
            trainable: false,
        }
    }

    pub fn var(&self, g: &mut Graph<'p, T>, name: &str) -> Result<Var> {
        if self.trainable {
            g.param(self.params, name)
        } else {
            g.frozen(self.params, name)
        }
    }

    fn stat(&self, name: &str) -> Result<&'p [T]> {
        self.stats
            .get(name)
            .map(|t| t.data())
            .ok_or_else(|| crate::error::Error::UnknownParam(name.to_string()))
    }
}

fn uniform_init<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_rows(rows, cols, data)
}

/// Affine layers `widths[0] → … → widths[n]`; every hidden layer is
/// followed by `norm` (if any) and then `activation`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub norm: Norm,
    pub output: Activation,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, activation: Activation, norm: Norm) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            widths,
            activation,
            norm,
            output: Activation::Linear,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn init<T: Scalar, R: Rng>(
        &self,
        prefix: &str,
        rng: &mut R,
        params: &mut ParamSet<T>,
        stats: &mut ParamSet<T>,
    ) -> Result<()> {
        let layers = self.widths.len() - 1;
        for i in 0..layers {
            let (fi, fo) = (self.widths[i], self.widths[i + 1]);
            params.insert(format!("{prefix}.l{i}.w"), uniform_init(rng, fi, fo, fi))?;
            params.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(&[fo]))?;
            if i + 1 < layers && self.norm != Norm::None {
                params.insert(format!("{prefix}.n{i}.g"), Tensor::full(&[fo], T::one()))?;
                params.insert(format!("{prefix}.n{i}.b"), Tensor::zeros(&[fo]))?;
                if self.norm == Norm::Batch {
                    stats.insert(format!("{prefix}.n{i}.mean"), Tensor::zeros(&[fo]))?;
                    stats.insert(format!("{prefix}.n{i}.var"), Tensor::full(&[fo], T::one()))?;
                }
            }
        }
        Ok(())
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        src: Source<'p, T>,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let w = g.value(x).cols();
        if w != self.input_width() {
            return Err(shape_err(
                "Mlp::forward",
                format!("{prefix}: input width {w}, expected {}", self.input_width()),
            ));
        }
        let layers = self.widths.len() - 1;
        let mut h = x;
        for i in 0..layers {
            let wv = src.var(g, &format!("{prefix}.l{i}.w"))?;
            let bv = src.var(g, &format!("{prefix}.l{i}.b"))?;
            h = g.linear(h, wv, Some(bv));
            if i + 1 < layers {
                h = match self.norm {
                    Norm::None => h,
                    Norm::Layer => {
                        let gv = src.var(g, &format!("{prefix}.n{i}.g"))?;
                        let bv = src.var(g, &format!("{prefix}.n{i}.b"))?;
                        g.layer_norm(h, gv, bv, T::of(LAYER_NORM_EPS))
                    }
                    Norm::Batch => {
                        let base = format!("{prefix}.n{i}");
                        let gv = src.var(g, &format!("{base}.g"))?;
                        let bv = src.var(g, &format!("{base}.b"))?;
                        let m = src.stat(&format!("{base}.mean"))?;
                        let v = src.stat(&format!("{base}.var"))?;
                        g.batch_norm(&base, h, gv, bv, m, v, T::of(BATCH_NORM_EPS))
                    }
                };
                h = self.activation.apply(g, h);
            }
        }
        Ok(self.output.apply(g, h))
    }
}

/// Gated recurrent unit: `h' = (1-u)⊙h + u⊙ĥ` with sigmoid update/reset
/// gates and tanh candidate. With `layer_norm`, each gate pre-activation is
/// normalized before its nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    pub layer_norm: bool,
}

const GATES: [&str; 3] = ["u", "r", "c"];

impl GruCell {
    pub fn init<T: Scalar, R: Rng>(&self, prefix: &str, rng: &mut R, params: &mut ParamSet<T>) -> Result<()> {
        for gate in GATES {
            params.insert(
                format!("{prefix}.{gate}.wx"),
                uniform_init(rng, self.input, self.hidden, self.input),
            )?;
            params.insert(
                format!("{prefix}.{gate}.wh"),
                uniform_init(rng, self.hidden, self.hidden, self.hidden),
            )?;
            params.insert(format!("{prefix}.{gate}.b"), Tensor::zeros(&[self.hidden]))?;
            if self.layer_norm {
                params.insert(format!("{prefix}.{gate}.ln.g"), Tensor::full(&[self.hidden], T::one()))?;
                params.insert(format!("{prefix}.{gate}.ln.b"), Tensor::zeros(&[self.hidden]))?;
            }
        }
        Ok(())
    }

    fn preact<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        src: Source<'p, T>,
        prefix: &str,
        gate: &str,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let wx = src.var(g, &format!("{prefix}.{gate}.wx"))?;
        let wh = src.var(g, &format!("{prefix}.{gate}.wh"))?;
        let b = src.var(g, &format!("{prefix}.{gate}.b"))?;
        let a = g.linear(x, wx, Some(b));
        let r = g.matmul(h, wh);
        let mut s = g.add(a, r);
        if self.layer_norm {
            let lg = src.var(g, &format!("{prefix}.{gate}.ln.g"))?;
            let lb = src.var(g, &format!("{prefix}.{gate}.ln.b"))?;
            s = g.layer_norm(s, lg, lb, T::of(LAYER_NORM_EPS));
        }
        Ok(s)
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        src: Source<'p, T>,
        prefix: &str,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let (xw, hw) = (g.value(x).cols(), g.value(h).cols());
        if xw != self.input || hw != self.hidden {
            return Err(shape_err(
                "GruCell::forward",
                format!("{prefix}: input {xw}/{}, hidden {hw}/{}", self.input, self.hidden),
            ));
        }
        let pu = self.preact(g, src, prefix, "u", x, h)?;
        let u = g.sigmoid(pu);
        let pr = self.preact(g, src, prefix, "r", x, h)?;
        let r = g.sigmoid(pr);
        let rh = g.mul(r, h);
        let pc = self.preact(g, src, prefix, "c", x, rh)?;
        let cand = g.tanh(pc);
        let keep = g.one_minus(u);
        let a = g.mul(keep, h);
        let b = g.mul(u, cand);
        Ok(g.add(a, b))
    }
}

/// Fold train-mode batch statistics into running averages.
pub fn apply_stat_updates<T: Scalar>(
    stats: &mut ParamSet<T>,
    updates: &[super::graph::StatUpdate<T>],
    momentum: T,
) {
    for u in updates {
        if let Some(m) = stats.get_mut(&format!("{}.mean", u.name)) {
            for (r, &b) in m.data_mut().iter_mut().zip(&u.mean) {
                *r = momentum * *r + (T::one() - momentum) * b;
            }
        }
        if let Some(v) = stats.get_mut(&format!("{}.var", u.name)) {
            for (r, &b) in v.data_mut().iter_mut().zip(&u.var) {
                *r = momentum * *r + (T::one() - momentum) * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mlp = Mlp::new(vec![3, 3], Activation::Elu, Norm::None);
        let mut ps = ParamSet::<f64>::new();
        let mut st = ParamSet::new();
        mlp.init("lin", &mut ChaCha8Rng::seed_from_u64(0), &mut ps, &mut st).unwrap();
        let w = ps.get_mut("lin.l0.w").unwrap();
        w.data_mut().copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::row(vec![0.5, -2.0, 7.0]));
        let y = mlp.forward(&mut g, Source::frozen(&ps, &st), "lin", x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_gru_halves_the_hidden_state() {
        for ln in [false, true] {
            let cell = GruCell {
                input: 2,
                hidden: 2,
                layer_norm: ln,
            };
            let mut ps = ParamSet::<f64>::new();
            cell.init("gru", &mut ChaCha8Rng::seed_from_u64(1), &mut ps).unwrap();
            for (n, t) in ps.iter_mut() {
                if !n.ends_with(".ln.g") {
                    t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let st = ParamSet::new();
            let mut g = Graph::new(Mode::Eval);
            let x = g.constant(Tensor::row(vec![0.0, 0.0]));
            let h = g.constant(Tensor::row(vec![1.0, 1.0]));
            let h2 = cell.forward(&mut g, Source::frozen(&ps, &st), "gru", x, h).unwrap();
            assert_eq!(g.value(h2).data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mlp = Mlp::new(vec![4, 2], Activation::Elu, Norm::None);
        let mut ps = ParamSet::<f32>::new();
        let mut st = ParamSet::new();
        mlp.init("m", &mut ChaCha8Rng::seed_from_u64(0), &mut ps, &mut st).unwrap();
        let mut g = Graph::new(Mode::Eval);
        let x = g.constant(Tensor::row(vec![1.0; 3]));
        assert!(mlp.forward(&mut g, Source::frozen(&ps, &st), "m", x).is_err());
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mlp = Mlp::new(vec![2, 2, 1], Activation::Linear, Norm::Batch);
        let mut ps = ParamSet::<f64>::new();
        let mut st = ParamSet::new();
        mlp.init("m", &mut ChaCha8Rng::seed_from_u64(0), &mut ps, &mut st).unwrap();
        let x = Tensor::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        // Eval with default stats (mean 0, var 1): rows are independent.
        let mut g = Graph::new(Mode::Eval);
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, Source::frozen(&ps, &st), "m", xv).unwrap();
        let both = g.value(y).clone();
        let mut g1 = Graph::new(Mode::Eval);
        let xv1 = g1.constant(x.select_rows(&[1]));
        let y1 = mlp.forward(&mut g1, Source::frozen(&ps, &st), "m", xv1).unwrap();
        assert_eq!(both.get(1, 0), g1.value(y1).get(0, 0));

        let mut gt = Graph::new(Mode::Train);
        let xv = gt.constant(x);
        mlp.forward(&mut gt, Source::trainable(&ps, &st), "m", xv).unwrap();
        let ups = gt.take_stat_updates();
        assert_eq!(ups.len(), 1);
        apply_stat_updates(&mut st, &ups, 0.99);
        assert_ne!(st.get("m.n0.mean").unwrap().data(), &[0.0, 0.0]);
    }
}
