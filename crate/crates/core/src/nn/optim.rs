use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamSet<T>, config: AdamWConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads` may cover a subset of `params`; parameters without
    /// a gradient entry are left untouched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        let c = self.config;
        if !(c.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", c.lr)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.lr);
        let decay = T::one() - T::of(c.lr * c.weight_decay);
        let (bc1, bc2, eps) = (T::of(bc1), T::of(bc2), T::of(c.eps));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::ParamMismatch(format!("gradient shape for `{name}`")));
            }
            let m = self.m.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("AdamW step".into()));
        }
        Ok(())
    }
}

/// `target ← momentum·target + (1 − momentum)·online`, element-wise.
pub fn ema_update<T: Scalar>(target: &mut ParamSet<T>, online: &ParamSet<T>, momentum: T) -> Result<()> {
    target.check_compatible(online)?;
    let keep = T::one() - momentum;
    for (name, t) in target.iter_mut() {
        let o = online.get(name).expect("checked above");
        for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = momentum * *a + keep * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = single(1.5);
        let g = single(0.0);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_on_square_moves_by_lr_downhill() {
        // f(w) = w², g = 2w = 2. First Adam step magnitude is lr·g/(|g|+eps').
        let mut p = single(1.0);
        let g = single(2.0);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().item();
        assert!(w < 1.0);
        let expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((w - expected).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_shrinks_params_only() {
        let mut p = single(2.0);
        let g = single(0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(&p, cfg);
        opt.step(&mut p, &g).unwrap();
        assert!((p.get("w").unwrap().item() - 2.0 * (1.0 - 1e-3 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = single(1.0);
        let mut opt = AdamW::new(&p, AdamWConfig { lr: 0.0, ..Default::default() });
        assert!(opt.step(&mut p, &single(1.0)).is_err());
    }

    #[test]
    fn ema_endpoints_and_arithmetic() {
        let online = single(1.0);
        let mut t = single(0.0);
        ema_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.get("w").unwrap().item(), 0.0);
        ema_update(&mut t, &online, 0.99).unwrap();
        assert!((t.get("w").unwrap().item() - 0.01).abs() < 1e-15);
        ema_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.get("w").unwrap().item(), 1.0);
        let mut other = ParamSet::<f64>::new();
        other.insert("v", Tensor::scalar(0.0)).unwrap();
        assert!(ema_update(&mut other, &online, 0.5).is_err());
    }
}
