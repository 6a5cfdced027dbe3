use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is essentially zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences `(f(θ + h e_i) − f(θ − h e_i)) / 2h` compared against
/// `analytic`, over every coordinate or `per_tensor` random ones per tensor.
pub fn check_gradients<R: Rng>(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    mut f: impl FnMut(&ParamSet<f64>) -> Result<f64>,
    h: f64,
    per_tensor: Option<(usize, &mut R)>,
) -> Result<GradCheck> {
    params.check_compatible(analytic)?;
    let mut coords: Vec<(String, usize)> = Vec::new();
    let mut rng = per_tensor;
    for (name, t) in params.iter() {
        match rng.as_mut() {
            Some((k, r)) if *k < t.len() => {
                for _ in 0..*k {
                    coords.push((name.to_string(), r.random_range(0..t.len())));
                }
            }
            _ => coords.extend((0..t.len()).map(|i| (name.to_string(), i))),
        }
    }
    if coords.is_empty() {
        return Err(Error::Invalid("no parameters to check".into()));
    }
    let mut work = params.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (name, i) in coords {
        let orig = work.get(&name).expect("listed").data()[i];
        work.get_mut(&name).expect("listed").data_mut()[i] = orig + h;
        let up = f(&work)?;
        work.get_mut(&name).expect("listed").data_mut()[i] = orig - h;
        let down = f(&work)?;
        work.get_mut(&name).expect("listed").data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get(&name).expect("compatible").data()[i];
        let e = relative_error(a, numeric);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("gradient check at {name}[{i}]")));
        }
        if e > out.max_rel_err || out.worst.is_empty() {
            out.max_rel_err = e.max(out.max_rel_err);
            out.worst = format!("{name}[{i}]");
        }
        out.checked += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_rows(1, 3, vec![0.5, -1.0, 2.0])).unwrap();
        let f = |ps: &ParamSet<f64>| Ok(ps.get("w").unwrap().data().iter().map(|x| x * x * x).sum::<f64>());
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().data_mut().copy_from_slice(&[0.75, 3.0, 12.0]);
        let ok = check_gradients::<ChaCha8Rng>(&p, &g, f, 1e-5, None).unwrap();
        assert!(ok.passes(1e-8) && ok.checked == 3);
        g.get_mut("w").unwrap().data_mut()[1] = 3.1;
        let bad = check_gradients::<ChaCha8Rng>(&p, &g, f, 1e-5, None).unwrap();
        assert_eq!(bad.worst, "w[1]");
        assert!(!bad.passes(1e-4));
    }
}
