//! Central finite-difference checks of analytic gradients.

use rand::Rng;

use super::{named_params, param_refs_mut, Params};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `(parameter name, element, analytic, numeric, relative error)`.
    pub samples: Vec<(String, usize, f64, f64, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.samples.iter().map(|s| s.4).fold(0.0, f64::max)
    }
}

/// Compares `grads` against `(loss(θ+h) − loss(θ−h)) / 2h` at `count`
/// uniformly drawn parameter elements. Relative error is measured against
/// `max(|analytic|, |numeric|, 1e-12)`.
pub fn check_gradients<P, L>(model: &mut P, grads: &P, count: usize, step: f64, seed: u64, loss: L) -> GradCheck
where
    P: Params<f64>,
    L: Fn(&P) -> f64,
{
    let names: Vec<(String, usize)> = named_params(model).iter().map(|(n, a)| (n.clone(), a.len())).collect();
    let coords: Vec<(usize, usize)> = names
        .iter()
        .enumerate()
        .flat_map(|(t, (_, len))| (0..*len).map(move |e| (t, e)))
        .collect();
    let mut rng = stream(seed, &[]);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let (t, e) = coords[rng.random_range(0..coords.len())];
        let orig = named_params(model)[t].1.iter().nth(e).copied().expect("element");
        let set = |m: &mut P, v: f64| {
            *param_refs_mut(m)[t].iter_mut().nth(e).expect("element") = v;
        };
        set(model, orig + step);
        let up = loss(model);
        set(model, orig - step);
        let down = loss(model);
        set(model, orig);
        let numeric = (up - down) / (2.0 * step);
        let analytic = named_params(grads)[t].1.iter().nth(e).copied().expect("element");
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12);
        samples.push((names[t].0.clone(), e, analytic, numeric, rel));
    }
    GradCheck { samples }
}
