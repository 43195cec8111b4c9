use ndarray::{Array2, Axis};
use rand::Rng;

use crate::Real;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

/// GeLU, tanh approximation.
#[inline]
pub fn gelu<S: Real>(x: S) -> S {
    let half = S::c(0.5);
    let inner = S::c(GELU_C) * (x + S::c(GELU_K) * x * x * x);
    half * x * (S::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<S: Real>(x: S) -> S {
    let half = S::c(0.5);
    let inner = S::c(GELU_C) * (x + S::c(GELU_K) * x * x * x);
    let t = inner.tanh();
    let dinner = S::c(GELU_C) * (S::one() + S::c(3.0 * GELU_K) * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * dinner
}

/// Row-wise softmax with max subtraction, in place.
pub fn softmax_rows<S: Real>(a: &mut Array2<S>) {
    for mut row in a.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        let inv = S::one() / sum;
        row.mapv_inplace(|x| x * inv);
    }
}

/// Inverted dropout. Returns the scaled keep-mask when anything was dropped.
pub fn dropout<S: Real, R: Rng + ?Sized>(
    x: &mut Array2<S>,
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Option<Array2<S>> {
    if !train || rate <= 0.0 {
        return None;
    }
    let keep = S::c(1.0 / (1.0 - rate));
    let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
        if rng.random::<f64>() < rate {
            S::zero()
        } else {
            keep
        }
    });
    *x *= &mask;
    Some(mask)
}

pub fn dropout_backward<S: Real>(dy: &Array2<S>, mask: &Option<Array2<S>>) -> Array2<S> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_normalise() {
        let mut a = array![[1.0f64, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        softmax_rows(&mut a);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((a[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut a = array![[1.0f32, 2.0]];
        let mut rng = stream(0, &[]);
        assert!(dropout(&mut a, 0.5, false, &mut rng).is_none());
        assert_eq!(a, array![[1.0f32, 2.0]]);
    }
}
