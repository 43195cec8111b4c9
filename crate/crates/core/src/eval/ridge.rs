//! Closed-form ridge regression and the ridge retrieval baseline.

use nalgebra::{DMatrix, SVD};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::datagen::{normalize_window, WindowSource};
use crate::error::ensure_arg;
use crate::{Result, SimError};

/// `Y ≈ (X − x_mean)·W + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: Array2<f64>,
    pub intercept: Array1<f64>,
    pub x_mean: Array1<f64>,
    pub lambda: f64,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn singular(lambda: f64) -> SimError {
    SimError::numeric(format!("ridge system is singular at lambda = {lambda}; use lambda > 0"))
}

/// Solves `A·Z = B` for symmetric `A`: Cholesky when `lambda > 0`, otherwise
/// an SVD solve that tolerates only the null space created by centering.
fn spd_solve(a: DMatrix<f64>, b: DMatrix<f64>, lambda: f64, allowed_rank_loss: usize) -> Result<DMatrix<f64>> {
    if lambda > 0.0 {
        return a.cholesky().map(|c| c.solve(&b)).ok_or_else(|| singular(lambda));
    }
    let n = a.nrows();
    let svd = SVD::new(a, true, true);
    let smax = svd.singular_values.max();
    let eps = smax * n as f64 * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if smax <= 0.0 || rank + allowed_rank_loss < n {
        return Err(singular(lambda));
    }
    svd.solve(&b, eps).map_err(|_| singular(lambda))
}

/// Fits `W = (XcᵀXc + λI)⁻¹ XcᵀYc` on centered data. Uses the equivalent dual
/// form `Xcᵀ(XcXcᵀ + λI)⁻¹Yc` when there are fewer samples than features.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<RidgeModel> {
    let (n, d) = x.dim();
    ensure_arg!(n >= 1, "ridge needs at least one sample");
    ensure_arg!(y.nrows() == n, "X has {n} rows but Y has {}", y.nrows());
    ensure_arg!(lambda >= 0.0 && lambda.is_finite(), "lambda must be finite and >= 0, got {lambda}");
    let x_mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let y_mean = y.mean_axis(Axis(0)).expect("n >= 1");
    let xc = &x - &x_mean;
    let yc = &y - &y_mean;
    let w = if n >= d {
        let mut gram = xc.t().dot(&xc);
        gram.diag_mut().mapv_inplace(|v| v + lambda);
        let rhs = xc.t().dot(&yc);
        // Centered data has rank at most n − 1.
        from_na(&spd_solve(to_na(&gram), to_na(&rhs), lambda, (d + 1).saturating_sub(n))?)
    } else {
        let mut gram = xc.dot(&xc.t());
        gram.diag_mut().mapv_inplace(|v| v + lambda);
        // Centering leaves the all-ones direction in the null space.
        let alpha = from_na(&spd_solve(to_na(&gram), to_na(&yc), lambda, 1)?);
        xc.t().dot(&alpha)
    };
    let weights = w;
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(singular(lambda));
    }
    Ok(RidgeModel {
        weights,
        intercept: y_mean,
        x_mean,
        lambda,
    })
}

impl RidgeModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.x_mean).dot(&self.weights) + &self.intercept
    }
}

/// Flattened z-scored windows, one row per id (vertex-major, frames inner).
pub fn window_features(source: &dyn WindowSource, ids: &[usize]) -> Result<Array2<f64>> {
    ensure_arg!(!ids.is_empty(), "no windows requested");
    let first = source.window(ids[0])?;
    let width = first.len();
    let mut out = Array2::zeros((ids.len(), width));
    for (row, &id) in ids.iter().enumerate() {
        let w = if row == 0 { first.clone() } else { source.window(id)? };
        ensure_arg!(w.len() == width, "window {id} has {} values, expected {width}", w.len());
        let z = normalize_window(w.view());
        for (o, v) in out.row_mut(row).iter_mut().zip(z.iter()) {
            *o = *v as f64;
        }
    }
    Ok(out)
}

/// Rows scaled to unit norm; zero rows stay zero.
pub fn normalize_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    a
}

#[derive(Clone, Debug)]
pub struct RidgeBaseline {
    pub model: RidgeModel,
    /// `(λ, validation score)` for every grid value.
    pub scores: Vec<(f64, f64)>,
}

impl RidgeBaseline {
    pub fn lambda(&self) -> f64 {
        self.model.lambda
    }

    /// Unit-norm predicted embeddings.
    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        normalize_rows(self.model.predict(x))
    }
}

/// Fits one ridge model per grid value and keeps the one with the highest
/// `score` (validation top-1) on `x_val`. With an empty validation set the
/// last 20% of the training rows are held out for selection and the final
/// model is refit on all training rows.
pub fn fit_ridge_baseline<F>(
    x_train: ArrayView2<f64>,
    y_train: ArrayView2<f64>,
    x_val: Option<ArrayView2<f64>>,
    grid: &[f64],
    mut score: F,
) -> Result<RidgeBaseline>
where
    F: FnMut(&Array2<f64>, bool) -> Result<f64>,
{
    ensure_arg!(!grid.is_empty(), "empty lambda grid");
    let n = x_train.nrows();
    let (fit_x, fit_y, sel_x, held_out) = match x_val {
        Some(v) if v.nrows() > 0 => (x_train, y_train, v, false),
        _ => {
            let cut = n - (n / 5).max(1);
            ensure_arg!(cut >= 1, "too few training rows ({n}) to hold out a selection set");
            (
                x_train.slice_move(ndarray::s![..cut, ..]),
                y_train.slice_move(ndarray::s![..cut, ..]),
                x_train.slice_move(ndarray::s![cut.., ..]),
                true,
            )
        }
    };
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, RidgeModel)> = None;
    for &lambda in grid {
        let model = ridge_fit(fit_x, fit_y, lambda)?;
        let s = score(&normalize_rows(model.predict(sel_x)), held_out)?;
        scores.push((lambda, s));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, model));
        }
    }
    let (_, mut model) = best.expect("grid non-empty");
    if held_out {
        model = ridge_fit(x_train, y_train, model.lambda)?;
    }
    Ok(RidgeBaseline { model, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, &[]);
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn normal_equation_residual(x: &Array2<f64>, y: &Array2<f64>, m: &RidgeModel) -> f64 {
        let xc = x - &x.mean_axis(Axis(0)).unwrap();
        let yc = y - &y.mean_axis(Axis(0)).unwrap();
        let lhs = xc.t().dot(&xc).dot(&m.weights) + m.lambda * &m.weights;
        let rhs = xc.t().dot(&yc);
        (lhs - rhs).iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn normal_equations_hold_in_both_forms() {
        for (n, d) in [(60, 12), (15, 40)] {
            let x = random(n, d, 1);
            let y = random(n, 3, 2);
            let m = ridge_fit(x.view(), y.view(), 0.3).unwrap();
            assert!(normal_equation_residual(&x, &y, &m) < 1e-8);
        }
    }

    #[test]
    fn square_system_interpolates_at_zero_lambda() {
        let x = random(8, 8, 3);
        let y = random(8, 2, 4);
        let m = ridge_fit(x.view(), y.view(), 0.0).unwrap();
        let r = (m.predict(x.view()) - &y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(r < 1e-8, "{r}");
    }

    #[test]
    fn rank_deficient_zero_lambda_is_numeric_error() {
        let mut x = random(30, 4, 5);
        let c = x.column(0).to_owned();
        x.column_mut(1).assign(&c);
        let y = random(30, 1, 6);
        assert!(matches!(ridge_fit(x.view(), y.view(), 0.0), Err(SimError::Numeric { .. })));
        assert!(ridge_fit(x.view(), y.view(), 1e-3).is_ok());
    }

    #[test]
    fn strong_penalty_shrinks_weights() {
        let x = random(40, 6, 7);
        let y = random(40, 2, 8);
        let norm = |m: &RidgeModel| m.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small = ridge_fit(x.view(), y.view(), 0.1).unwrap();
        let big = ridge_fit(x.view(), y.view(), 1e9).unwrap();
        assert!(norm(&big) < 1e-6 * norm(&small));
    }

    #[test]
    fn matches_gradient_descent() {
        let x = random(20, 5, 9);
        let y = random(20, 1, 10);
        let lambda = 1.0;
        let m = ridge_fit(x.view(), y.view(), lambda).unwrap();
        let xc = &x - &x.mean_axis(Axis(0)).unwrap();
        let yc = &y - &y.mean_axis(Axis(0)).unwrap();
        let a = xc.t().dot(&xc);
        let b = xc.t().dot(&yc);
        let lmax = a.iter().map(|v| v.abs()).sum::<f64>() + lambda;
        let mut w = Array2::<f64>::zeros((5, 1));
        for _ in 0..200_000 {
            let g = a.dot(&w) + lambda * &w - &b;
            w = w - g / lmax;
        }
        let diff = (&w - &m.weights).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn selection_picks_best_grid_value() {
        let x = random(30, 4, 11);
        let y = random(30, 2, 12);
        let grid = [0.1, 1.0, 10.0, 100.0];
        let mut calls = 0;
        let rigged = [0.2, 0.9, 0.4, 0.1];
        let b = fit_ridge_baseline(x.view(), y.view(), Some(x.view()), &grid, |_, _| {
            calls += 1;
            Ok(rigged[calls - 1])
        })
        .unwrap();
        assert_eq!(b.lambda(), 1.0);
        assert_eq!(b.scores.len(), 4);
    }

    #[test]
    fn empty_validation_holds_out_tail() {
        let x = random(50, 3, 13);
        let y = random(50, 1, 14);
        let mut held = None;
        let mut rows = 0;
        fit_ridge_baseline(x.view(), y.view(), None, &[1.0], |p, h| {
            held = Some(h);
            rows = p.nrows();
            Ok(0.0)
        })
        .unwrap();
        assert_eq!((held, rows), (Some(true), 10));
    }
}
