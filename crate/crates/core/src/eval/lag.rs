//! Stimulus-to-surface encoding models over a range of hemodynamic lags.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::ridge::ridge_fit;
use super::stats::pearson;
use crate::datagen::World;
use crate::error::ensure_arg;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagResult {
    pub lag: usize,
    /// Mean over included vertices of the subject-averaged correlation.
    pub mean_r: f64,
    /// Subject-averaged correlation per vertex; NaN for excluded vertices.
    pub per_vertex: Vec<f64>,
    /// Vertices whose correlation was undefined for some subject.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagScan {
    pub results: Vec<LagResult>,
    pub best_lag: usize,
}

/// Per-second stimulus features of one movie: the token-mean video embedding
/// of the clip playing at that second, zero during rest.
fn stimulus_features(world: &World, movie: usize) -> Array2<f64> {
    let c = &world.config;
    let secs = c.series_seconds();
    let mut x = Array2::zeros((secs, c.video_dim));
    for t in 0..c.clips_per_movie * c.clip_seconds {
        let seq = world.video_of(movie, t / c.clip_seconds);
        let pooled = seq.mean_axis(Axis(0)).expect("non-empty sequence");
        x.row_mut(t).assign(&pooled.mapv(f64::from));
    }
    x
}

/// For every lag, fits per subject a ridge model from stimulus features at
/// second `t` to all vertex values at `t + lag` on every movie but the last,
/// then correlates predictions with the held-out last movie vertex by vertex.
pub fn lag_scan(world: &World, lags: &[usize], lambda: f64) -> Result<LagScan> {
    let c = &world.config;
    ensure_arg!(!lags.is_empty(), "no lags given");
    ensure_arg!(c.num_movies >= 2, "lag scan needs at least 2 movies to hold one out");
    let secs = c.series_seconds();
    let max_lag = *lags.iter().max().expect("non-empty");
    ensure_arg!(
        max_lag + 2 < secs,
        "series of {secs} s too short for lag {max_lag}"
    );
    let test_movie = c.num_movies - 1;
    let features: Vec<Array2<f64>> = (0..c.num_movies).map(|m| stimulus_features(world, m)).collect();
    let v = c.num_vertices();

    let mut results = Vec::with_capacity(lags.len());
    for &lag in lags {
        let n = secs - lag;
        let mut sum = vec![0.0; v];
        let mut undefined = vec![false; v];
        for s in 0..c.num_subjects {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for m in 0..test_movie {
                let series = world.series_of(s, m).values.mapv(f64::from);
                xs.push(features[m].slice(ndarray::s![..n, ..]).to_owned());
                ys.push(series.slice(ndarray::s![.., lag..]).t().to_owned());
            }
            let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
            let yv: Vec<_> = ys.iter().map(|a| a.view()).collect();
            let x = ndarray::concatenate(Axis(0), &xv).expect("matching widths");
            let y = ndarray::concatenate(Axis(0), &yv).expect("matching widths");
            let model = ridge_fit(x.view(), y.view(), lambda)?;
            let pred = model.predict(features[test_movie].slice(ndarray::s![..n, ..]));
            let truth = world.series_of(s, test_movie).values.mapv(f64::from);
            for vert in 0..v {
                let p: Vec<f64> = pred.column(vert).to_vec();
                let t: Vec<f64> = truth.row(vert).iter().skip(lag).copied().collect();
                match pearson(&p, &t) {
                    Some(r) => sum[vert] += r,
                    None => undefined[vert] = true,
                }
            }
        }
        let per_vertex: Vec<f64> = sum
            .iter()
            .zip(&undefined)
            .map(|(&r, &u)| if u { f64::NAN } else { r / c.num_subjects as f64 })
            .collect();
        let included: Vec<f64> = per_vertex.iter().copied().filter(|r| r.is_finite()).collect();
        let excluded = v - included.len();
        let mean_r = if included.is_empty() {
            f64::NAN
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        };
        log::info!("lag {lag}: mean r {mean_r:.4}, {excluded} vertices excluded");
        results.push(LagResult {
            lag,
            mean_r,
            per_vertex,
            excluded,
        });
    }
    let best_lag = results
        .iter()
        .filter(|r| r.mean_r.is_finite())
        .max_by(|a, b| a.mean_r.total_cmp(&b.mean_r).then(b.lag.cmp(&a.lag)))
        .map(|r| r.lag)
        .unwrap_or(lags[0]);
    Ok(LagScan { results, best_lag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_world, WorldConfig};

    fn small_world(lag: usize) -> World {
        make_world(&WorldConfig {
            num_subjects: 2,
            num_movies: 3,
            clips_per_movie: 20,
            mesh_level: 2,
            lag_seconds: lag,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn recovers_generator_lag() {
        let scan = lag_scan(&small_world(6), &[1, 3, 6, 10], 1.0).unwrap();
        assert_eq!(scan.best_lag, 6);
        assert_eq!(scan.results[0].per_vertex.len(), 162);
    }

    #[test]
    fn constant_series_are_excluded() {
        let mut w = small_world(3);
        for s in &mut w.series {
            s.values.row_mut(0).fill(1.5);
        }
        let scan = lag_scan(&w, &[3], 1.0).unwrap();
        assert_eq!(scan.results[0].excluded, 1);
        assert!(scan.results[0].per_vertex[0].is_nan());
        assert_eq!(scan.best_lag, 3);
    }
}
