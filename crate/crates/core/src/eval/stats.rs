//! Welch two-sample t-test with Bonferroni correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::ensure_arg;
use crate::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_bonferroni: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test of `mean(a) = mean(b)`; `t > 0` when `a` is larger.
pub fn welch_ttest(a: &[f64], b: &[f64], num_comparisons: usize) -> Result<TTest> {
    ensure_arg!(a.len() >= 2 && b.len() >= 2, "each group needs at least 2 samples");
    ensure_arg!(num_comparisons >= 1, "num_comparisons must be >= 1");
    ensure_arg!(
        a.iter().chain(b).all(|v| v.is_finite()),
        "samples must be finite"
    );
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let (t, df, p_raw) = if se2 == 0.0 {
        if ma == mb {
            (0.0, na + nb - 2.0, 1.0)
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            (t, na + nb - 2.0, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| SimError::numeric(format!("t distribution: {e}")))?;
        (t, df, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        t,
        df,
        p_raw,
        p_bonferroni: (p_raw * num_comparisons as f64).min(1.0),
    })
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_groups() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = welch_ttest(&a, &a, 1).unwrap();
        assert_eq!((r.t, r.p_raw), (0.0, 1.0));
        let c = [2.0, 2.0, 2.0];
        assert_eq!(welch_ttest(&c, &c, 3).unwrap().p_bonferroni, 1.0);
    }

    #[test]
    fn textbook_value() {
        // Two-sided Welch test, t and df checked by hand.
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let t = (ma - mb) / (va / 15.0 + vb / 15.0).sqrt();
        let r = welch_ttest(&a, &b, 1).unwrap();
        assert!((r.t - t).abs() < 1e-12);
        assert!((r.t + 2.46).abs() < 0.01, "{}", r.t);
        assert!((r.p_raw - 0.021).abs() < 0.002, "{}", r.p_raw);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let b = [0.5, 1.5, 2.5, 3.9];
        let r = welch_ttest(&a, &b, 4).unwrap();
        assert!((r.p_bonferroni - (4.0 * r.p_raw).min(1.0)).abs() < 1e-15);
        assert_eq!(r.p_bonferroni, 1.0);
    }

    #[test]
    fn separated_groups_agree_with_permutation_test() {
        let mut rng = stream(5, &[]);
        let n0 = Normal::new(0.0, 1.0).unwrap();
        let n5 = Normal::new(5.0, 1.0).unwrap();
        let a: Vec<f64> = (0..30).map(|_| n0.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..30).map(|_| n5.sample(&mut rng)).collect();
        let r = welch_ttest(&a, &b, 1).unwrap();
        assert!(r.p_raw < 1e-6);

        let observed = (mean_var(&a).0 - mean_var(&b).0).abs();
        let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let mut extreme = 0;
        for _ in 0..2000 {
            all.shuffle(&mut rng);
            let d = (mean_var(&all[..30]).0 - mean_var(&all[30..]).0).abs();
            if d >= observed {
                extreme += 1;
            }
        }
        // both reject at 0.001
        assert!((extreme as f64 + 1.0) / 2001.0 < 1e-3);
    }
}
