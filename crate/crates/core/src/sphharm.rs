//! Real orthonormal spherical harmonics, used to build band-limited fields.

use ndarray::Array2;

use crate::icosphere::Vec3;

/// Number of real harmonics of degree `0..=max_degree`.
pub const fn basis_size(max_degree: usize) -> usize {
    (max_degree + 1) * (max_degree + 1)
}

/// Column index of harmonic `(l, m)` with `-l <= m <= l`.
pub const fn index(l: usize, m: isize) -> usize {
    ((l * l + l) as isize + m) as usize
}

/// Evaluates every real harmonic up to `max_degree` at each point.
///
/// Returns a `points × (max_degree + 1)²` matrix, column `l² + l + m`.
pub fn real_harmonics(points: &[Vec3], max_degree: usize) -> Array2<f64> {
    let lmax = max_degree;
    let mut out = Array2::zeros((points.len(), basis_size(lmax)));
    // (l - m)! / (l + m)! normalisers
    let norm = |l: usize, m: usize| -> f64 {
        let mut ratio = 1.0;
        for k in (l - m + 1)..=(l + m) {
            ratio /= k as f64;
        }
        ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
    };
    let mut p = vec![0.0f64; (lmax + 1) * (lmax + 1)];
    for (row, v) in points.iter().enumerate() {
        let x = v[2].clamp(-1.0, 1.0);
        let s = (1.0 - x * x).max(0.0).sqrt();
        let phi = v[1].atan2(v[0]);
        // associated Legendre P_l^m(x), Condon-Shortley phase included
        let at = |l: usize, m: usize| l * (lmax + 1) + m;
        let mut pmm = 1.0;
        for m in 0..=lmax {
            if m > 0 {
                pmm *= -((2 * m - 1) as f64) * s;
            }
            p[at(m, m)] = pmm;
            if m < lmax {
                p[at(m + 1, m)] = x * (2 * m + 1) as f64 * pmm;
            }
            for l in (m + 2)..=lmax {
                p[at(l, m)] = ((2 * l - 1) as f64 * x * p[at(l - 1, m)]
                    - (l + m - 1) as f64 * p[at(l - 2, m)])
                    / (l - m) as f64;
            }
        }
        for l in 0..=lmax {
            out[(row, index(l, 0))] = norm(l, 0) * p[at(l, 0)];
            for m in 1..=l {
                let k = std::f64::consts::SQRT_2 * norm(l, m) * p[at(l, m)];
                out[(row, index(l, m as isize))] = k * (m as f64 * phi).cos();
                out[(row, index(l, -(m as isize)))] = k * (m as f64 * phi).sin();
            }
        }
    }
    out
}
