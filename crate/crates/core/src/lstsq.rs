//! Shared linear least-squares core: SVD-based solve with optional ridge
//! penalty, rank detection, and generalized cross-validation for the
//! penalty weight.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug)]
pub(crate) struct LsSolution {
    pub coeffs: DVector<f64>,
    #[allow(dead_code)]
    pub rank: usize,
}

/// Minimizes `||X theta - y||^2 + ridge * ||theta||^2`.
///
/// With `ridge == 0` a rank-deficient `X` is a hard error: surfacing
/// collinear regressors beats silently picking a pseudo-inverse solution.
pub(crate) fn solve(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<LsSolution> {
    debug_assert_eq!(x.nrows(), y.len());
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;

    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let tol = sigma_max * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    let rank = sigma.iter().filter(|&&s| s > tol).count();
    if ridge == 0.0 && rank < x.ncols() {
        return Err(Error::RankDeficient {
            rank,
            cols: x.ncols(),
        });
    }

    // theta = V diag(sigma_i / (sigma_i^2 + ridge)) U^T y
    let c = u.transpose() * y;
    let mut scaled = DVector::zeros(sigma.len());
    for i in 0..sigma.len() {
        let s = sigma[i];
        let f = if s > tol || ridge > 0.0 {
            s / (s * s + ridge)
        } else {
            0.0
        };
        scaled[i] = f * c[i];
    }
    let coeffs = v_t.transpose() * scaled;
    Ok(LsSolution { coeffs, rank })
}

/// Log-spaced ridge grid spanning `1e-4..=1e2`.
pub(crate) fn default_gcv_grid() -> Vec<f64> {
    let points = 25;
    (0..points)
        .map(|i| 10f64.powf(-4.0 + 6.0 * i as f64 / (points - 1) as f64))
        .collect()
}

/// Picks the grid value minimizing the generalized cross-validation score
/// `n * RSS(lambda) / (n - tr H(lambda))^2`.
pub(crate) fn gcv_lambda(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let svd = x.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let sigma = &svd.singular_values;
    let c = u.transpose() * y;
    let y_norm2 = y.norm_squared();

    let mut best = (f64::INFINITY, grid.first().copied().unwrap_or(0.0));
    for &lambda in grid {
        let mut trace_h = 0.0;
        let mut explained = 0.0;
        for i in 0..sigma.len() {
            let s2 = sigma[i] * sigma[i];
            let d = s2 / (s2 + lambda);
            trace_h += d;
            explained += c[i] * c[i] * (2.0 * d - d * d);
        }
        let rss = (y_norm2 - explained).max(0.0);
        let denom = n - trace_h;
        if denom <= 0.0 {
            continue;
        }
        let score = n * rss / (denom * denom);
        if score < best.0 {
            best = (score, lambda);
        }
    }
    best.1
}
