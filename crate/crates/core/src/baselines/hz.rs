use nalgebra::DMatrix;

use super::{calibrate, decide, whiten, BaselineReport, WhitenedSample};
use crate::error::Result;

/// `2^{-1/2} ((2d + 1) n / 4)^{1/(d + 4)}`
pub fn hz_beta(n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    2f64.powf(-0.5) * ((2.0 * d + 1.0) * n / 4.0).powf(1.0 / (d + 4.0))
}

/// `int |Psi_hat(t) - Psi(t)|^2 w(t) dt` with `w` the `N(0, beta I)` density,
/// integrated in closed form:
/// `(1/n^2) sum_jk e^{-beta |Y_j - Y_k|^2 / 2}
///  - (2/n) (1 + beta)^{-d/2} sum_j e^{-beta |Y_j|^2 / (2 (1 + beta))}
///  + (1 + 2 beta)^{-d/2}`.
pub fn hz_statistic(w: &WhitenedSample) -> f64 {
    hz_raw(&w.data, hz_beta(w.data.nrows(), w.dim()))
}

pub(crate) fn hz_raw(x: &DMatrix<f64>, beta: f64) -> f64 {
    let n = x.nrows();
    let d = x.ncols() as f64;
    let nf = n as f64;
    let sq: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let g = x * x.transpose();
    let mut pair = nf; // diagonal terms
    for j in 0..n {
        for k in (j + 1)..n {
            let d2 = (sq[j] + sq[k] - 2.0 * g[(j, k)]).max(0.0);
            pair += 2.0 * (-beta * d2 / 2.0).exp();
        }
    }
    let single: f64 = sq.iter().map(|s| (-beta * s / (2.0 * (1.0 + beta))).exp()).sum();
    pair / (nf * nf) - 2.0 / nf * (1.0 + beta).powf(-d / 2.0) * single + (1.0 + 2.0 * beta).powf(-d / 2.0)
}

/// Henze-Zirkler test with a Monte-Carlo critical value.
pub fn hz_test(x: &DMatrix<f64>, alpha: f64, calibration: usize, seed: u64) -> Result<BaselineReport> {
    let w = whiten(x)?;
    let stat = hz_statistic(&w);
    let null = calibrate(x.nrows(), w.dim(), calibration, seed, |s| Ok(hz_statistic(s)))?;
    decide("hz", stat, &null, alpha, seed, w.dim())
}
