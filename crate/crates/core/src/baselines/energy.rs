use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use super::{calibrate, decide, whiten, BaselineReport, WhitenedSample};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};

const MC_FALLBACK_DRAWS: usize = 1_000_000;

/// `E ||Z|| = sqrt(2) Gamma((d+1)/2) / Gamma(d/2)` for `Z ~ N(0, I_d)`.
fn chi_mean(d: usize) -> f64 {
    let d = d as f64;
    2f64.sqrt() * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// `E ||Z - Z'|| = 2 Gamma((d+1)/2) / Gamma(d/2)`.
pub fn expected_pair_distance(d: usize) -> f64 {
    2f64.sqrt() * chi_mean(d)
}

/// `1F1(b + 1/2; b; y)` by its power series, for `y >= 0`.
fn kummer_series(b: f64, y: f64) -> Option<f64> {
    let a = b + 0.5;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..100_000 {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * y / (kf + 1.0);
        sum += term;
        if !sum.is_finite() {
            return None;
        }
        if term < 1e-17 * sum && kf > y {
            return Some(sum);
        }
    }
    None
}

/// `E ||a - Z||` for `Z ~ N(0, I_d)` with `||a||^2 = a_sq`:
/// `sqrt(2) Gamma((d+1)/2)/Gamma(d/2) 1F1(-1/2; d/2; -a_sq/2)`, evaluated through
/// Kummer's transformation `e^{-y} 1F1(d/2 + 1/2; d/2; y)`, `y = a_sq / 2`.
/// Returns `None` when the series does not converge in floating point.
pub fn expected_norm_shifted_series(a_sq: f64, d: usize) -> Option<f64> {
    let y = a_sq / 2.0;
    if y > 600.0 {
        return None;
    }
    kummer_series(d as f64 / 2.0, y).map(|s| chi_mean(d) * (-y).exp() * s)
}

/// `E ||a - Z||`, falling back to a seeded Monte-Carlo estimate with 10^6 draws.
pub fn expected_norm_shifted(a_sq: f64, d: usize) -> Result<f64> {
    if !(a_sq >= 0.0) || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need a nonnegative squared norm and d >= 1, got {a_sq}, {d}"
        )));
    }
    if let Some(v) = expected_norm_shifted_series(a_sq, d) {
        return Ok(v);
    }
    log::warn!("energy distance series did not converge for |a|^2 = {a_sq}, d = {d}; using Monte Carlo");
    Ok(expected_norm_mc(a_sq, d, MC_FALLBACK_DRAWS, 0))
}

pub(crate) fn expected_norm_mc(a_sq: f64, d: usize, draws: usize, seed: u64) -> f64 {
    let a = a_sq.sqrt();
    let mut rng = substream(seed, domain::MONTE_CARLO, d as u64);
    let mut sum = 0.0;
    for _ in 0..draws {
        let mut s = 0.0;
        for k in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let c = if k == 0 { a - z } else { z };
            s += c * c;
        }
        sum += s.sqrt();
    }
    sum / draws as f64
}

/// `(2/n) sum E||Y_i - Z|| - E||Z - Z'|| - (1/n^2) sum_ij ||Y_i - Y_j||`.
pub fn ed_statistic(w: &WhitenedSample) -> Result<f64> {
    let x = &w.data;
    let n = x.nrows();
    let nf = n as f64;
    let d = w.dim();
    let sq: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
    let mut cross = 0.0;
    for s in &sq {
        cross += expected_norm_shifted(*s, d)?;
    }
    Ok(2.0 * cross / nf - expected_pair_distance(d) - pair_mean(x))
}

/// `(1/n^2) sum_ij ||Y_i - Y_j||`.
pub(crate) fn pair_mean(x: &DMatrix<f64>) -> f64 {
    let (n, d) = x.shape();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let c = x[(i, k)] - x[(j, k)];
                s += c * c;
            }
            total += 2.0 * s.sqrt();
        }
    }
    total / (n * n) as f64
}

/// Energy-distance test with a Monte-Carlo critical value.
pub fn ed_test(x: &DMatrix<f64>, alpha: f64, calibration: usize, seed: u64) -> Result<BaselineReport> {
    let w = whiten(x)?;
    let stat = ed_statistic(&w)?;
    let null = calibrate(x.nrows(), w.dim(), calibration, seed, ed_statistic)?;
    decide("ed", stat, &null, alpha, seed, w.dim())
}
