//! Reference normality tests: Henze-Zirkler, energy distance and random
//! projections. Critical values come from seeded Monte-Carlo calibration
//! under the fitted Gaussian.

mod energy;
mod hz;
mod projection;

pub use energy::{ed_statistic, ed_test, expected_norm_shifted, expected_pair_distance};
pub use hz::{hz_beta, hz_statistic, hz_test};
pub use projection::{rp_test, RpConfig};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knt::{p_value, quantile};
use crate::linalg::sym_eigen;
use crate::rng::{domain, substream};

/// Largest `replications * n^2 * d` a calibration may cost.
pub const CALIBRATION_BUDGET: f64 = 2e11;

/// Data centered and rotated/scaled to identity empirical covariance (1/n
/// convention) on the covariance's positive-definite subspace.
#[derive(Debug, Clone)]
pub struct WhitenedSample {
    pub data: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// `d x d'` map: `data = (x - mean) * transform`.
    pub transform: DMatrix<f64>,
}

impl WhitenedSample {
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

pub fn whiten(x: &DMatrix<f64>) -> Result<WhitenedSample> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidData("need at least 2 observations to whiten".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite entries".into()));
    }
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = xc.tr_mul(&xc) / n as f64;
    let (vals, vecs) = sym_eigen(&cov)?;
    let top = vals.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::InvalidData("data has zero variance; cannot whiten".into()));
    }
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-10 * top).collect();
    let transform = DMatrix::from_fn(x.ncols(), keep.len(), |r, c| {
        vecs[(r, keep[c])] / vals[keep[c]].sqrt()
    });
    Ok(WhitenedSample {
        data: xc * &transform,
        mean,
        transform,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub method: String,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub calibration: usize,
    pub seed: u64,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_direction: Option<Vec<f64>>,
}

pub(crate) fn check_budget(replications: usize, n: usize, d: usize) -> Result<()> {
    let cost = replications as f64 * (n as f64).powi(2) * d as f64;
    if cost > CALIBRATION_BUDGET {
        return Err(Error::Unsupported(format!(
            "Monte-Carlo calibration with {replications} replications at n = {n}, d = {d} exceeds the budget"
        )));
    }
    Ok(())
}

/// Null draws of a whitened-data statistic. Whitening is affine invariant, so
/// sampling `N(0, I_d)` is the same as sampling the fitted `N(m_hat, Sigma_hat)`.
pub(crate) fn calibrate<F>(n: usize, d: usize, replications: usize, seed: u64, stat: F) -> Result<Vec<f64>>
where
    F: Fn(&WhitenedSample) -> Result<f64> + Sync,
{
    if replications == 0 {
        return Err(Error::InvalidArgument("calibration needs at least 1 replication".into()));
    }
    check_budget(replications, n, d)?;
    (0..replications as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, domain::CALIBRATION, b);
            let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            stat(&whiten(&z)?)
        })
        .collect()
}

pub(crate) fn decide(
    method: &str,
    stat: f64,
    null: &[f64],
    alpha: f64,
    seed: u64,
    dimension: usize,
) -> Result<BaselineReport> {
    let q = quantile(null, alpha)?;
    Ok(BaselineReport {
        method: method.to_string(),
        statistic: stat,
        critical_value: q,
        p_value: p_value(null, stat),
        reject: stat > q,
        alpha,
        calibration: null.len(),
        seed,
        dimension,
        per_direction: None,
    })
}
