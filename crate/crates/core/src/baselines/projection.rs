use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{check_budget, decide, BaselineReport};
use crate::error::{Error, Result};
use crate::linalg::GramContext;
use crate::null_models::ResolvedModel;
use crate::rng::{domain, substream};
use crate::stats::{ks_one_sample, normal_cdf};

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy)]
pub struct RpConfig {
    pub projections: usize,
    pub alpha: f64,
    pub calibration: usize,
    pub seed: u64,
}

/// `D_n(h)` against `N(<m_hat, h>, h^T Sigma_hat h)`.
fn ks_along(points: &DMatrix<f64>, h: &DVector<f64>) -> Option<f64> {
    let proj = points * h;
    let n = proj.len() as f64;
    let mean = proj.mean();
    let var = proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = proj.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    if var <= 1e-24 * scale * scale {
        return None;
    }
    let sd = var.sqrt();
    ks_one_sample(proj.as_slice(), |x| normal_cdf(x, mean, sd))
        .ok()
        .map(|r| r.statistic)
}

fn draw_directions(points: &DMatrix<f64>, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let dim = points.ncols();
    let mut rng = substream(seed, domain::PROJECTIONS, 0);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut found = false;
        for _ in 0..MAX_REDRAWS {
            let h = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            if ks_along(points, &h).is_some() {
                out.push(h);
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::InvalidData(format!(
                "projection {k} has zero variance after {MAX_REDRAWS} draws"
            )));
        }
    }
    Ok(out)
}

fn max_statistic(points: &DMatrix<f64>, dirs: &[DVector<f64>]) -> (f64, Vec<f64>) {
    // a direction that degenerates on a simulated sample contributes nothing
    let per: Vec<f64> = dirs.iter().map(|h| ks_along(points, h).unwrap_or(0.0)).collect();
    (per.iter().cloned().fold(0.0, f64::max), per)
}

/// Random-projection Kolmogorov-Smirnov test. Works on the context's frame,
/// so vector and Gram inputs are both accepted.
pub fn rp_test(ctx: &GramContext, config: &RpConfig) -> Result<BaselineReport> {
    if config.projections == 0 {
        return Err(Error::InvalidArgument("need at least one projection".into()));
    }
    if config.calibration == 0 {
        return Err(Error::InvalidArgument("calibration needs at least 1 replication".into()));
    }
    let points = ctx.frame().points();
    let (n, dim) = points.shape();
    check_budget(config.calibration, n, config.projections.min(dim))?;
    let dirs = draw_directions(points, config.projections, config.seed)?;
    let (stat, per) = max_statistic(points, &dirs);
    let fitted = ResolvedModel::empirical(ctx);
    let null: Vec<f64> = (0..config.calibration as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(config.seed, domain::CALIBRATION, b);
            max_statistic(&fitted.sample(n, &mut rng), &dirs).0
        })
        .collect();
    let mut report = decide("rp", stat, &null, config.alpha, config.seed, dim)?;
    report.per_direction = Some(per);
    Ok(report)
}
