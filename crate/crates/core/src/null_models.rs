//! Estimator maps `T` onto the null family.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embeddings::GaussianParam;
use crate::error::{Error, Result};
use crate::linalg::{DataMode, GramContext, Spectrum};

/// Relative eigengap below which rank truncation is not differentiable.
pub const EIGENGAP_TOL: f64 = 1e-10;

/// How known parameters are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamCoords {
    /// Plain `d`-vectors and `d x d` matrices (vector mode only).
    Explicit,
    /// Mean as `sum_i c_i Y_i`, covariance as `sum_ij C_ij (Y_i - m)(Y_j - m)^T`.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownParams {
    pub coords: ParamCoords,
    pub mean: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl KnownParams {
    pub fn explicit(mean: DVector<f64>, covariance: Option<DMatrix<f64>>) -> Self {
        Self {
            coords: ParamCoords::Explicit,
            mean,
            covariance,
        }
    }

    pub fn sample(mean: DVector<f64>, covariance: Option<DMatrix<f64>>) -> Self {
        Self {
            coords: ParamCoords::Sample,
            mean,
            covariance,
        }
    }

    fn resolve_mean(&self, ctx: &GramContext) -> Result<DVector<f64>> {
        match self.coords {
            ParamCoords::Explicit => {
                require_vector_mode(ctx)?;
                let d = ctx.frame().dim();
                if self.mean.len() != d {
                    return Err(Error::InvalidArgument(format!(
                        "known mean has length {} but data has dimension {d}",
                        self.mean.len()
                    )));
                }
                Ok(self.mean.clone())
            }
            ParamCoords::Sample => ctx.point_from_coefficients(&self.mean),
        }
    }

    fn resolve_covariance(&self, ctx: &GramContext) -> Result<Spectrum> {
        let cov = self.covariance.as_ref().ok_or_else(|| {
            Error::InvalidArgument("known model needs a covariance".into())
        })?;
        match self.coords {
            ParamCoords::Explicit => {
                require_vector_mode(ctx)?;
                let d = ctx.frame().dim();
                if cov.nrows() != d || cov.ncols() != d {
                    return Err(Error::InvalidArgument(format!(
                        "known covariance is {}x{} but data has dimension {d}",
                        cov.nrows(),
                        cov.ncols()
                    )));
                }
                let asym = (cov - cov.transpose()).amax();
                if asym > 1e-10 * cov.amax().max(1.0) {
                    return Err(Error::InvalidArgument(
                        "known covariance is not symmetric".into(),
                    ));
                }
                Spectrum::from_matrix(cov)
            }
            ParamCoords::Sample => ctx.covariance_from_coefficients(cov),
        }
    }
}

fn require_vector_mode(ctx: &GramContext) -> Result<()> {
    if ctx.mode() == DataMode::Gram {
        return Err(Error::Representation(
            "gram-mode data carries no coordinates; give known parameters as sample coefficients"
                .into(),
        ));
    }
    Ok(())
}

/// Which Gaussian family the test targets.
#[derive(Debug, Clone, PartialEq)]
pub enum NullModel {
    /// Unknown mean and covariance.
    Full,
    /// Fully specified `N(m0, Sigma0)`.
    Known(KnownParams),
    /// Known mean, covariance estimated.
    KnownMean(KnownParams),
    /// Covariance of rank `r`.
    Rank(usize),
}

impl NullModel {
    /// Bind the model to a context, turning known parameters into frame coordinates.
    pub fn resolve(&self, ctx: &GramContext) -> Result<ResolvedModel> {
        Ok(match self {
            NullModel::Full => ResolvedModel::Full,
            NullModel::Known(p) => {
                let theta = GaussianParam::new(p.resolve_mean(ctx)?, p.resolve_covariance(ctx)?)?;
                ResolvedModel::Known(theta)
            }
            NullModel::KnownMean(p) => ResolvedModel::KnownMean(p.resolve_mean(ctx)?),
            NullModel::Rank(r) => {
                let n = ctx.n();
                if *r < 1 || *r > n - 1 {
                    return Err(Error::InvalidArgument(format!(
                        "rank must lie in 1..={}, got {r}",
                        n - 1
                    )));
                }
                ResolvedModel::Rank(*r)
            }
        })
    }

    /// Fit the model on a context: `T(m_hat, Sigma_hat)`.
    pub fn fit(&self, ctx: &GramContext) -> Result<GaussianParam> {
        self.resolve(ctx)?.fit(ctx)
    }

    pub fn label(&self) -> String {
        match self {
            NullModel::Full => "full".into(),
            NullModel::Known(_) => "known".into(),
            NullModel::KnownMean(_) => "known-mean".into(),
            NullModel::Rank(r) => format!("rank:{r}"),
        }
    }
}

/// A null model whose known parameters live in a particular frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedModel {
    Full,
    Known(GaussianParam),
    KnownMean(DVector<f64>),
    Rank(usize),
}

impl ResolvedModel {
    /// `(m_hat, Sigma_hat)`.
    pub fn empirical(ctx: &GramContext) -> GaussianParam {
        GaussianParam::new(ctx.frame().mean().clone(), ctx.covariance())
            .expect("frame mean and covariance share a dimension")
    }

    pub fn fit(&self, ctx: &GramContext) -> Result<GaussianParam> {
        let full = Self::empirical(ctx);
        match self {
            ResolvedModel::Rank(r) => {
                if full.cov().rank() < *r {
                    return Err(Error::RankDeficient(format!(
                        "rank {r} model needs {r} positive eigenvalues, data has {}",
                        full.cov().rank()
                    )));
                }
                GaussianParam::new(full.mean().clone(), full.cov().truncate(*r))
            }
            _ => self.apply(&full),
        }
    }

    /// The estimator map `T`.
    pub fn apply(&self, theta: &GaussianParam) -> Result<GaussianParam> {
        match self {
            ResolvedModel::Full => Ok(theta.clone()),
            ResolvedModel::Known(t0) => {
                if t0.dim() != theta.dim() {
                    return Err(Error::InvalidArgument(format!(
                        "known parameter has dimension {} but the argument has {}",
                        t0.dim(),
                        theta.dim()
                    )));
                }
                Ok(t0.clone())
            }
            ResolvedModel::KnownMean(m0) => GaussianParam::new(m0.clone(), theta.cov().clone()),
            ResolvedModel::Rank(r) => {
                check_eigengap(theta.cov(), *r)?;
                GaussianParam::new(theta.mean().clone(), theta.cov().truncate(*r))
            }
        }
    }

    /// `T` is the constant map.
    pub fn is_constant(&self) -> bool {
        matches!(self, ResolvedModel::Known(_))
    }
}

/// Fails when `lambda_r - lambda_{r+1}` is too small for truncation to be differentiable.
pub fn check_eigengap(cov: &Spectrum, r: usize) -> Result<()> {
    let vals = cov.values();
    if vals.len() <= r || r == 0 {
        return Ok(());
    }
    let top = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gap = vals[r - 1] - vals[r];
    if gap < EIGENGAP_TOL * top {
        return Err(Error::Nondifferentiable(format!(
            "eigengap lambda_{r} - lambda_{} = {gap:e} is below {EIGENGAP_TOL:e} * lambda_1",
            r + 1
        )));
    }
    Ok(())
}
