//! The kernel normality test: statistic, bootstrap schemes and decision.

pub mod linearize;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{embed_eval_points, embed_norm_sq, outer_kernel_matrix, GaussianParam, OuterKernel};
use crate::error::{Error, Result, ResultExt};
use crate::linalg::{Dataset, GramContext};
use crate::null_models::{check_eigengap, NullModel, ResolvedModel};
use crate::rng::{domain, substream};

pub use linearize::{AnalyticGaussian, Derivative, Direction, FiniteDifference, Linearizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    Fast,
    Slow,
    Both,
}

/// How the fast bootstrap differentiates `theta -> N(T(theta))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linearization {
    /// Closed form for the Gaussian kernel, finite differences otherwise.
    Auto,
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub kernel: OuterKernel,
    pub model: NullModel,
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    pub bootstrap: Bootstrap,
    pub fd_step: f64,
    pub linearization: Linearization,
}

impl TestConfig {
    pub fn new(kernel: OuterKernel, model: NullModel) -> Self {
        Self {
            kernel,
            model,
            alpha: 0.05,
            b: 250,
            seed: 0,
            bootstrap: Bootstrap::Fast,
            fd_step: 1e-5,
            linearization: Linearization::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.b == 0 {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {}",
                self.fd_step
            )));
        }
        if self.linearization == Linearization::Analytic
            && !matches!(self.kernel, OuterKernel::Gaussian { .. })
        {
            return Err(Error::Unsupported(
                "analytic linearization is only available for the gaussian kernel".into(),
            ));
        }
        Ok(())
    }
}

/// Wall-clock breakdown in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_bootstrap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_bootstrap: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub kernel: OuterKernel,
    pub model: String,
    pub timing_ms: Timing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<Vec<f64>>,
    /// Classical bootstrap replications when both schemes ran; the decision uses the fast ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_replications: Option<Vec<f64>>,
}

/// Outer-kernel matrix and empirical fit for one sample, shared by every
/// statistic and bootstrap computed on it.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    ctx: &'a GramContext,
    kernel: OuterKernel,
    kbar: DMatrix<f64>,
    kbar_mean: f64,
}

impl<'a> Prepared<'a> {
    pub fn new(ctx: &'a GramContext, kernel: OuterKernel) -> Result<Self> {
        kernel.validate()?;
        let kbar = outer_kernel_matrix(&kernel, ctx);
        let n = ctx.n() as f64;
        let kbar_mean = kbar.sum() / (n * n);
        if !kbar_mean.is_finite() {
            return Err(Error::Numerical(
                "outer kernel matrix overflowed; rescale the data".into(),
            ));
        }
        Ok(Self {
            ctx,
            kernel,
            kbar,
            kbar_mean,
        })
    }

    pub fn ctx(&self) -> &GramContext {
        self.ctx
    }

    pub fn kernel(&self) -> OuterKernel {
        self.kernel
    }

    pub fn kbar(&self) -> &DMatrix<f64> {
        &self.kbar
    }

    /// `n Delta_hat^2` for an already-fitted parameter.
    pub fn statistic_at(&self, theta: &GaussianParam) -> Result<f64> {
        let n = self.ctx.n() as f64;
        let norm = embed_norm_sq(&self.kernel, theta)?;
        let evals = embed_eval_points(&self.kernel, theta, self.ctx.frame().points())?;
        let value = n * (self.kbar_mean - 2.0 * evals.mean() + norm);
        if !value.is_finite() {
            return Err(Error::Numerical("statistic is not finite".into()));
        }
        Ok(value.max(0.0))
    }

    pub fn statistic(&self, model: &ResolvedModel) -> Result<f64> {
        self.statistic_at(&model.fit(self.ctx)?)
    }
}

/// `n Delta_hat^2` for `model` on `ctx`.
pub fn statistic(ctx: &GramContext, kernel: &OuterKernel, model: &NullModel) -> Result<f64> {
    let resolved = model.resolve(ctx)?;
    Prepared::new(ctx, *kernel)?.statistic(&resolved)
}

/// One fast-bootstrap replication with everything needed to inspect it.
#[derive(Debug, Clone)]
pub struct BootstrapDraw {
    pub weights: DVector<f64>,
    /// `(m_b, Sigma_b)` in kernel-PCA coordinates.
    pub perturbation: Direction,
    pub value: f64,
}

/// Centered standard normal weights for replication `index`.
pub fn bootstrap_weights(n: usize, seed: u64, index: u64) -> DVector<f64> {
    let mut rng = substream(seed, domain::FAST_WEIGHTS, index);
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mean = z.mean();
    z.add_scalar(-mean)
}

/// Weighted bootstrap around a linearization of the estimator map.
#[derive(Debug, Clone)]
pub struct FastBootstrap<'a> {
    prep: &'a Prepared<'a>,
    linearizer: Linearizer,
    seed: u64,
}

impl<'a> FastBootstrap<'a> {
    pub fn new(
        prep: &'a Prepared<'a>,
        model: &ResolvedModel,
        linearization: Linearization,
        fd_step: f64,
        seed: u64,
    ) -> Result<Self> {
        let ctx = prep.ctx;
        if let ResolvedModel::Rank(r) = model {
            check_eigengap(&ctx.covariance(), *r)?;
        }
        let linearizer = match (model, prep.kernel, linearization) {
            (ResolvedModel::Known(_), _, _) => Linearizer::Zero(ctx.n()),
            (_, OuterKernel::Gaussian { sigma }, Linearization::Auto | Linearization::Analytic) => {
                Linearizer::Analytic(Box::new(AnalyticGaussian::new(ctx, sigma, model)?))
            }
            (_, OuterKernel::Exponential, Linearization::Analytic) => {
                return Err(Error::Unsupported(
                    "analytic linearization is only available for the gaussian kernel".into(),
                ))
            }
            _ => Linearizer::FiniteDifference(Box::new(FiniteDifference::new(
                ctx,
                prep.kernel,
                model,
                fd_step,
            )?)),
        };
        Ok(Self {
            prep,
            linearizer,
            seed,
        })
    }

    pub fn linearizer(&self) -> &Linearizer {
        &self.linearizer
    }

    /// `n ||mu_b - D[delta_b]||^2` for given centered weights.
    pub fn replicate_with_weights(&self, w: &DVector<f64>) -> Result<f64> {
        let n = w.len() as f64;
        let d = self.linearizer.derivative(w)?;
        let mu_sq = w.dot(&(&self.prep.kbar * w)) / (n * n);
        let cross = w.dot(&d.evals) / n;
        let value = n * (mu_sq - 2.0 * cross + d.norm_sq);
        if !value.is_finite() {
            return Err(Error::Numerical("bootstrap replication is not finite".into()));
        }
        Ok(value.max(0.0))
    }

    pub fn replicate(&self, index: u64) -> Result<f64> {
        self.replicate_with_weights(&bootstrap_weights(self.prep.ctx.n(), self.seed, index))
    }

    pub fn draw(&self, index: u64) -> Result<BootstrapDraw> {
        let weights = bootstrap_weights(self.prep.ctx.n(), self.seed, index);
        let value = self.replicate_with_weights(&weights)?;
        let perturbation = Direction::from_weights(self.prep.ctx.frame().scores(), &weights);
        Ok(BootstrapDraw {
            weights,
            perturbation,
            value,
        })
    }

    pub fn run(&self, b: usize) -> Result<Vec<f64>> {
        (0..b as u64).into_par_iter().map(|i| self.replicate(i)).collect()
    }
}

/// Classical parametric bootstrap: resample from the fitted Gaussian and refit.
#[derive(Debug, Clone)]
pub struct SlowBootstrap {
    kernel: OuterKernel,
    model: ResolvedModel,
    theta: GaussianParam,
    n: usize,
    seed: u64,
}

impl SlowBootstrap {
    pub fn new(prep: &Prepared<'_>, model: &ResolvedModel, seed: u64) -> Result<Self> {
        Ok(Self {
            kernel: prep.kernel,
            model: model.clone(),
            theta: model.fit(prep.ctx)?,
            n: prep.ctx.n(),
            seed,
        })
    }

    /// Replicate sample `b`, in the frame coordinates of the original data.
    pub fn sample(&self, index: u64) -> DMatrix<f64> {
        let mut rng = substream(self.seed, domain::SLOW_SAMPLE, index);
        self.theta.sample(self.n, &mut rng)
    }

    pub fn replicate(&self, index: u64) -> Result<f64> {
        let ctx = GramContext::from_vectors(self.sample(index))?;
        Prepared::new(&ctx, self.kernel)?.statistic(&self.model)
    }

    pub fn run(&self, b: usize) -> Result<Vec<f64>> {
        (0..b as u64).into_par_iter().map(|i| self.replicate(i)).collect()
    }
}

/// Order statistic at 1-based index `floor((1 - alpha) B)`, clamped to `[1, B]`.
pub fn quantile(replications: &[f64], alpha: f64) -> Result<f64> {
    if replications.is_empty() {
        return Err(Error::InvalidArgument("no bootstrap replications".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if replications.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("replications must be finite".into()));
    }
    let b = replications.len();
    let mut sorted = replications.to_vec();
    sorted.sort_by(f64::total_cmp);
    // the epsilon keeps 0.95 * 100 from flooring to 94
    let idx = (((1.0 - alpha) * b as f64) + 1e-9).floor() as usize;
    Ok(sorted[idx.clamp(1, b) - 1])
}

/// `(1 + #{b : rep_b >= stat}) / (B + 1)`.
pub fn p_value(replications: &[f64], stat: f64) -> f64 {
    let hits = replications.iter().filter(|&&r| r >= stat).count();
    (1 + hits) as f64 / (replications.len() + 1) as f64
}

/// Full test on a dataset.
pub fn run_test(data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let start = Instant::now();
    let ctx = GramContext::new(data).context("building gram context")?;
    let mut report = run_test_on(&ctx, config)?;
    report.timing_ms.total = elapsed_ms(start);
    Ok(report)
}

/// Full test on an existing context.
pub fn run_test_on(ctx: &GramContext, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let prep = Prepared::new(ctx, config.kernel).context("outer kernel")?;
    let model = config.model.resolve(ctx).context("null model")?;
    run_prepared(&prep, &model, &config.model.label(), config)
}

pub(crate) fn run_prepared(
    prep: &Prepared<'_>,
    model: &ResolvedModel,
    label: &str,
    config: &TestConfig,
) -> Result<TestReport> {
    let start = Instant::now();
    let stat = prep.statistic(model).context("statistic")?;
    let mut timing = Timing {
        statistic: elapsed_ms(start),
        ..Timing::default()
    };

    let mut fast = None;
    if matches!(config.bootstrap, Bootstrap::Fast | Bootstrap::Both) {
        let t = Instant::now();
        let boot = FastBootstrap::new(prep, model, config.linearization, config.fd_step, config.seed)
            .context("fast bootstrap")?;
        fast = Some(boot.run(config.b).context("fast bootstrap")?);
        timing.fast_bootstrap = Some(elapsed_ms(t));
    }
    let mut slow = None;
    if matches!(config.bootstrap, Bootstrap::Slow | Bootstrap::Both) {
        let t = Instant::now();
        let boot = SlowBootstrap::new(prep, model, config.seed).context("slow bootstrap")?;
        slow = Some(boot.run(config.b).context("slow bootstrap")?);
        timing.slow_bootstrap = Some(elapsed_ms(t));
    }
    let (reps, slow_reps) = match (fast, slow) {
        (Some(f), s) => (f, s),
        (None, Some(s)) => (s, None),
        (None, None) => unreachable!("at least one bootstrap scheme runs"),
    };
    let q = quantile(&reps, config.alpha)?;
    timing.total = elapsed_ms(start);
    Ok(TestReport {
        statistic: stat,
        quantile: q,
        p_value: p_value(&reps, stat),
        reject: stat > q,
        alpha: config.alpha,
        b: config.b,
        seed: config.seed,
        kernel: config.kernel,
        model: label.to_string(),
        timing_ms: timing,
        replications: Some(reps),
        slow_replications: slow_reps,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_direct_formula() {
        assert_eq!(quantile(&[4.0, 2.0, 1.0, 3.0], 0.25).unwrap(), 3.0);
    }

    #[test]
    fn quantile_clamps_to_minimum() {
        let reps: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        assert_eq!(quantile(&reps, 0.999).unwrap(), 1.0);
    }

    #[test]
    fn quantile_floor_is_exact_at_round_products() {
        let reps: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(quantile(&reps, 0.05).unwrap(), 95.0);
    }

    #[test]
    fn quantile_rejects_empty() {
        assert!(matches!(quantile(&[], 0.05), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn p_value_bounds() {
        assert_eq!(p_value(&[1.0, 2.0, 3.0], 0.5), 1.0);
        assert_eq!(p_value(&[1.0, 2.0, 3.0], 10.0), 0.25);
    }

    #[test]
    fn weights_sum_to_zero() {
        let w = bootstrap_weights(37, 5, 2);
        assert!(w.sum().abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = TestConfig::new(OuterKernel::Gaussian { sigma: 1.0 }, NullModel::Full);
        assert!(c.validate().is_ok());
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        c.alpha = 0.05;
        c.b = 0;
        assert!(c.validate().is_err());
        c.b = 10;
        c.kernel = OuterKernel::Exponential;
        c.linearization = Linearization::Analytic;
        assert!(matches!(c.validate(), Err(Error::Unsupported(_))));
    }
}
