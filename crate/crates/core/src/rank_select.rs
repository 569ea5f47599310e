//! Sequential selection of the covariance rank.
//!
//! Test `H_{0,r}: rank(Sigma) = r` for `r = 1, 2, ...` and stop at the first
//! acceptance. All tests share one Gram context and one outer-kernel matrix.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embeddings::OuterKernel;
use crate::error::{Error, Result, ResultExt};
use crate::knt::{run_prepared, Bootstrap, Linearization, Prepared, TestConfig};
use crate::linalg::{Dataset, GramContext};
use crate::null_models::NullModel;
use crate::rng::{derive_seed, domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AlphaMode {
    Fixed { alpha: f64 },
    /// `alpha_n = exp(-scale * n^exponent)`
    Schedule { scale: f64, exponent: f64 },
}

impl AlphaMode {
    pub fn schedule() -> Self {
        AlphaMode::Schedule {
            scale: 0.125,
            exponent: 0.45,
        }
    }

    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            AlphaMode::Fixed { alpha } => alpha,
            AlphaMode::Schedule { scale, exponent } => (-scale * (n as f64).powf(exponent)).exp(),
        }
    }
}

/// `exp(-0.125 n^0.45)`
pub fn alpha_schedule(n: usize) -> f64 {
    AlphaMode::schedule().alpha(n)
}

#[derive(Debug, Clone)]
pub struct RankSelectConfig {
    pub r_max: usize,
    pub alpha_mode: AlphaMode,
    pub kernel: OuterKernel,
    pub b: usize,
    pub seed: u64,
    pub bootstrap: Bootstrap,
    pub linearization: Linearization,
    pub fd_step: f64,
}

impl RankSelectConfig {
    pub fn new(kernel: OuterKernel, r_max: usize) -> Self {
        Self {
            r_max,
            alpha_mode: AlphaMode::schedule(),
            kernel,
            b: 250,
            seed: 0,
            bootstrap: Bootstrap::Fast,
            linearization: Linearization::Auto,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStep {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub reject: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelectReport {
    pub r_hat: usize,
    pub r_max: usize,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub kernel: OuterKernel,
    pub steps: Vec<RankStep>,
    pub timing_ms: f64,
}

pub fn select_rank(data: &Dataset, config: &RankSelectConfig) -> Result<RankSelectReport> {
    let ctx = GramContext::new(data).context("building gram context")?;
    select_rank_on(&ctx, config)
}

pub fn select_rank_on(ctx: &GramContext, config: &RankSelectConfig) -> Result<RankSelectReport> {
    let start = Instant::now();
    let n = ctx.n();
    if config.r_max < 1 || config.r_max > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "r_max must lie in 1..={}, got {}",
            n - 1,
            config.r_max
        )));
    }
    let alpha = config.alpha_mode.alpha(n);
    let prep = Prepared::new(ctx, config.kernel).context("outer kernel")?;
    let mut steps = Vec::new();
    let mut r_hat = config.r_max;
    for r in 1..=config.r_max {
        let model = NullModel::Rank(r);
        let test = TestConfig {
            kernel: config.kernel,
            model: model.clone(),
            alpha,
            b: config.b,
            seed: derive_seed(config.seed, domain::RANK, r as u64),
            bootstrap: config.bootstrap,
            fd_step: config.fd_step,
            linearization: config.linearization,
        };
        let outcome = test
            .validate()
            .and_then(|_| model.resolve(ctx))
            .and_then(|m| run_prepared(&prep, &m, &model.label(), &test));
        let step = match outcome {
            Ok(report) => RankStep {
                rank: r,
                alpha,
                statistic: Some(report.statistic),
                quantile: Some(report.quantile),
                p_value: Some(report.p_value),
                reject: report.reject,
                error: None,
            },
            Err(e) => {
                log::warn!("rank {r} test failed, counting it as rejected: {e}");
                RankStep {
                    rank: r,
                    alpha,
                    statistic: None,
                    quantile: None,
                    p_value: None,
                    reject: true,
                    error: Some(e.to_string()),
                }
            }
        };
        let accepted = !step.reject;
        steps.push(step);
        if accepted {
            r_hat = r;
            break;
        }
    }
    Ok(RankSelectReport {
        r_hat,
        r_max: config.r_max,
        alpha,
        b: config.b,
        seed: config.seed,
        kernel: config.kernel,
        steps,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Smallest level at which every rank below the true one would be rejected:
/// `max_r P_Z(stat_r <= Z_r)` over the supplied null samples.
pub fn oracle_alpha(null_samples: &[Vec<f64>], observed: &[f64]) -> Result<f64> {
    if null_samples.len() != observed.len() {
        return Err(Error::InvalidArgument(format!(
            "{} null samples for {} observed statistics",
            null_samples.len(),
            observed.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (sample, &obs) in null_samples.iter().zip(observed) {
        if sample.is_empty() {
            return Err(Error::InvalidArgument("empty null sample".into()));
        }
        let tail = sample.iter().filter(|&&z| obs <= z).count() as f64 / sample.len() as f64;
        worst = worst.max(tail);
    }
    Ok(worst)
}
