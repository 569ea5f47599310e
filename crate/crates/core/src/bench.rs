//! Fast versus slow bootstrap: wall-clock and distributional agreement.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embeddings::{median_heuristic, OuterKernel};
use crate::error::{Error, Result, ResultExt};
use crate::knt::{FastBootstrap, Linearization, Prepared, SlowBootstrap};
use crate::linalg::GramContext;
use crate::null_models::NullModel;
use crate::rng::{derive_seed, domain};
use crate::stats::ks_two_sample;
use crate::synthdata::gen_gaussian;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub d: usize,
    pub b: usize,
    pub seed: u64,
    /// `None` picks the median heuristic per dataset.
    pub kernel: Option<OuterKernel>,
    pub model: NullModel,
    pub linearization: Linearization,
    pub fd_step: f64,
    pub emit_replications: bool,
}

impl BenchConfig {
    pub fn new(sizes: Vec<usize>, d: usize, b: usize, seed: u64) -> Self {
        Self {
            sizes,
            d,
            b,
            seed,
            kernel: None,
            model: NullModel::Full,
            linearization: Linearization::Auto,
            fd_step: 1e-5,
            emit_replications: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub kernel: OuterKernel,
    pub fast_ms: f64,
    pub slow_ms: f64,
    pub ratio: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_replications: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_replications: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub d: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub model: String,
    pub rows: Vec<BenchRow>,
}

/// Compare both bootstraps on one vector dataset.
pub fn bench_dataset(x: DMatrix<f64>, config: &BenchConfig, seed: u64) -> Result<BenchRow> {
    if config.b == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    let n = x.nrows();
    let ctx = GramContext::from_vectors(x).context("building gram context")?;
    let kernel = match config.kernel {
        Some(k) => k,
        None => OuterKernel::Gaussian {
            sigma: median_heuristic(ctx.gram())?,
        },
    };
    let prep = Prepared::new(&ctx, kernel)?;
    let model = config.model.resolve(&ctx)?;

    let t = Instant::now();
    let fast = FastBootstrap::new(&prep, &model, config.linearization, config.fd_step, seed)?
        .run(config.b)
        .context("fast bootstrap")?;
    let fast_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let slow = SlowBootstrap::new(&prep, &model, seed)?
        .run(config.b)
        .context("slow bootstrap")?;
    let slow_ms = t.elapsed().as_secs_f64() * 1e3;

    let ks = ks_two_sample(&fast, &slow)?;
    Ok(BenchRow {
        n,
        kernel,
        fast_ms,
        slow_ms,
        ratio: slow_ms / fast_ms.max(1e-9),
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
        fast_replications: config.emit_replications.then_some(fast),
        slow_replications: config.emit_replications.then_some(slow),
    })
}

/// Standard Gaussian data at every requested size.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.sizes.is_empty() {
        return Err(Error::InvalidArgument("no sample sizes given".into()));
    }
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let data_seed = derive_seed(config.seed, domain::SIMULATION, n as u64);
        let x = gen_gaussian(config.d, n, data_seed)?;
        rows.push(bench_dataset(x, config, config.seed).context(format!("n = {n}"))?);
    }
    Ok(BenchReport {
        d: config.d,
        b: config.b,
        seed: config.seed,
        model: config.model.label(),
        rows,
    })
}
