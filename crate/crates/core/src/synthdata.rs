//! Seeded generators for the simulation scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mixture {
    /// Proportions (0.5, 0.5).
    HA1,
    /// Proportions (0.8, 0.2).
    HA2,
}

impl Mixture {
    pub fn first_weight(self) -> f64 {
        match self {
            Mixture::HA1 => 0.5,
            Mixture::HA2 => 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// `lambda_r = 1 / r`
    Poly,
    /// `lambda_r = exp(-0.2 r)`
    Exp,
}

impl Decay {
    pub fn eigenvalues(self, r: usize) -> Vec<f64> {
        (1..=r)
            .map(|k| match self {
                Decay::Poly => 1.0 / k as f64,
                Decay::Exp => (-0.2 * k as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    NullGaussian,
    #[serde(rename = "mixture_HA1")]
    MixtureHA1,
    #[serde(rename = "mixture_HA2")]
    MixtureHA2,
    Lowrank { decay: Decay, rank: usize },
    LowrankNoisy { decay: Decay, rank: usize, rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn generate(&self) -> Result<DMatrix<f64>> {
        let (d, n, seed) = (self.d, self.n, self.seed);
        match &self.kind {
            ScenarioKind::NullGaussian => gen_gaussian(d, n, seed),
            ScenarioKind::MixtureHA1 => gen_mixture(Mixture::HA1, d, n, seed),
            ScenarioKind::MixtureHA2 => gen_mixture(Mixture::HA2, d, n, seed),
            ScenarioKind::Lowrank { decay, rank } => gen_lowrank(*decay, *rank, d, n, seed),
            ScenarioKind::LowrankNoisy { decay, rank, rho } => {
                gen_lowrank_noisy_with(*decay, *rank, d, n, *rho, seed)
            }
        }
    }
}

fn check_shape(d: usize, n: usize) -> Result<()> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and n >= 1, got d = {d}, n = {n}"
        )));
    }
    Ok(())
}

/// Standard normal rows.
pub fn gen_gaussian(d: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_shape(d, n)?;
    let mut rng = substream(seed, domain::SIMULATION, 0);
    Ok(DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal)))
}

/// Second mixture mean `1.5 (1, 1/2, ..., 1/d)`.
pub fn mixture_shift(d: usize) -> DVector<f64> {
    DVector::from_fn(d, |k, _| 1.5 / (k + 1) as f64)
}

/// Shared component standard deviations, `sqrt(0.5) / k`.
pub fn mixture_sd(d: usize) -> DVector<f64> {
    DVector::from_fn(d, |k, _| 0.5_f64.sqrt() / (k + 1) as f64)
}

/// Two-component Gaussian mixture with means `0` and `mixture_shift(d)` and
/// covariance `0.5 diag(1, 1/4, ..., 1/d^2)`.
pub fn gen_mixture(variant: Mixture, d: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(gen_mixture_labeled(variant, d, n, seed)?.0)
}

/// Same draw as [`gen_mixture`], with `true` marking the first component.
pub fn gen_mixture_labeled(
    variant: Mixture,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<bool>)> {
    check_shape(d, n)?;
    let mut rng = substream(seed, domain::SIMULATION, 1);
    let shift = mixture_shift(d);
    let sd = mixture_sd(d);
    let p = variant.first_weight();
    let mut x = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let first = rng.random::<f64>() < p;
        labels.push(first);
        for k in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, k)] = sd[k] * z + if first { 0.0 } else { shift[k] };
        }
    }
    Ok((x, labels))
}

/// Zero-mean rows with covariance `diag(lambda_1, ..., lambda_r, 0, ..., 0)`.
pub fn gen_lowrank(decay: Decay, rank: usize, d: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_shape(d, n)?;
    if rank > d {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} exceeds dimension {d}"
        )));
    }
    let sd: Vec<f64> = decay.eigenvalues(rank).iter().map(|l| l.sqrt()).collect();
    let mut rng = substream(seed, domain::SIMULATION, 2);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for (k, s) in sd.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, k)] = s * z;
        }
    }
    Ok(x)
}

/// Exponential-decay low-rank signal plus i.i.d. `(lambda_r / rho) t_10` noise
/// on every coordinate of every observation.
pub fn gen_lowrank_noisy(rank: usize, d: usize, n: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    gen_lowrank_noisy_with(Decay::Exp, rank, d, n, rho, seed)
}

pub fn gen_lowrank_noisy_with(
    decay: Decay,
    rank: usize,
    d: usize,
    n: usize,
    rho: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "signal-to-noise ratio must be positive, got {rho}"
        )));
    }
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let mut x = gen_lowrank(decay, rank, d, n, seed)?;
    if rho.is_infinite() {
        return Ok(x);
    }
    let scale = decay.eigenvalues(rank)[rank - 1] / rho;
    let t = StudentT::new(10.0).expect("10 degrees of freedom is valid");
    let mut rng = substream(seed, domain::NOISE, 0);
    for v in x.iter_mut() {
        *v += scale * t.sample(&mut rng);
    }
    Ok(x)
}
