//! Property checks shared by the proptest suite and the acceptance runner.
//! Each returns `Err(description)` on violation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use knt::baselines::{expected_norm_shifted, expected_pair_distance, hz_beta, hz_statistic, whiten};
use knt::knt::{quantile, statistic, Direction, FiniteDifference};
use knt::linalg::gram_from_vectors;
use knt::null_models::ResolvedModel;
use knt::{run_test, Dataset, Error, GramContext, NullModel, OuterKernel, TestConfig};

use super::normal_matrix;

pub type Check = Result<(), String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Central differences `D(h)` of `t -> N(T(theta_hat + t delta))(Y_0)` shrink
/// their successive gaps by a factor 4 when `h` halves.
pub fn fd_richardson(x: DMatrix<f64>, kernel: OuterKernel, rng: &mut ChaCha8Rng) -> Check {
    let ctx = GramContext::from_vectors(x).map_err(|e| e.to_string())?;
    let fd = FiniteDifference::new(&ctx, kernel, &ResolvedModel::Full, 1e-5).map_err(|e| e.to_string())?;
    let r = ctx.rank();
    let a = normal_matrix(rng, r, r);
    let dir = Direction {
        mean: DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)),
        cov: (&a + a.transpose()) * 0.05,
    };
    let point = ctx.frame().points().rows(0, 1).into_owned();
    let f = |t: f64| -> Result<f64, String> {
        let theta = fd.perturbed(&dir, t).map_err(|e| e.to_string())?;
        Ok(knt::embeddings::embed_eval_points(&kernel, &theta, &point).map_err(|e| e.to_string())?[0])
    };
    let central = |h: f64| -> Result<f64, String> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let h = 0.08;
    let (d1, d2, d3) = (central(h)?, central(h / 2.0)?, central(h / 4.0)?);
    let (g1, g2) = (d1 - d2, d2 - d3);
    let scale = d3.abs().max(1e-3);
    if g1.abs() < 1e-9 * scale {
        // curvature vanishes along this direction; nothing to measure
        return Ok(());
    }
    let ratio = g1 / g2;
    if (3.5..=4.5).contains(&ratio) {
        Ok(())
    } else {
        Err(format!("Richardson ratio {ratio:.3} (gaps {g1:e}, {g2:e}) for {kernel}"))
    }
}

/// `quantile(., alpha)` is nonincreasing in `alpha` and stays in the sample's range.
pub fn quantile_monotone(reps: &[f64], alphas: &mut [f64]) -> Check {
    alphas.sort_by(f64::total_cmp);
    let lo = reps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = reps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut prev = f64::INFINITY;
    for &a in alphas.iter() {
        let q = quantile(reps, a).map_err(|e| e.to_string())?;
        if q > prev || q < lo || q > hi {
            return Err(format!("quantile({a}) = {q} after {prev}, range [{lo}, {hi}]"));
        }
        prev = q;
    }
    Ok(())
}

/// The statistic ignores the order of the observations, in both input modes.
pub fn permutation_invariant(x: &DMatrix<f64>, perm: &[usize], kernel: OuterKernel, model: &NullModel) -> Check {
    let px = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(perm[i], j)]);
    let s = |m: DMatrix<f64>| -> Result<f64, String> {
        let ctx = GramContext::from_vectors(m).map_err(|e| e.to_string())?;
        statistic(&ctx, &kernel, model).map_err(|e| e.to_string())
    };
    let sg = |m: &DMatrix<f64>| -> Result<f64, String> {
        let ctx = GramContext::from_gram(gram_from_vectors(m).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        statistic(&ctx, &kernel, model).map_err(|e| e.to_string())
    };
    let (a, b) = (s(x.clone())?, s(px.clone())?);
    let (c, d) = (sg(x)?, sg(&px)?);
    let tol = 1e-9;
    if rel(a, b) > tol || rel(c, d) > tol || rel(a, c) > 1e-7 {
        return Err(format!("vectors {a} vs {b}, gram {c} vs {d}"));
    }
    Ok(())
}

/// Identical reports from a 1-thread and a 4-thread pool.
pub fn thread_count_deterministic(x: DMatrix<f64>, config: &TestConfig) -> Check {
    let data = Dataset::from_vectors(x).map_err(|e| e.to_string())?;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_test(&data, config))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run(1)?, run(4)?);
    if a.statistic.to_bits() != b.statistic.to_bits()
        || a.quantile.to_bits() != b.quantile.to_bits()
        || a.replications != b.replications
    {
        return Err(format!(
            "1 thread: ({}, {}), 4 threads: ({}, {})",
            a.statistic, a.quantile, b.statistic, b.quantile
        ));
    }
    Ok(())
}

/// A sample whose covariance has `lambda_1 >= 1` is refused by the exponential kernel.
pub fn exponential_precondition(x: &DMatrix<f64>) -> Check {
    let ctx = GramContext::from_vectors(x.clone()).map_err(|e| e.to_string())?;
    let top = ctx.eigenvalues()[0];
    if top < 1.0 {
        return Err(format!("setup: lambda_1 = {top} < 1"));
    }
    match statistic(&ctx, &OuterKernel::Exponential, &NullModel::Full) {
        Err(e) if matches!(e.root(), Error::Precondition(_)) => Ok(()),
        Err(e) => Err(format!("wrong error kind: {e}")),
        Ok(v) => Err(format!("lambda_1 = {top} accepted, statistic {v}")),
    }
}

/// Composite Simpson rule on `[a, b]` with `m` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// HZ closed form at `d = 1` against `int |Psi_hat - Psi|^2 w` by quadrature,
/// `w` the `N(0, beta)` density.
pub fn hz_quadrature(x: &DVector<f64>) -> Check {
    let w = whiten(&DMatrix::from_column_slice(x.len(), 1, x.as_slice())).map_err(|e| e.to_string())?;
    let y: Vec<f64> = w.data.column(0).iter().cloned().collect();
    let n = y.len() as f64;
    let beta = hz_beta(y.len(), 1);
    let integrand = |t: f64| {
        let re = y.iter().map(|v| (t * v).cos()).sum::<f64>() / n - (-t * t / 2.0).exp();
        let im = y.iter().map(|v| (t * v).sin()).sum::<f64>() / n;
        let weight = (-t * t / (2.0 * beta)).exp() / (2.0 * std::f64::consts::PI * beta).sqrt();
        (re * re + im * im) * weight
    };
    let span = 14.0 * beta.sqrt();
    let oracle = simpson(integrand, -span, span, 20_000);
    let closed = hz_statistic(&w);
    if (closed - oracle).abs() <= 1e-6 {
        Ok(())
    } else {
        Err(format!("closed form {closed} vs quadrature {oracle}"))
    }
}

/// `E ||a - Z||` in closed form for `d = 1` and `d = 3`, and `E ||Z - Z'||`.
pub fn ed_expectations(a: f64) -> Check {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::new(0.0, 1.0).unwrap();
    let phi = (-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let d1 = a * (2.0 * std.cdf(a) - 1.0) + 2.0 * phi;
    let d3 = if a < 1e-8 {
        2.0 * (2.0 / std::f64::consts::PI).sqrt()
    } else {
        // noncentral chi with 3 degrees of freedom
        (2.0 / std::f64::consts::PI).sqrt() * (-a * a / 2.0).exp()
            + (a + 1.0 / a) * statrs::function::erf::erf(a / 2f64.sqrt())
    };
    let got1 = expected_norm_shifted(a * a, 1).map_err(|e| e.to_string())?;
    let got3 = expected_norm_shifted(a * a, 3).map_err(|e| e.to_string())?;
    if rel(got1, d1) > 1e-9 || rel(got3, d3) > 1e-9 {
        return Err(format!("a = {a}: d=1 {got1} vs {d1}, d=3 {got3} vs {d3}"));
    }
    // Z - Z' ~ N(0, 2I): 2/sqrt(pi) at d = 1, sqrt(pi) at d = 2
    let pair1 = 2.0 / std::f64::consts::PI.sqrt();
    let pair2 = std::f64::consts::PI.sqrt();
    if rel(expected_pair_distance(1), pair1) > 1e-12 || rel(expected_pair_distance(2), pair2) > 1e-12 {
        return Err(format!(
            "pair distances {} {} vs {pair1} {pair2}",
            expected_pair_distance(1),
            expected_pair_distance(2)
        ));
    }
    Ok(())
}
