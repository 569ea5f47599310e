//! Monte-Carlo oracles for the Gaussian embeddings and the dense statistic oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use knt::embeddings::{embed_cross_inner, embed_eval_points, embed_norm_sq};
use knt::knt::statistic;
use knt::linalg::gram_from_vectors;
use knt::{GaussianParam, GramContext, NullModel, OuterKernel};

use super::{dense_statistic, gaussian_rows, normal_matrix, rng};

#[derive(Debug, Clone)]
pub struct McCheck {
    pub label: String,
    pub closed: f64,
    pub estimate: f64,
    pub se: f64,
}

impl McCheck {
    pub fn z(&self) -> f64 {
        (self.closed - self.estimate).abs() / self.se.max(1e-300)
    }
}

fn kbar(kernel: &OuterKernel, x: &[f64], y: &[f64]) -> f64 {
    match *kernel {
        OuterKernel::Gaussian { sigma } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-sigma * d2).exp()
        }
        OuterKernel::Exponential => x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().exp(),
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, draws: usize) -> (f64, f64) {
    let m = sum / draws as f64;
    let var = (sum_sq / draws as f64 - m * m).max(0.0) * draws as f64 / (draws as f64 - 1.0);
    (m, (var / draws as f64).sqrt())
}

/// Random `(m, L)` with `L L^T` having top eigenvalue `top`; rank `rank`.
fn random_factor(r: &mut rand_chacha::ChaCha8Rng, d: usize, rank: usize, top: f64, mean_scale: f64) -> (DVector<f64>, DMatrix<f64>) {
    let l = normal_matrix(r, d, rank);
    let cov = &l * l.transpose();
    let lmax = cov.symmetric_eigenvalues().max();
    let l = l * (top / lmax).sqrt();
    let m = DVector::from_fn(d, |_, _| r.random_range(-mean_scale..mean_scale));
    (m, l)
}

/// One randomized embedding case: `embed_eval_points`, `embed_norm_sq` and
/// `embed_cross_inner` against sample means over `draws` draws.
pub fn embedding_case(case: usize, seed: u64, draws: usize) -> (String, Vec<McCheck>) {
    let mut r = rng(seed ^ (case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let d = 1 + (case / 2) % 5;
    let exponential = case % 2 == 1;
    let kernel = if exponential {
        OuterKernel::Exponential
    } else {
        OuterKernel::gaussian(r.random_range(0.1..1.0)).unwrap()
    };
    // exponential cases keep lambda <= 0.3 so the MC estimators have finite variance
    let (top_lo, top_hi, mean_scale) = if exponential { (0.05, 0.3, 0.5) } else { (0.2, 2.0, 1.0) };
    let rank1 = if d > 1 && case % 4 == 3 { d - 1 } else { d };
    let (top1, top2) = (r.random_range(top_lo..top_hi), r.random_range(top_lo..top_hi));
    let (m1, l1) = random_factor(&mut r, d, rank1, top1, mean_scale);
    let (m2, l2) = random_factor(&mut r, d, d, top2, mean_scale);
    let y = DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
    let t1 = GaussianParam::from_covariance_matrix(m1.clone(), &(&l1 * l1.transpose())).unwrap();
    let t2 = GaussianParam::from_covariance_matrix(m2.clone(), &(&l2 * l2.transpose())).unwrap();

    let closed_eval = embed_eval_points(&kernel, &t1, &DMatrix::from_row_slice(1, d, y.as_slice())).unwrap()[0];
    let closed_norm = embed_norm_sq(&kernel, &t1).unwrap();
    let closed_cross = embed_cross_inner(&kernel, &t1, &t2).unwrap();

    let chunk = 50_000;
    let mut acc = [[0.0f64; 2]; 3];
    let mut left = draws;
    while left > 0 {
        let c = left.min(chunk);
        let z1 = gaussian_rows(&mut r, &m1, &l1, c);
        let z1b = gaussian_rows(&mut r, &m1, &l1, c);
        let z2 = gaussian_rows(&mut r, &m2, &l2, c);
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut e = vec![0.0; d];
        for i in 0..c {
            for k in 0..d {
                a[k] = z1[(i, k)];
                b[k] = z1b[(i, k)];
                e[k] = z2[(i, k)];
            }
            let vals = [kbar(&kernel, &a, y.as_slice()), kbar(&kernel, &a, &b), kbar(&kernel, &a, &e)];
            for (slot, v) in acc.iter_mut().zip(vals) {
                slot[0] += v;
                slot[1] += v * v;
            }
        }
        left -= c;
    }
    let labels = ["eval", "norm", "cross"];
    let closed = [closed_eval, closed_norm, closed_cross];
    let checks = (0..3)
        .map(|k| {
            let (estimate, se) = mean_and_se(acc[k][0], acc[k][1], draws);
            McCheck {
                label: labels[k].into(),
                closed: closed[k],
                estimate,
                se,
            }
        })
        .collect();
    (format!("case {case}: {kernel}, d = {d}"), checks)
}

/// Largest relative gap between the statistic through `GramContext` (vector
/// and gram input) and the dense term-by-term computation.
pub fn dense_equivalence(case: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed ^ (case as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let n = 10 + (2 * case) % 41;
    let d = 1 + case % 6;
    let sigma = r.random_range(0.05..1.5);
    // random rotation times a spectrum in [0.1, 2]
    let q = normal_matrix(&mut r, d, d).qr().q();
    let roots = DVector::from_fn(d, |_, _| r.random_range(0.1f64..2.0).sqrt());
    let l = q * DMatrix::from_diagonal(&roots);
    let m = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
    let x = gaussian_rows(&mut r, &m, &l, n);
    let kernel = OuterKernel::gaussian(sigma).unwrap();
    let oracle = dense_statistic(&x, sigma);
    let via_vectors = {
        let ctx = GramContext::from_vectors(x.clone()).map_err(|e| e.to_string())?;
        statistic(&ctx, &kernel, &NullModel::Full).map_err(|e| e.to_string())?
    };
    let via_gram = {
        let ctx = GramContext::from_gram(gram_from_vectors(&x).unwrap()).map_err(|e| e.to_string())?;
        statistic(&ctx, &kernel, &NullModel::Full).map_err(|e| e.to_string())?
    };
    let rel = |a: f64| (a - oracle).abs() / oracle.abs().max(1e-300);
    Ok(rel(via_vectors).max(rel(via_gram)))
}
