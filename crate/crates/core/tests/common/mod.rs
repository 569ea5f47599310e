//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod checks;
pub mod mc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Sample mean and 1/n covariance of the rows.
pub fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n);
    let mut cov = DMatrix::zeros(x.ncols(), x.ncols());
    for row in x.row_iter() {
        let c = row.transpose() - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / n)
}

/// `N(m, S)(y) = |I + 2 sigma S|^{-1/2} exp(-sigma (y-m)^T (I + 2 sigma S)^{-1} (y-m))`.
pub fn gaussian_eval(m: &DVector<f64>, s: &DMatrix<f64>, sigma: f64, y: &DVector<f64>) -> f64 {
    let d = m.len();
    let a = DMatrix::identity(d, d) + s * (2.0 * sigma);
    let diff = y - m;
    let q = diff.dot(&a.clone().lu().solve(&diff).unwrap());
    a.determinant().powf(-0.5) * (-sigma * q).exp()
}

pub fn gaussian_norm_sq(s: &DMatrix<f64>, sigma: f64) -> f64 {
    let d = s.nrows();
    (DMatrix::identity(d, d) + s * (4.0 * sigma)).determinant().powf(-0.5)
}

/// Term-by-term `n Delta_hat^2` for the Gaussian kernel with `(m, S)` given.
pub fn dense_statistic_at(x: &DMatrix<f64>, sigma: f64, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut kbar = 0.0;
    for i in 0..n {
        for j in 0..n {
            kbar += (-sigma * (x.row(i) - x.row(j)).norm_squared()).exp();
        }
    }
    kbar /= (n * n) as f64;
    let eval: f64 = (0..n)
        .map(|i| gaussian_eval(m, s, sigma, &x.row(i).transpose()))
        .sum::<f64>()
        / n as f64;
    n as f64 * (kbar - 2.0 * eval + gaussian_norm_sq(s, sigma))
}

/// Full-model statistic with the empirical mean and covariance.
pub fn dense_statistic(x: &DMatrix<f64>, sigma: f64) -> f64 {
    let (m, s) = moments(x);
    dense_statistic_at(x, sigma, &m, &s)
}

/// Draw `count` rows from `N(m, L L^T)`.
pub fn gaussian_rows(rng: &mut ChaCha8Rng, m: &DVector<f64>, l: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let z = normal_matrix(rng, count, l.ncols());
    let mut x = z * l.transpose();
    for mut row in x.row_iter_mut() {
        row += m.transpose();
    }
    x
}

/// Mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
