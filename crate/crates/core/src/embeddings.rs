//! Closed-form RKHS embeddings of Gaussian measures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_det_shift, quadratic_forms, sym_eigen, GramContext, Spectrum};

/// Margin kept below 1 for the exponential kernel's positivity conditions.
pub const EXPONENTIAL_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OuterKernel {
    /// `exp(-sigma ||x - y||^2)`
    Gaussian { sigma: f64 },
    /// `exp(<x, y>)`
    Exponential,
}

impl OuterKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let k = OuterKernel::Gaussian { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OuterKernel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian bandwidth must be positive, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Scalar evaluation on explicit vectors.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match *self {
            OuterKernel::Gaussian { sigma } => (-sigma * (x - y).norm_squared()).exp(),
            OuterKernel::Exponential => x.dot(y).exp(),
        }
    }
}

impl std::fmt::Display for OuterKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OuterKernel::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            OuterKernel::Exponential => write!(f, "exponential"),
        }
    }
}

/// `N(m, Sigma)` in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParam {
    mean: DVector<f64>,
    cov: Spectrum,
}

impl GaussianParam {
    pub fn new(mean: DVector<f64>, cov: Spectrum) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::InvalidArgument(format!(
                "mean has dimension {} but covariance acts on dimension {}",
                mean.len(),
                cov.dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mean has non-finite entries".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_covariance_matrix(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        Self::new(mean, Spectrum::from_matrix(cov)?)
    }

    /// Parameter given through sample coefficients: `m = mean + sum a_i (Y_i - mean)`
    /// and `psi_s = sum_i beta_is (Y_i - mean)`.
    pub fn from_sample_coefficients(
        ctx: &GramContext,
        mean_coeffs: &DVector<f64>,
        spectrum: &[(f64, DVector<f64>)],
    ) -> Result<Self> {
        Self::new(
            ctx.mean_from_coefficients(mean_coeffs)?,
            ctx.spectrum_from_coefficients(spectrum)?,
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Spectrum {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `sqrt(||m||^2 + ||Sigma||_HS^2)`
    pub fn norm(&self) -> f64 {
        (self.mean.norm_squared() + self.cov.hs_norm_sq()).sqrt()
    }

    /// `count` draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let k = self.cov.rank();
        let scales: Vec<f64> = self.cov.values().iter().map(|l| l.max(0.0).sqrt()).collect();
        let mut xi = DMatrix::zeros(count, k);
        for i in 0..count {
            for s in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                xi[(i, s)] = z * scales[s];
            }
        }
        let mut out = xi * self.cov.directions().transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    fn require_exponential_norm(&self) -> Result<()> {
        let top = self.cov.largest();
        if top >= 1.0 - EXPONENTIAL_MARGIN {
            return Err(Error::Precondition(format!(
                "exponential kernel needs the largest covariance eigenvalue below 1, got {top}"
            )));
        }
        let bottom = self.cov.values().iter().cloned().fold(0.0, f64::min);
        if bottom <= -1.0 + EXPONENTIAL_MARGIN {
            return Err(Error::Precondition(format!(
                "exponential kernel needs covariance eigenvalues above -1, got {bottom}"
            )));
        }
        Ok(())
    }
}

/// `K_bar[i, j] = k_bar(Y_i, Y_j)` computed from the Gram matrix.
pub fn outer_kernel_matrix(kernel: &OuterKernel, ctx: &GramContext) -> DMatrix<f64> {
    outer_kernel_from_gram(kernel, ctx.gram())
}

pub fn outer_kernel_from_gram(kernel: &OuterKernel, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    match *kernel {
        OuterKernel::Gaussian { sigma } => DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                let d2 = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0);
                (-sigma * d2).exp()
            }
        }),
        OuterKernel::Exponential => k.map(f64::exp),
    }
}

/// Bandwidth `1 / (2 median_{i<j} ||Y_i - Y_j||^2)` read off the Gram matrix.
pub fn median_heuristic(gram: &DMatrix<f64>) -> Result<f64> {
    let n = gram.nrows();
    let mut d2 = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for i in 0..j {
            d2.push((gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0));
        }
    }
    if d2.is_empty() {
        return Err(Error::InvalidData("median heuristic needs at least 2 observations".into()));
    }
    let mid = d2.len() / 2;
    let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if !(m > 0.0) {
        return Err(Error::InvalidData(
            "median pairwise distance is zero; set the bandwidth explicitly".into(),
        ));
    }
    Ok(1.0 / (2.0 * m))
}

/// `N(m, Sigma)(Y_i)` for sample index `i`.
pub fn embed_eval(
    kernel: &OuterKernel,
    theta: &GaussianParam,
    ctx: &GramContext,
    i: usize,
) -> Result<f64> {
    let points = ctx.frame().points();
    if i >= points.nrows() {
        return Err(Error::InvalidArgument(format!(
            "sample index {i} out of range for n = {}",
            points.nrows()
        )));
    }
    let row = points.rows(i, 1).into_owned();
    Ok(embed_eval_points(kernel, theta, &row)?[0])
}

/// `N(m, Sigma)(y)` for every row `y` of `points`.
pub fn embed_eval_points(
    kernel: &OuterKernel,
    theta: &GaussianParam,
    points: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if points.ncols() != theta.dim() {
        return Err(Error::InvalidArgument(format!(
            "points have dimension {} but the parameter has dimension {}",
            points.ncols(),
            theta.dim()
        )));
    }
    match *kernel {
        OuterKernel::Gaussian { sigma } => {
            let c = 2.0 * sigma;
            let scale = (-0.5 * theta.cov.log_det_shift(c)?).exp();
            let q = quadratic_forms(points, &theta.mean, &theta.cov, c)?;
            Ok(q.map(|v| scale * (-sigma * v).exp()))
        }
        OuterKernel::Exponential => {
            let lin = points * &theta.mean;
            let proj = points * theta.cov.directions();
            let vals = theta.cov.values();
            Ok(DVector::from_fn(points.nrows(), |i, _| {
                let quad: f64 = (0..vals.len()).map(|s| vals[s] * proj[(i, s)].powi(2)).sum();
                (lin[i] + 0.5 * quad).exp()
            }))
        }
    }
}

/// `||N(m, Sigma)||^2` in the RKHS of the outer kernel.
pub fn embed_norm_sq(kernel: &OuterKernel, theta: &GaussianParam) -> Result<f64> {
    match *kernel {
        OuterKernel::Gaussian { sigma } => Ok((-0.5 * theta.cov.log_det_shift(4.0 * sigma)?).exp()),
        OuterKernel::Exponential => {
            theta.require_exponential_norm()?;
            // |I - Sigma^2|^{-1/2} exp(m^T (I - Sigma)^{-1} m)
            let vals = theta.cov.values();
            let log_det: f64 = vals.iter().map(|l| (-l * l).ln_1p()).sum();
            let proj = theta.cov.project(&theta.mean);
            let mut quad = theta.mean.norm_squared();
            for (a, l) in proj.iter().zip(vals.iter()) {
                quad += a * a * (l / (1.0 - l));
            }
            Ok((-0.5 * log_det + quad).exp())
        }
    }
}

/// `<N(theta_1), N(theta_2)> = E k_bar(Z_1, Z_2)` for independent `Z_i ~ N(theta_i)`.
pub fn embed_cross_inner(
    kernel: &OuterKernel,
    theta1: &GaussianParam,
    theta2: &GaussianParam,
) -> Result<f64> {
    if theta1.dim() != theta2.dim() {
        return Err(Error::InvalidArgument(format!(
            "parameters live in dimensions {} and {}",
            theta1.dim(),
            theta2.dim()
        )));
    }
    match *kernel {
        OuterKernel::Gaussian { sigma } => {
            // Z_1 - Z_2 ~ N(m_1 - m_2, Sigma_1 + Sigma_2)
            let sum = theta1.cov.add_scaled(&theta2.cov, 1.0, true)?;
            let diff = &theta1.mean - &theta2.mean;
            let c = 2.0 * sigma;
            let log_det = sum.log_det_shift(c)?;
            let proj = sum.project(&diff);
            let mut q = diff.norm_squared();
            for (a, l) in proj.iter().zip(sum.values().iter()) {
                q += a * a * (1.0 / (1.0 + c * l) - 1.0);
            }
            Ok((-0.5 * log_det - sigma * q.max(0.0)).exp())
        }
        OuterKernel::Exponential => exponential_cross(theta1, theta2),
    }
}

fn exponential_cross(t1: &GaussianParam, t2: &GaussianParam) -> Result<f64> {
    // Z_1 = m_1 + U_1 L_1^{1/2} xi; integrate exp(<m_2, Z_1> + Z_1^T Sigma_2 Z_1 / 2) over xi.
    let m1 = &t1.mean;
    let m2 = &t2.mean;
    let base = m1.dot(m2) + 0.5 * t2.cov.quad(m1);
    let k = t1.cov.rank();
    if k == 0 {
        return Ok(base.exp());
    }
    let roots: Vec<f64> = t1.cov.values().iter().map(|l| l.max(0.0).sqrt()).collect();
    let u1 = t1.cov.directions();
    // U_1^T Sigma_2 U_1
    let p = u1.tr_mul(t2.cov.directions());
    let inner = DMatrix::from_fn(k, k, |i, j| {
        (0..t2.cov.rank())
            .map(|s| p[(i, s)] * t2.cov.values()[s] * p[(j, s)])
            .sum::<f64>()
    });
    let q = DMatrix::from_fn(k, k, |i, j| roots[i] * inner[(i, j)] * roots[j]);
    let shift = m2 + t2.cov.apply(m1);
    let a = DVector::from_fn(k, |i, _| roots[i] * u1.column(i).dot(&shift));
    let (vals, vecs) = sym_eigen(&q)?;
    if let Some(&top) = vals.iter().find(|&&v| v >= 1.0 - EXPONENTIAL_MARGIN) {
        return Err(Error::Precondition(format!(
            "exponential kernel cross term needs I - Sigma_1^(1/2) Sigma_2 Sigma_1^(1/2) positive definite, \
             found eigenvalue {top} of the product"
        )));
    }
    let ap = vecs.tr_mul(&a);
    let mut log_c = base;
    for (v, x) in vals.iter().zip(ap.iter()) {
        log_c += -0.5 * (-v).ln_1p() + 0.5 * x * x / (1.0 - v);
    }
    Ok(log_c.exp())
}

/// Convenience wrapper around [`log_det_shift`] for a parameter's covariance.
pub fn log_det(theta: &GaussianParam, c: f64) -> Result<f64> {
    log_det_shift(theta.cov.values().as_slice(), c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn param(mean: &[f64], cov: &[f64]) -> GaussianParam {
        let d = mean.len();
        GaussianParam::from_covariance_matrix(
            DVector::from_row_slice(mean),
            &DMatrix::from_row_slice(d, d, cov),
        )
        .unwrap()
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, -1.0, 0.5, 0.5]);
        let ctx = GramContext::from_vectors(x).unwrap();
        let kb = outer_kernel_matrix(&OuterKernel::Gaussian { sigma: 0.3 }, &ctx);
        for i in 0..3 {
            assert_eq!(kb[(i, i)], 1.0);
        }
    }

    #[test]
    fn exponential_of_zero_gram_is_ones() {
        let kb = outer_kernel_from_gram(&OuterKernel::Exponential, &DMatrix::zeros(2, 2));
        assert_eq!(kb, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn kernel_matrix_matches_scalar_evaluations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let ctx = GramContext::from_vectors(x.clone()).unwrap();
        for kernel in [OuterKernel::Gaussian { sigma: 0.7 }, OuterKernel::Exponential] {
            let kb = outer_kernel_matrix(&kernel, &ctx);
            for i in 0..6 {
                for j in 0..6 {
                    let xi = x.row(i).transpose();
                    let xj = x.row(j).transpose();
                    assert!((kb[(i, j)] - kernel.eval(&xi, &xj)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn point_mass_reduces_to_kernel() {
        let theta = param(&[0.2, -0.1], &[0.0; 4]);
        let pts = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.3, 0.4]);
        for kernel in [OuterKernel::Gaussian { sigma: 0.9 }, OuterKernel::Exponential] {
            let v = embed_eval_points(&kernel, &theta, &pts).unwrap();
            for i in 0..2 {
                let y = pts.row(i).transpose();
                assert!((v[i] - kernel.eval(theta.mean(), &y)).abs() < 1e-14);
            }
        }
        let zero = param(&[0.0, 0.0], &[0.0; 4]);
        let v = embed_eval_points(&OuterKernel::Exponential, &zero, &pts).unwrap();
        assert!((v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_norm_values() {
        let g = OuterKernel::Gaussian { sigma: 0.25 };
        assert_eq!(embed_norm_sq(&g, &param(&[1.0], &[0.0])).unwrap(), 1.0);
        let v = embed_norm_sq(&g, &param(&[0.0], &[1.0])).unwrap();
        assert!((v - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exponential_norm_values() {
        let v = embed_norm_sq(&OuterKernel::Exponential, &param(&[0.0], &[0.5])).unwrap();
        assert!((v - 1.0 / 0.75_f64.sqrt()).abs() < 1e-12);
        // m = 1, lambda = 0.5: |1 - 0.25|^{-1/2} exp(1 / 0.5)
        let v = embed_norm_sq(&OuterKernel::Exponential, &param(&[1.0], &[0.5])).unwrap();
        assert!((v - 2.0_f64.exp() / 0.75_f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn exponential_norm_requires_small_spectrum() {
        let err = embed_norm_sq(&OuterKernel::Exponential, &param(&[0.0], &[1.0])).unwrap_err();
        assert!(matches!(err, Error::Precondition(ref m) if m.contains('1')));
        let err = embed_norm_sq(&OuterKernel::Exponential, &param(&[0.0, 0.0], &[1.5, 0.0, 0.0, 0.2]))
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(ref m) if m.contains("1.5")));
    }

    #[test]
    fn cross_inner_self_equals_norm() {
        let t = param(&[0.3, -0.2], &[0.4, 0.1, 0.1, 0.2]);
        for kernel in [OuterKernel::Gaussian { sigma: 0.6 }, OuterKernel::Exponential] {
            let a = embed_cross_inner(&kernel, &t, &t).unwrap();
            let b = embed_norm_sq(&kernel, &t).unwrap();
            assert!((a - b).abs() < 1e-10 * b, "{kernel}: {a} vs {b}");
        }
    }

    #[test]
    fn cross_inner_point_masses() {
        let a = param(&[0.3, -0.2], &[0.0; 4]);
        let b = param(&[-0.5, 0.1], &[0.0; 4]);
        for kernel in [OuterKernel::Gaussian { sigma: 0.6 }, OuterKernel::Exponential] {
            let v = embed_cross_inner(&kernel, &a, &b).unwrap();
            assert!((v - kernel.eval(a.mean(), b.mean())).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_inner_is_symmetric() {
        let a = param(&[0.3, -0.2], &[0.4, 0.1, 0.1, 0.2]);
        let b = param(&[-0.1, 0.5], &[0.1, -0.05, -0.05, 0.3]);
        for kernel in [OuterKernel::Gaussian { sigma: 0.6 }, OuterKernel::Exponential] {
            let x = embed_cross_inner(&kernel, &a, &b).unwrap();
            let y = embed_cross_inner(&kernel, &b, &a).unwrap();
            assert!((x - y).abs() < 1e-12 * x.abs());
        }
    }

    #[test]
    fn sample_rows_have_requested_moments() {
        let t = param(&[1.0, -1.0], &[0.5, 0.2, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = t.sample(20000, &mut rng);
        let mean = x.row_mean();
        assert!((mean[0] - 1.0).abs() < 0.03 && (mean[1] + 1.0).abs() < 0.03);
        let mut xc = x.clone();
        for mut r in xc.row_iter_mut() {
            r -= &mean;
        }
        let cov = xc.tr_mul(&xc) / 20000.0;
        assert!((cov - t.cov().to_matrix()).amax() < 0.03);
    }
}
