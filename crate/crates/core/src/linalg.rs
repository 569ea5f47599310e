//! Gram-matrix machinery.
//!
//! Every sample lives in some Hilbert space that we only see through inner
//! products. [`GramContext`] centers the Gram matrix, diagonalizes it and
//! builds a [`Frame`]: an explicit orthonormal coordinate system in which
//! every observation, the empirical mean and every covariance direction has
//! finite coordinates. For vector data the frame is the original `R^d`; for
//! Gram-only data it is the span of the kernel PCA directions plus one axis
//! for the part of the mean orthogonal to that span. All downstream
//! computations (embeddings, estimator maps, bootstrap) work in frame
//! coordinates, so both input modes share a single code path.

use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which negative eigenvalues are treated as noise.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;
/// Relative threshold below which eigenvalues are dropped from the retained spectrum.
pub const RETAIN_EIGEN_TOL: f64 = 1e-12;
/// Symmetry tolerance for Gram inputs, relative to the largest absolute entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Vectors,
    Gram,
}

/// A validated sample, either as rows of vectors or as a Gram matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    mode: DataMode,
    matrix: DMatrix<f64>,
}

impl Dataset {
    pub fn from_vectors(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {}",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidData("observations have dimension 0".into()));
        }
        check_finite(&x)?;
        Ok(Self {
            mode: DataMode::Vectors,
            matrix: x,
        })
    }

    pub fn from_gram(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::InvalidData("gram matrix must be square".into()));
        }
        if k.nrows() < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {}",
                k.nrows()
            )));
        }
        check_finite(&k)?;
        check_symmetric(&k)?;
        Ok(Self {
            mode: DataMode::Gram,
            matrix: k,
        })
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Raw matrix: `n x d` vectors or `n x n` Gram.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn gram(&self) -> DMatrix<f64> {
        match self.mode {
            DataMode::Vectors => &self.matrix * self.matrix.transpose(),
            DataMode::Gram => self.matrix.clone(),
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (i, j) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::InvalidData(format!(
            "non-finite entry at row {i}, column {j}"
        )));
    }
    Ok(())
}

fn check_symmetric(k: &DMatrix<f64>) -> Result<()> {
    let scale = k.amax().max(1.0);
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (k[(i, j)] - k[(j, i)]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::InvalidData(format!(
                    "gram matrix is not symmetric: |K[{i},{j}] - K[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Pairwise dot products of the rows of `x`.
pub fn gram_from_vectors(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(x)?;
    Ok(x * x.transpose())
}

/// `H K H` with `H = I - J/n`.
pub fn center_gram(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::InvalidData("gram matrix must be square".into()));
    }
    check_symmetric(k)?;
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut kc = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            kc[(i, j)] = k[(i, j)] - row_means[i] - row_means[j] + grand;
        }
    }
    // exact symmetry helps the eigensolver
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (kc[(i, j)] + kc[(j, i)]);
            kc[(i, j)] = v;
            kc[(j, i)] = v;
        }
    }
    Ok(kc)
}

/// faer's wide kernels can leave the upper halves of the AVX registers dirty,
/// after which SSE code in the same thread (libm `exp`) runs with transition
/// penalties until `vzeroupper`.
#[cfg(target_arch = "x86_64")]
fn clear_upper_simd_state() {
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: AVX support was checked at runtime.
        unsafe { zeroupper() }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn zeroupper() {
    std::arch::x86_64::_mm256_zeroupper();
}

#[cfg(not(target_arch = "x86_64"))]
fn clear_upper_simd_state() {}

/// Symmetric eigendecomposition, eigenvalues sorted in descending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    if n == 1 {
        return Ok((DVector::from_element(1, m[(0, 0)]), DMatrix::identity(1, 1)));
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    // sequential, so every vector register faer touches belongs to this thread
    let par = faer::Par::Seq;
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut u = faer::Mat::<f64>::zeros(n, n);
    let mut buf = faer::dyn_stack::MemBuffer::new(self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        par,
        Default::default(),
    ));
    let outcome = self_adjoint_evd(
        fm.as_ref(),
        s.as_mut(),
        Some(u.as_mut()),
        par,
        faer::dyn_stack::MemStack::new(&mut buf),
        Default::default(),
    );
    clear_upper_simd_state();
    outcome.map_err(|e| Error::Numerical(format!("eigensolver failed on {n}x{n} matrix: {e:?}")))?;
    let s = s.column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| s[i]));
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "eigensolver returned non-finite eigenvalues on {n}x{n} matrix"
        )));
    }
    Ok((values, vectors))
}

/// Eigenvalues of `K_c / n` (the empirical covariance spectrum), descending,
/// with eigenvectors of `K_c` as columns. Tiny negative eigenvalues are
/// clamped to zero; materially negative ones mean the input was not PSD.
pub fn eigendecompose_centered(kc: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = kc.nrows();
    let (mut values, vectors) = sym_eigen(kc)?;
    values /= n as f64;
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_EIGEN_TOL * top.max(f64::MIN_POSITIVE) && top > 0.0 {
                return Err(Error::InvalidData(format!(
                    "gram matrix is not positive semi-definite (centered eigenvalue {v:e}, largest {top:e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok((values, vectors))
}

/// Number of eigenvalues retained above `RETAIN_EIGEN_TOL * largest`.
pub fn retained_rank(values: &DVector<f64>) -> usize {
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > RETAIN_EIGEN_TOL * top).count()
}

/// Self-adjoint finite-rank operator `sum_s values[s] * dir_s dir_s^T` in frame
/// coordinates. Directions are orthonormal columns; values are sorted
/// descending. Values may be slightly negative only for internally perturbed
/// operators (finite differences).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: DVector<f64>,
    directions: DMatrix<f64>,
}

impl Spectrum {
    pub fn empty(dim: usize) -> Self {
        Self {
            values: DVector::zeros(0),
            directions: DMatrix::zeros(dim, 0),
        }
    }

    /// Build from eigenpairs. Directions must be orthonormal within 1e-8.
    pub fn new(values: DVector<f64>, directions: DMatrix<f64>) -> Result<Self> {
        if values.len() != directions.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} eigenvalues for {} directions",
                values.len(),
                directions.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "covariance eigenvalues must be finite and nonnegative".into(),
            ));
        }
        let gram = directions.transpose() * &directions;
        let k = gram.nrows();
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - target).abs() > 1e-8 {
                    return Err(Error::InvalidArgument(format!(
                        "covariance directions are not orthonormal (entry {i},{j} of D^T D is {:e})",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(Self::sorted(values, directions))
    }

    pub(crate) fn from_parts_unchecked(values: DVector<f64>, directions: DMatrix<f64>) -> Self {
        Self::sorted(values, directions)
    }

    fn sorted(values: DVector<f64>, directions: DMatrix<f64>) -> Self {
        let k = values.len();
        if (1..k).all(|i| values[i - 1] >= values[i]) {
            return Self { values, directions };
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let vals = DVector::from_iterator(k, order.iter().map(|&i| values[i]));
        let dirs = DMatrix::from_fn(directions.nrows(), k, |r, c| directions[(r, order[c])]);
        Self {
            values: vals,
            directions: dirs,
        }
    }

    /// Diagonalize `basis * coords * basis^T` where `basis` has orthonormal
    /// columns and `coords` is symmetric. Eigenvalues with magnitude at most
    /// `drop_tol * max|value|` are dropped; with `allow_negative` false,
    /// negative values beyond noise are an error and noise is dropped.
    pub fn from_basis_coords(
        basis: &DMatrix<f64>,
        coords: &DMatrix<f64>,
        allow_negative: bool,
        drop_tol: f64,
    ) -> Result<Self> {
        let dim = basis.nrows();
        if coords.nrows() == 0 {
            return Ok(Self::empty(dim));
        }
        let sym = (coords + coords.transpose()) * 0.5;
        let (vals, vecs) = sym_eigen(&sym)?;
        let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if scale == 0.0 {
            return Ok(Self::empty(dim));
        }
        let mut keep = Vec::new();
        for (i, &v) in vals.iter().enumerate() {
            if v.abs() <= drop_tol * scale {
                continue;
            }
            if v < 0.0 && !allow_negative {
                if v < -NEGATIVE_EIGEN_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not positive semi-definite (eigenvalue {v:e})"
                    )));
                }
                continue;
            }
            keep.push(i);
        }
        let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| vals[i]));
        let local = DMatrix::from_fn(vecs.nrows(), keep.len(), |r, c| vecs[(r, keep[c])]);
        Ok(Self::sorted(values, basis * local))
    }

    /// Diagonalize an explicit symmetric PSD matrix in frame coordinates.
    pub fn from_matrix(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if cov.ncols() != dim {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        Self::from_basis_coords(&DMatrix::identity(dim, dim), cov, false, RETAIN_EIGEN_TOL)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }

    pub fn largest(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Keep the `r` leading eigenpairs.
    pub fn truncate(&self, r: usize) -> Self {
        let k = r.min(self.rank());
        Self {
            values: self.values.rows(0, k).into_owned(),
            directions: self.directions.columns(0, k).into_owned(),
        }
    }

    /// Squared Hilbert-Schmidt norm.
    pub fn hs_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Dense `dim x dim` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.rank(), |i, j| {
            self.directions[(i, j)] * self.values[j]
        });
        scaled * self.directions.transpose()
    }

    /// `<v, dir_s>` for every direction.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        self.directions.tr_mul(v)
    }

    /// `log |I + c Sigma|`.
    pub fn log_det_shift(&self, c: f64) -> Result<f64> {
        log_det_shift(self.values.as_slice(), c)
    }

    /// `v^T Sigma v`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        let p = self.project(v);
        p.iter().zip(self.values.iter()).map(|(a, l)| l * a * a).sum()
    }

    /// `Sigma v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut p = self.project(v);
        for (a, l) in p.iter_mut().zip(self.values.iter()) {
            *a *= l;
        }
        &self.directions * p
    }

    /// `self + weight * other` as a new spectrum, diagonalized on an
    /// orthonormal basis of the joint span. Nothing but exact zeros is
    /// dropped: tiny eigenvalues still matter in differences of embeddings.
    pub fn add_scaled(&self, other: &Spectrum, weight: f64, allow_negative: bool) -> Result<Self> {
        let basis = joint_basis(&self.directions, &other.directions);
        let coords = basis_coords(&basis, self) + basis_coords(&basis, other) * weight;
        Self::from_basis_coords(&basis, &coords, allow_negative, 0.0)
    }
}

/// Coordinates of `spectrum` in an orthonormal `basis` covering its span.
pub(crate) fn basis_coords(basis: &DMatrix<f64>, spectrum: &Spectrum) -> DMatrix<f64> {
    let proj = basis.tr_mul(spectrum.directions());
    let scaled = DMatrix::from_fn(proj.nrows(), proj.ncols(), |i, j| {
        proj[(i, j)] * spectrum.values()[j]
    });
    scaled * proj.transpose()
}

/// Orthonormal basis of `span(a) + span(b)`, where `a` and `b` have
/// orthonormal columns. Starts from `a` and appends the residual of `b`.
pub(crate) fn joint_basis(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = a.nrows();
    if b.ncols() == 0 {
        return a.clone();
    }
    if a.ncols() == 0 {
        return b.clone();
    }
    let residual = b - a * a.tr_mul(b);
    let g = residual.tr_mul(&residual);
    let (vals, vecs) = sym_eigen(&g).expect("small symmetric eigenproblem");
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-20).collect();
    let mut cols: Vec<DVector<f64>> = a.column_iter().map(|c| c.into_owned()).collect();
    for &i in &keep {
        let mut v = &residual * vecs.column(i) / vals[i].sqrt();
        // one re-orthogonalization pass
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let nv = v.norm();
        if nv > 1e-10 {
            cols.push(v / nv);
        }
    }
    DMatrix::from_columns(&cols).resize(dim, cols.len(), 0.0)
}

/// `log |I + c Sigma| = sum_s log(1 + c lambda_s)`.
pub fn log_det_shift(values: &[f64], c: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &l in values {
        let f = 1.0 + c * l;
        if f <= 0.0 {
            return Err(Error::SingularOperator(format!(
                "I + {c} * Sigma has nonpositive factor {f:e} (eigenvalue {l:e})"
            )));
        }
        acc += f.ln_1p_safe();
    }
    Ok(acc)
}

trait LnOnePlus {
    fn ln_1p_safe(self) -> f64;
}

impl LnOnePlus for f64 {
    // input is 1 + c*lambda; use ln_1p on the increment for accuracy near 1
    fn ln_1p_safe(self) -> f64 {
        (self - 1.0).ln_1p()
    }
}

/// `q_i(c) = ||(I + c Sigma)^{-1/2} (y_i - m)||^2` for every row `y_i` of `points`,
/// evaluated spectrally:
/// `||y_i - m||^2 + sum_s (1/(1 + c lambda_s) - 1) <y_i - m, dir_s>^2`.
pub fn quadratic_forms(
    points: &DMatrix<f64>,
    mean: &DVector<f64>,
    spectrum: &Spectrum,
    c: f64,
) -> Result<DVector<f64>> {
    let shrink: Vec<f64> = spectrum
        .values()
        .iter()
        .map(|&l| {
            let f = 1.0 + c * l;
            if f <= 0.0 {
                Err(Error::SingularOperator(format!(
                    "I + {c} * Sigma has nonpositive factor {f:e}"
                )))
            } else {
                Ok(1.0 / f - 1.0)
            }
        })
        .collect::<Result<_>>()?;
    let n = points.nrows();
    let mut centered = points.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let proj = &centered * spectrum.directions();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut q = centered.row(i).norm_squared();
        for (s, w) in shrink.iter().enumerate() {
            let a = proj[(i, s)];
            q += w * a * a;
        }
        out[i] = q.max(0.0);
    }
    Ok(out)
}

/// Coordinates in which every observation and every estimator of interest has
/// an explicit representation.
#[derive(Debug, Clone)]
pub struct Frame {
    points: DMatrix<f64>,
    mean: DVector<f64>,
    directions: DMatrix<f64>,
    scores: DMatrix<f64>,
}

impl Frame {
    /// Observations, one per row.
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Empirical mean (1/n convention).
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Orthonormal kernel-PCA directions `psi_s`, one per retained eigenvalue.
    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    /// `<Y_i - mean, psi_s>`.
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Rows of `points` minus the mean.
    pub fn centered_points(&self) -> DMatrix<f64> {
        let mut c = self.points.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c
    }
}

/// Centered Gram matrix, its spectrum and the induced coordinate frame.
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct GramContext {
    mode: DataMode,
    gram: DMatrix<f64>,
    centered: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    rank: usize,
    frame: Frame,
}

impl GramContext {
    pub fn new(data: &Dataset) -> Result<Self> {
        match data.mode() {
            DataMode::Vectors => Self::from_vectors(data.matrix().clone()),
            DataMode::Gram => Self::from_gram(data.matrix().clone()),
        }
    }

    pub fn from_vectors(x: DMatrix<f64>) -> Result<Self> {
        let data = Dataset::from_vectors(x)?;
        let x = data.matrix;
        let n = x.nrows();
        let gram = gram_from_vectors(&x)?;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n as f64));
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        // equals H K H, without the cancellation of centering K when the mean dominates
        let centered = gram_from_vectors(&xc)?;
        let (eigenvalues, eigenvectors) = eigendecompose_centered(&centered)?;
        let rank = retained_rank(&eigenvalues).min(x.ncols());
        let nf = n as f64;
        let mut directions = DMatrix::zeros(x.ncols(), rank);
        for s in 0..rank {
            let scale = 1.0 / (nf * eigenvalues[s]).sqrt();
            let psi = xc.tr_mul(&eigenvectors.column(s)) * scale;
            directions.set_column(s, &psi);
        }
        let scores = &xc * &directions;
        Ok(Self {
            mode: DataMode::Vectors,
            gram,
            centered,
            eigenvalues,
            eigenvectors,
            rank,
            frame: Frame {
                points: x,
                mean,
                directions,
                scores,
            },
        })
    }

    pub fn from_gram(k: DMatrix<f64>) -> Result<Self> {
        let data = Dataset::from_gram(k)?;
        let gram = data.matrix;
        let n = gram.nrows();
        let nf = n as f64;
        let centered = center_gram(&gram)?;
        let (eigenvalues, eigenvectors) = eigendecompose_centered(&centered)?;
        let rank = retained_rank(&eigenvalues);

        let mut scores = DMatrix::zeros(n, rank);
        for s in 0..rank {
            let scale = (nf * eigenvalues[s]).sqrt();
            for i in 0..n {
                scores[(i, s)] = scale * eigenvectors[(i, s)];
            }
        }
        // <m, Y_i - m> = (K 1 / n)_i - 1^T K 1 / n^2
        let row_means: DVector<f64> =
            DVector::from_iterator(n, (0..n).map(|i| gram.row(i).sum() / nf));
        let mean_sq = row_means.sum() / nf;
        let mean_dot_centered = row_means.add_scalar(-mean_sq);
        let mut mean = DVector::zeros(rank + 1);
        for s in 0..rank {
            let denom = (nf * eigenvalues[s]).sqrt();
            mean[s] = eigenvectors.column(s).dot(&mean_dot_centered) / denom * 1.0;
        }
        // mean[s] = sum_i u_is <m, Y_i - m> / sqrt(n lambda_s)
        let in_span: f64 = mean.rows(0, rank).norm_squared();
        let perp_sq = mean_sq - in_span;
        let scale = gram.amax().max(1.0);
        if perp_sq < -1e-8 * scale {
            return Err(Error::InvalidData(format!(
                "gram matrix is not positive semi-definite (mean norm defect {perp_sq:e})"
            )));
        }
        mean[rank] = perp_sq.max(0.0).sqrt();
        let reconstructed = &scores * mean.rows(0, rank);
        let defect = (&reconstructed - &mean_dot_centered).amax();
        if defect > 1e-6 * scale {
            return Err(Error::InvalidData(format!(
                "gram matrix is not positive semi-definite (mean cross terms off by {defect:e})"
            )));
        }

        let mut points = DMatrix::zeros(n, rank + 1);
        for i in 0..n {
            for s in 0..=rank {
                points[(i, s)] = mean[s] + if s < rank { scores[(i, s)] } else { 0.0 };
            }
        }
        let directions = DMatrix::identity(rank + 1, rank);
        Ok(Self {
            mode: DataMode::Gram,
            gram,
            centered,
            eigenvalues,
            eigenvectors,
            rank,
            frame: Frame {
                points,
                mean,
                directions,
                scores,
            },
        })
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn centered(&self) -> &DMatrix<f64> {
        &self.centered
    }

    /// All `n` eigenvalues of `K_c / n`, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Number of retained (numerically positive) eigenvalues.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// Empirical covariance `(1/n) sum (Y_i - m)(Y_i - m)^T` restricted to the
    /// retained spectrum.
    pub fn covariance(&self) -> Spectrum {
        Spectrum::from_parts_unchecked(
            self.eigenvalues.rows(0, self.rank).into_owned(),
            self.frame.directions.clone(),
        )
    }

    /// `m + sum_i a_i (Y_i - m)` in frame coordinates.
    pub fn mean_from_coefficients(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(coeffs.len(), "mean coefficients")?;
        Ok(&self.frame.mean + self.frame.centered_points().tr_mul(coeffs))
    }

    /// `sum_i c_i Y_i` in frame coordinates.
    pub fn point_from_coefficients(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(coeffs.len(), "point coefficients")?;
        Ok(self.frame.points.tr_mul(coeffs))
    }

    /// Spectrum whose directions are `psi_s = sum_i beta_is (Y_i - m)`.
    pub fn spectrum_from_coefficients(&self, pairs: &[(f64, DVector<f64>)]) -> Result<Spectrum> {
        let centered = self.frame.centered_points();
        let mut values = DVector::zeros(pairs.len());
        let mut dirs = DMatrix::zeros(self.frame.dim(), pairs.len());
        for (s, (l, beta)) in pairs.iter().enumerate() {
            self.check_len(beta.len(), "direction coefficients")?;
            values[s] = *l;
            dirs.set_column(s, &centered.tr_mul(beta));
        }
        Spectrum::new(values, dirs)
    }

    /// Operator `sum_ij C_ij (Y_i - m)(Y_j - m)^T` in frame coordinates.
    pub fn covariance_from_coefficients(&self, coeffs: &DMatrix<f64>) -> Result<Spectrum> {
        let n = self.n();
        if coeffs.nrows() != n || coeffs.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "covariance coefficients must be {n}x{n}, got {}x{}",
                coeffs.nrows(),
                coeffs.ncols()
            )));
        }
        // Work on the kernel-PCA basis: (Y_i - m) = sum_s scores_is psi_s.
        let scores = &self.frame.scores;
        let coords = scores.tr_mul(&(coeffs * scores));
        Spectrum::from_basis_coords(&self.frame.directions, &coords, false, RETAIN_EIGEN_TOL)
    }

    /// Quadratic forms of every observation for a parameter given by sample
    /// coefficients (see [`GramContext::mean_from_coefficients`] and
    /// [`GramContext::spectrum_from_coefficients`]).
    pub fn quadratic_forms_from_coefficients(
        &self,
        mean_coeffs: &DVector<f64>,
        spectrum: &[(f64, DVector<f64>)],
        c: f64,
    ) -> Result<DVector<f64>> {
        let mean = self.mean_from_coefficients(mean_coeffs)?;
        let spec = self.spectrum_from_coefficients(spectrum)?;
        quadratic_forms(&self.frame.points, &mean, &spec, c)
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n() {
            return Err(Error::InvalidArgument(format!(
                "{what} must have length {}, got {len}",
                self.n()
            )));
        }
        Ok(())
    }
}
