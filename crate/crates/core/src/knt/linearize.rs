//! Directional derivatives of `theta -> N(T(theta))` along bootstrap directions.
//!
//! A bootstrap direction is `delta = (m_b, Sigma_b)` with
//! `m_b = (1/n) sum w_i (Y_i - m)` and `Sigma_b = (1/n) sum w_i (Y_i - m)^{(x)2}`.
//! Both lie in the span of the kernel PCA directions `psi`, so with
//! `Phi` the `n x R` score matrix:
//! `u = Phi^T w / n` and `V = Phi^T diag(w) Phi / n` in `psi` coordinates.
//!
//! For each direction we need `D(Y_j)` for every sample point and `||D||^2`.

use nalgebra::{DMatrix, DVector};

use crate::embeddings::{embed_cross_inner, embed_eval_points, GaussianParam, OuterKernel};
use crate::error::{Error, Result};
use crate::linalg::{GramContext, Spectrum};
use crate::null_models::ResolvedModel;

/// `D(Y_j)` for all `j`, and `||D||^2`.
#[derive(Debug, Clone)]
pub struct Derivative {
    pub evals: DVector<f64>,
    pub norm_sq: f64,
}

impl Derivative {
    fn zero(n: usize) -> Self {
        Self {
            evals: DVector::zeros(n),
            norm_sq: 0.0,
        }
    }
}

/// Direction `delta` in `psi` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Direction {
    pub fn from_weights(scores: &DMatrix<f64>, w: &DVector<f64>) -> Self {
        let n = scores.nrows() as f64;
        let mean = scores.tr_mul(w) / n;
        let weighted = DMatrix::from_fn(scores.nrows(), scores.ncols(), |i, s| w[i] * scores[(i, s)]);
        let cov = scores.tr_mul(&weighted) / n;
        Self { mean, cov }
    }

    pub fn norm(&self) -> f64 {
        (self.mean.norm_squared() + self.cov.norm_squared()).sqrt()
    }
}

/// Gaussian-kernel derivative in closed form.
#[derive(Debug, Clone)]
pub struct AnalyticGaussian {
    sigma: f64,
    scores: DMatrix<f64>,
    moves_mean: bool,
    n_eval: DVector<f64>,
    /// `<Y_j - m_tilde, psi_t> / (1 + 2 sigma lambda_tilde_t)`
    za: DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    norm0: f64,
    structure: Structure,
}

#[derive(Debug, Clone)]
enum Structure {
    /// Form `V` explicitly: `O(n R^2)` per direction.
    Dense,
    /// Work with `n x n` kernel matrices: `O(n^2)` per direction.
    KernelTrick {
        g: DMatrix<f64>,
        g2: DMatrix<f64>,
        alpha: DVector<f64>,
        h: DMatrix<f64>,
        h2: DMatrix<f64>,
        beta: DVector<f64>,
    },
    /// Rank truncation: only the top `r` rows of `V` matter, `O(n R r)`.
    Rank { r: usize, ratio: DMatrix<f64> },
}

impl AnalyticGaussian {
    pub fn new(ctx: &GramContext, sigma: f64, model: &ResolvedModel) -> Result<Self> {
        let frame = ctx.frame();
        let big_r = ctx.rank();
        let n = ctx.n();
        let lambda: Vec<f64> = ctx.eigenvalues().iter().take(big_r).cloned().collect();
        let scores = frame.scores().clone();
        let theta = model.fit(ctx)?;

        // spectrum of the fitted covariance, aligned with psi
        let (lt, moves_mean, shift): (Vec<f64>, bool, Option<DVector<f64>>) = match model {
            ResolvedModel::Full => (lambda.clone(), true, None),
            ResolvedModel::KnownMean(m0) => {
                let c = frame.directions().tr_mul(&(frame.mean() - m0));
                (lambda.clone(), false, Some(c))
            }
            ResolvedModel::Rank(r) => {
                let r = (*r).min(big_r);
                let lt = (0..big_r).map(|t| if t < r { lambda[t] } else { 0.0 }).collect();
                (lt, true, None)
            }
            ResolvedModel::Known(_) => {
                return Err(Error::InvalidArgument(
                    "known model has a zero derivative; no linearization needed".into(),
                ))
            }
        };
        let a: Vec<f64> = lt.iter().map(|l| 1.0 / (1.0 + 2.0 * sigma * l)).collect();
        let b: Vec<f64> = lt.iter().map(|l| 1.0 / (1.0 + 4.0 * sigma * l)).collect();
        let mut za = scores.clone();
        for j in 0..n {
            for t in 0..big_r {
                let z = scores[(j, t)] + shift.as_ref().map_or(0.0, |c| c[t]);
                za[(j, t)] = a[t] * z;
            }
        }
        let kernel = OuterKernel::Gaussian { sigma };
        let n_eval = embed_eval_points(&kernel, &theta, frame.points())?;
        let norm0 = b.iter().map(|v| v.ln()).sum::<f64>() * 0.5;
        let norm0 = norm0.exp();

        let structure = match model {
            ResolvedModel::Rank(r) => {
                let r = (*r).min(big_r);
                let ratio = DMatrix::from_fn(r, big_r - r, |s, t| {
                    let t = t + r;
                    lambda[s] / (lambda[s] - lambda[t])
                });
                Structure::Rank { r, ratio }
            }
            _ if big_r * big_r > n => {
                let g = &za * scores.transpose();
                let g2 = g.map(|v| v * v);
                let alpha = DVector::from_fn(n, |i, _| {
                    (0..big_r).map(|t| a[t] * scores[(i, t)].powi(2)).sum()
                });
                let sb = DMatrix::from_fn(n, big_r, |i, t| scores[(i, t)] * b[t]);
                let h = &sb * scores.transpose();
                let h2 = h.map(|v| v * v);
                let beta = DVector::from_fn(n, |i, _| {
                    (0..big_r).map(|t| b[t] * scores[(i, t)].powi(2)).sum()
                });
                Structure::KernelTrick {
                    g,
                    g2,
                    alpha,
                    h,
                    h2,
                    beta,
                }
            }
            _ => Structure::Dense,
        };
        Ok(Self {
            sigma,
            scores,
            moves_mean,
            n_eval,
            za,
            a,
            b,
            norm0,
            structure,
        })
    }

    /// Force the `O(n R^2)` path (used to cross-check the kernel-trick path).
    pub fn dense(mut self) -> Self {
        if matches!(self.structure, Structure::KernelTrick { .. }) {
            self.structure = Structure::Dense;
        }
        self
    }

    pub fn derivative(&self, w: &DVector<f64>) -> Derivative {
        let s = self.sigma;
        let n = self.scores.nrows();
        let nf = n as f64;
        let big_r = self.scores.ncols();
        let (tr_a, lin, quad, norm_sq) = match &self.structure {
            Structure::Dense => {
                let dir = Direction::from_weights(&self.scores, w);
                let u = if self.moves_mean {
                    dir.mean.clone()
                } else {
                    DVector::zeros(big_r)
                };
                let v = &dir.cov;
                let tr_a: f64 = (0..big_r).map(|t| self.a[t] * v[(t, t)]).sum();
                let lin = &self.za * &u;
                let m = &self.za * v;
                let quad = DVector::from_fn(n, |j, _| m.row(j).dot(&self.za.row(j)));
                let ub: f64 = (0..big_r).map(|t| self.b[t] * u[t] * u[t]).sum();
                let tr_b: f64 = (0..big_r).map(|t| self.b[t] * v[(t, t)]).sum();
                let mut tr_bb = 0.0;
                for x in 0..big_r {
                    for y in 0..big_r {
                        tr_bb += self.b[x] * self.b[y] * v[(x, y)] * v[(x, y)];
                    }
                }
                (tr_a, lin, quad, self.norm_formula(ub, tr_b, tr_bb))
            }
            Structure::KernelTrick {
                g,
                g2,
                alpha,
                h,
                h2,
                beta,
            } => {
                let tr_a = w.dot(alpha) / nf;
                let lin = if self.moves_mean {
                    g * w / nf
                } else {
                    DVector::zeros(n)
                };
                let quad = g2 * w / nf;
                let ub = if self.moves_mean {
                    w.dot(&(h * w)) / (nf * nf)
                } else {
                    0.0
                };
                let tr_b = w.dot(beta) / nf;
                let tr_bb = w.dot(&(h2 * w)) / (nf * nf);
                (tr_a, lin, quad, self.norm_formula(ub, tr_b, tr_bb))
            }
            Structure::Rank { r, ratio } => {
                let r = *r;
                let u = self.scores.tr_mul(w) / nf;
                let top = self.scores.columns(0, r);
                let wtop = DMatrix::from_fn(n, r, |i, c| w[i] * top[(i, c)]);
                let v_rr = top.tr_mul(&wtop) / nf;
                let rest = self.scores.columns(r, big_r - r);
                let cross = wtop.tr_mul(&rest) / nf;
                let g = cross.component_mul(ratio);
                let tr_a: f64 = (0..r).map(|t| self.a[t] * v_rr[(t, t)]).sum();
                let lin = &self.za * &u;
                let za_top = self.za.columns(0, r);
                let za_rest = self.za.columns(r, big_r - r);
                let m1 = za_top * &v_rr;
                let m2 = za_rest * g.transpose();
                let quad = DVector::from_fn(n, |j, _| {
                    (0..r)
                        .map(|c| za_top[(j, c)] * (m1[(j, c)] + 2.0 * m2[(j, c)]))
                        .sum()
                });
                let ub: f64 = (0..big_r).map(|t| self.b[t] * u[t] * u[t]).sum();
                let tr_b: f64 = (0..r).map(|t| self.b[t] * v_rr[(t, t)]).sum();
                let mut tr_bb = 0.0;
                for x in 0..r {
                    for y in 0..r {
                        tr_bb += self.b[x] * self.b[y] * v_rr[(x, y)].powi(2);
                    }
                    for t in 0..(big_r - r) {
                        tr_bb += 2.0 * self.b[x] * g[(x, t)].powi(2);
                    }
                }
                (tr_a, lin, quad, self.norm_formula(ub, tr_b, tr_bb))
            }
        };
        let lin_w = if self.moves_mean { 2.0 * s } else { 0.0 };
        let evals = DVector::from_fn(n, |j, _| {
            self.n_eval[j] * (-s * tr_a + lin_w * lin[j] + 2.0 * s * s * quad[j])
        });
        Derivative { evals, norm_sq }
    }

    fn norm_formula(&self, ub: f64, tr_b: f64, tr_bb: f64) -> f64 {
        let s = self.sigma;
        let mean_part = if self.moves_mean { 2.0 * s * ub } else { 0.0 };
        (self.norm0 * (mean_part + s * s * tr_b * tr_b + 2.0 * s * s * tr_bb)).max(0.0)
    }
}

/// Central differences through the closed-form embeddings.
#[derive(Debug, Clone)]
pub struct FiniteDifference {
    kernel: OuterKernel,
    model: ResolvedModel,
    mean: DVector<f64>,
    lambda: DVector<f64>,
    psi: DMatrix<f64>,
    scores: DMatrix<f64>,
    points: DMatrix<f64>,
    scale: f64,
}

impl FiniteDifference {
    pub fn new(ctx: &GramContext, kernel: OuterKernel, model: &ResolvedModel, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        let empirical = ResolvedModel::empirical(ctx);
        let r = ctx.rank();
        Ok(Self {
            kernel,
            model: model.clone(),
            mean: empirical.mean().clone(),
            lambda: ctx.eigenvalues().rows(0, r).into_owned(),
            psi: ctx.frame().directions().clone(),
            scores: ctx.frame().scores().clone(),
            points: ctx.frame().points().clone(),
            scale: h * empirical.norm().max(1.0),
        })
    }

    /// `T(theta_hat + t delta)` in frame coordinates.
    pub fn perturbed(&self, dir: &Direction, t: f64) -> Result<GaussianParam> {
        let mean = &self.mean + &self.psi * &dir.mean * t;
        let mut coords = &dir.cov * t;
        for s in 0..self.lambda.len() {
            coords[(s, s)] += self.lambda[s];
        }
        let cov = Spectrum::from_basis_coords(&self.psi, &coords, true, 0.0)?;
        let theta = GaussianParam::new(mean, cov)?;
        self.model.apply(&theta)
    }

    pub fn derivative_along(&self, dir: &Direction) -> Result<Derivative> {
        let n = self.points.nrows();
        let norm = dir.norm();
        if norm == 0.0 || self.model.is_constant() {
            return Ok(Derivative::zero(n));
        }
        let eps = self.scale / norm;
        let wrap = |e: Error| Error::Linearization(format!("perturbed parameter invalid at step {eps:e}: {e}"));
        let plus = self.perturbed(dir, eps).map_err(wrap)?;
        let minus = self.perturbed(dir, -eps).map_err(wrap)?;
        let np = embed_eval_points(&self.kernel, &plus, &self.points).map_err(wrap)?;
        let nm = embed_eval_points(&self.kernel, &minus, &self.points).map_err(wrap)?;
        let evals = (np - nm) / (2.0 * eps);
        let cpp = embed_cross_inner(&self.kernel, &plus, &plus).map_err(wrap)?;
        let cpm = embed_cross_inner(&self.kernel, &plus, &minus).map_err(wrap)?;
        let cmm = embed_cross_inner(&self.kernel, &minus, &minus).map_err(wrap)?;
        let norm_sq = ((cpp - 2.0 * cpm + cmm) / (4.0 * eps * eps)).max(0.0);
        Ok(Derivative { evals, norm_sq })
    }

    pub fn derivative(&self, w: &DVector<f64>) -> Result<Derivative> {
        self.derivative_along(&Direction::from_weights(&self.scores, w))
    }
}

/// Whichever linearization a test run uses.
#[derive(Debug, Clone)]
pub enum Linearizer {
    Zero(usize),
    Analytic(Box<AnalyticGaussian>),
    FiniteDifference(Box<FiniteDifference>),
}

impl Linearizer {
    pub fn derivative(&self, w: &DVector<f64>) -> Result<Derivative> {
        match self {
            Linearizer::Zero(n) => Ok(Derivative::zero(*n)),
            Linearizer::Analytic(a) => Ok(a.derivative(w)),
            Linearizer::FiniteDifference(f) => f.derivative(w),
        }
    }
}
