//! Kernel normality test for samples living in a (possibly infinite
//! dimensional) Hilbert space.
//!
//! The sample is accessed through its Gram matrix only. A Gaussian model
//! `N(m, Sigma)` is fitted, embedded into the RKHS of an outer kernel, and
//! compared with the empirical mean embedding. Critical values come from a
//! fast weighted bootstrap (or the classical parametric one).

pub mod baselines;
pub mod bench;
pub mod embeddings;
pub mod error;
pub mod io;
pub mod knt;
pub mod linalg;
pub mod null_models;
pub mod rank_select;
pub mod rng;
pub mod stats;
pub mod synthdata;

pub use embeddings::{GaussianParam, OuterKernel};
pub use error::{Error, Result};
pub use knt::{run_test, Bootstrap, Linearization, TestConfig, TestReport};
pub use linalg::{DataMode, Dataset, GramContext};
pub use null_models::{KnownParams, NullModel, ParamCoords};
pub use rank_select::{alpha_schedule, select_rank, AlphaMode, RankSelectConfig, RankSelectReport};
