//! Regression with a missing covariate over vertically partitioned data.
//!
//! Sites hold disjoint column blocks of the same subjects. Estimators run
//! against an in-process [`netsim::Network`] that records every shared
//! aggregate, so a fit can be audited for what left each site.
//!
//! The numerical core is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod bootstrap;
pub mod csvio;
pub mod datagen;
pub mod dual_logistic;
pub mod error;
pub mod harness;
pub mod ipw;
pub mod linalg;
pub mod mi;
pub mod model;
pub mod netsim;
pub mod pooled;
pub mod powell;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{
    bootstrap_index_sample, build_vertical, CiKind, Diagnostics, FitResult, Method, PartitionLayout, PoolTracker,
    PooledData, VerticalDataset, INTERCEPT, Z_975,
};
pub use rng::SeedTree;
pub use scalar::Scalar;

pub type Dataset = VerticalDataset<f64>;
pub type Fit = FitResult<f64>;
pub type Pooled = PooledData<f64>;
pub type Mat = Matrix<f64>;
