//! Stationary structural VARs with an ultra-long-run (ULR) Ornstein–Uhlenbeck
//! component.
//!
//! The observed array is `y_T(t) = y_s(t) + A y_l(t/T)`: a short-run VAR(1)
//! evolving in calendar time plus an `L`-dimensional OU process evaluated on
//! a time scale whose unit grows with the sample size. The crate covers
//!
//! * exact discretization and theoretical second-order structure ([`model`]),
//! * seeded simulation of the array and of classic local-to-unity variants
//!   ([`simulator`]),
//! * the standard, distant-lag, local and long-run sample autocovariances
//!   ([`acf`]),
//! * the moment / local-mean / PCA / OU-likelihood estimation pipeline
//!   ([`estimator`]),
//! * plug-in and estimation-risk adjusted (confidence belt + Bonferroni
//!   min-max) long-horizon prediction bounds ([`prediction`]),
//! * reproducible Monte-Carlo experiments ([`experiments`]) and the end-to-end
//!   application to user data ([`pipeline`]).

pub mod acf;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod prediction;
pub mod rng;
pub mod series;
pub mod simulator;
pub mod svg;
pub mod table;

pub use error::{Error, Result};
pub use series::Series;
