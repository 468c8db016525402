//! Regression with spatially misaligned covariates by cokrig-and-regress:
//! a generalized Kronecker Matérn model for the covariates, cokriging to
//! the response locations, a spatial linear mixed model on the predictions,
//! and a two-phase parametric bootstrap for inference.
//!
//! Numerical code is generic over [`Real`] (`f64` or `f32`); the aliases
//! below fix the scalar for the common case.

pub mod baselines;
pub mod basis;
pub mod bench;
pub mod bootstrap;
pub mod cokrige;
pub mod covariate_field;
pub mod error;
pub mod gaussian;
pub mod geo;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod slmm;
pub mod special;
pub mod stats;

pub use error::{CnrError, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Location = geo::Location<f64>;
pub type LocationSet = geo::LocationSet<f64>;
pub type MaternParams = geo::MaternParams<f64>;
pub type CovariateFieldParams = covariate_field::CovariateFieldParams<f64>;
pub type MisalignedDataset = pipeline::MisalignedDataset<f64>;
pub type CnrConfig = pipeline::CnrConfig<f64>;
pub type CnrFit = pipeline::CnrFit<f64>;
pub type SlmmFit = slmm::SlmmFit<f64>;
pub type BootstrapResult = bootstrap::BootstrapResult<f64>;
pub type ScenarioConfig = bench::ScenarioConfig<f64>;

pub type Location32 = geo::Location<f32>;
pub type LocationSet32 = geo::LocationSet<f32>;
pub type MaternParams32 = geo::MaternParams<f32>;
pub type CovariateFieldParams32 = covariate_field::CovariateFieldParams<f32>;
pub type MisalignedDataset32 = pipeline::MisalignedDataset<f32>;
pub type CnrConfig32 = pipeline::CnrConfig<f32>;
pub type CnrFit32 = pipeline::CnrFit<f32>;
pub type SlmmFit32 = slmm::SlmmFit<f32>;
pub type BootstrapResult32 = bootstrap::BootstrapResult<f32>;
pub type ScenarioConfig32 = bench::ScenarioConfig<f32>;
