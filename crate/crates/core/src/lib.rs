//! Multilevel Monte Carlo estimation of expected quantities of interest of
//! transient linear machine models, with Parareal time parallelism on the
//! finest level and a closed-form cost model for the combination.

pub mod costmodel;
pub mod error;
pub mod executor;
pub mod mlmc;
pub mod model;
pub mod parareal;
pub mod rng;
pub mod timeint;

pub use error::{Error, Result};
pub use nalgebra;
pub use executor::{Executor, Ledger, Mode};
pub use mlmc::{mc_estimate, mlmc_estimate, EstimatorOptions, EstimatorResult, PararealOptions, SamplingPolicy};
pub use model::{Hierarchy, LinearSystemModel, ModelFamily, ParameterVector};
pub use parareal::{parareal_solve, PararealConfig, PararealResult};
pub use rng::RandomStream;
pub use timeint::{implicit_euler_solve, propagate, Trajectory};
