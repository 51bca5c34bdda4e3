//! Simulation engine for an endemic SEIR-type model with distributed
//! latency and temporary-immunity delays.
//!
//! * [`kernels`]: compact piecewise-linear delay densities and convolution.
//! * [`history`]: dense Hermite trajectory storage and CSV export.
//! * [`model`]: parameters, right-hand sides, lag schemes, initial data.
//! * [`solver`]: Dormand–Prince window integrator and the two drivers.
//! * [`diagnostics`]: non-negativity, conservation, jump and distance checks.
//! * [`cli`]: configuration files, runs and the convergence experiment.

pub mod cli;
pub mod diagnostics;
pub mod history;
pub mod kernels;
pub mod model;
pub mod solver;

pub use history::{Compartment, StateVector, Trajectory};
pub use kernels::CompactKernel;
pub use model::{LagScheme, Params, ScenarioConfig};
