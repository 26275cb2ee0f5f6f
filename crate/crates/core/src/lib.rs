//! Simulation core for a driven, lossy cavity coupled to an ensemble of
//! two-level qubits, restricted to the single-excitation sector.
//!
//! The crate computes complex transmission through the cavity from the
//! dissipative resolvent of the coupled system, runs seeded disorder
//! ensembles over qubit frequencies, and provides the closed-form
//! large-ensemble oracles plus the nonlinear estimators used to recover
//! scaling laws from simulated (or measured) data. A separate module models
//! flux-tunable qubit devices (junction asymmetry, flux crosstalk, readout
//! dressing) so that frequency-setting pipelines can be calibrated and
//! round-tripped entirely in software.
//!
//! All frequencies and rates are linear frequencies in MHz.
//!
//! With the default `parallel` feature the embarrassingly parallel loops
//! (ensemble realizations, spectrum grid points) fan out over a rayon pool;
//! results are reduced in index order so outputs are bitwise identical to a
//! sequential run.

pub mod calibration;
pub mod disorder;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod model;
mod quad;
pub mod response;

pub use error::{Error, Result};
pub use model::{CavityParams, QubitParams, SystemConfig};
