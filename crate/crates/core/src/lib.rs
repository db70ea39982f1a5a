//! Inference of hybrid kinematic models for articulated objects.
//!
//! Given an unsegmented time series of relative poses between two object
//! parts and the actions applied to them, this crate
//!
//! 1. detects changepoints in the governing articulation model with an
//!    action-conditional Bayesian MAP filter ([`changepoint`]),
//! 2. fits rigid / prismatic / revolute models to each segment with
//!    MLESAC and BIC-penalized evidence ([`models`]),
//! 3. compiles the result into an executable hybrid automaton with guards,
//!    invariants and a deterministic simulator ([`automaton`]).
//!
//! [`synth`] generates labeled ground-truth corpora for the evaluation
//! regimes, and [`io`] holds the CSV/JSON formats shared with the CLI.

pub mod automaton;
pub mod changepoint;
pub mod error;
pub mod geometry;
pub mod io;
pub mod models;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Pose, PoseDistance, PoseVelocity};
pub use models::{ArticulationModel, Configuration, ModelKind, NoiseModel};
