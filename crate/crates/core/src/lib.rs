//! Data-driven predictive control (D²PC) for unknown discrete-time LTI plants.
//!
//! The crate identifies a non-minimal state map from recorded input/output
//! episodes by pseudoinverse, splits MIMO plants into parallel MISO channels,
//! and runs condensed receding-horizon control on the identified model. DeePC
//! and regularized DeePC baselines, a model-based MPC oracle and a seeded
//! benchmark harness are included for comparison.
//!
//! Module map:
//!
//! - [`numerics`]: pseudoinverse, Hankel matrices, rank and persistent excitation.
//! - [`plant`]: ground-truth simulation, noise, references and benchmark systems.
//! - [`datadriven`]: data matrices, identification, propagation and the horizon predictor.
//! - [`qp`]: dense operator-splitting QP solver and condensing routines.
//! - [`controllers`]: MPC oracle, DeePC, rDeePC and D²PC behind one step contract.
//! - [`harness`]: MAE/FR metrics, seeded experiments and table reproduction.

pub mod controllers;
pub mod datadriven;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};
pub use numerics::Matrix;
