//! Capture-point model predictive balance control for a linear inverted
//! pendulum with a flywheel.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: closed-form pendulum and capture-point dynamics.
//! - [`qp`]: dense convex QP solver.
//! - [`predictor`]: condensed horizon prediction matrices.
//! - [`mpc`]: per-axis capture-point MPC with ankle, hip and footstep relaxation.
//! - [`stepping`]: footstep position and step-time QP.
//! - [`gait`]: footstep plans, ZMP and capture-point references.
//! - [`plant`]: ground-truth simulation with pushes and fall detection.
//! - [`baselines`]: comparison controllers and closed-form offsets.
//! - [`controller`]: the closed loop tying the pieces together.
//! - [`harness`]: scenarios, disturbance-polygon sweeps and reports.

pub mod baselines;
pub mod controller;
pub mod error;
pub mod gait;
pub mod harness;
pub mod model;
pub mod mpc;
pub mod plant;
pub mod predictor;
pub mod qp;
pub mod stepping;

pub use error::{Error, Result};
