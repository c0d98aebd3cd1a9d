//! Input-to-state stability certificates for networked control systems
//! scheduled by Try-Once-Discard or Round-Robin protocols, with variable
//! sampling and communication delays that may exceed the sampling interval.
//!
//! The crate assembles the LMI conditions, decides them with a built-in
//! semidefinite solver, searches the largest certified span `τ_M`, and
//! cross-checks certificates by simulating the hybrid closed loop and
//! evaluating the Lyapunov–Krasovskii functionals along the trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod linalg;
pub mod lmi;
pub mod lyapunov;
pub mod model;
pub mod scenario;
pub mod sdp;
pub mod sdpa;
pub mod search;
pub mod sim;

pub use error::{NcsError, Result};
