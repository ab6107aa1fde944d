//! Solver laboratory for monotone inclusions `0 ∈ A x`.
//!
//! The crate couples three views of the same problem:
//!
//! * [`flow`]: the continuous closed-loop system
//!   `ẋ + x − (I + λA)⁻¹x = 0` where the feedback `λ(t)` solves
//!   `λ‖x − (I + λA)⁻¹x‖^{p−1} = θ` at every instant,
//! * [`hpe`]: its implicit discretization, a large-step hybrid proximal
//!   extragradient framework driven by a pluggable oracle,
//! * [`tensor`]: the accelerated `p`th-order oracle built on Taylor
//!   surrogates of the smooth part of `A`.
//!
//! Operators are closed-world structured data ([`operator::OperatorSpec`]) so
//! that resolvents, derivatives and brute-force oracles are all computable.
//! [`metrics`] provides gap, residue and distance functions together with
//! log–log rate fitting, and [`checks`] bundles the property suites that the
//! `monoflow check` command runs.

// `!(a <= b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod flow;
pub mod hpe;
pub mod metrics;
pub mod operator;
pub mod problems;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use operator::{Matrix, OperatorSpec, Vector};
pub use problems::ProblemInstance;
