//! Spectral-Galerkin toolkit for Hamilton-Jacobi-Bellman equations driven by
//! diagonal Ornstein-Uhlenbeck processes.
//!
//! The semilinear Kolmogorov equation
//! `v_t + L v + psi(sqrt(Q) grad v) + l = 0`, `v(T) = phi`
//! is solved two independent ways: Picard iteration on the mild formula
//! ([`picard`]) and a regression-based forward-backward scheme ([`fbsde`]).
//! The [`control`] layer turns a solved value field into a feedback law and
//! certifies it with the fundamental relation.

pub mod basis;
pub mod control;
pub mod error;
pub mod fbsde;
pub mod functions;
pub mod hamiltonian;
pub mod mollify;
pub mod optim;
pub mod oracle;
pub mod picard;
pub mod ou_sim;
pub mod quadrature;
pub mod regression;
pub mod spectral;

pub use error::{Error, Result};
