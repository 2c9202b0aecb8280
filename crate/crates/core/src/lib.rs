//! Varying-coefficient quantile regression with polynomial splines.
//!
//! The conditional τ-quantile is modeled as `q_τ(t, x) = Σ_j β_j(t) x_j` with
//! each `β_j` a spline in the index variable `t`. The crate provides
//!
//! * [`basis`]: B-spline and truncated-power bases and design rows,
//! * [`qrsolve`]: an exact check-loss solver (interior point plus crossover),
//! * [`vcm`]: model fitting and coefficient-curve evaluation,
//! * [`knotsel`]: stepwise knot selection scored by an adapted Schwarz criterion,
//! * [`hyptest`]: Rao-score and bootstrap likelihood-ratio tests of constancy,
//! * [`sim`]: a seeded Monte Carlo harness for power and type I error studies.

pub mod basis;
pub mod error;
pub mod hyptest;
pub mod knotsel;
mod linalg;
pub mod qrsolve;
pub mod sim;
pub mod stats;
pub mod vcm;

pub use error::{Result, VcqrError};
