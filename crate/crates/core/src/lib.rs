//! Full-covariance Gaussian models of protein backbone ensembles over
//! internal coordinates (dihedrals and bond angles), with covariance induced
//! by maximum-entropy constraints on per-atom Cartesian fluctuations.
//!
//! The pipeline: reconstruct the mean structure, differentiate atom positions
//! with respect to every angle ([`jacobian`]), build a diagonal κ-prior from
//! the data, then add `2 Σ λ_m G_m` to its precision with multipliers chosen
//! so each atom fluctuates by a target amount ([`constraint`]).

pub mod config;
pub mod constraint;
pub mod ensemble;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod io;
pub mod jacobian;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
