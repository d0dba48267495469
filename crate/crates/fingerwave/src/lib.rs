//! Travelling-wave solver for gravity-driven finger flow in unsaturated
//! porous media.
//!
//! On a truncated vertical strip the library solves the coupled system
//!
//! ```text
//!   c ds/dz = div( k(s) (grad p + g e_z) )
//!   c tau ds/dz = [p - pc(s)]_+
//! ```
//!
//! for the wave profile (s, p) moving at speed c, with prescribed data on
//! the inflow (bottom) boundary, an unknown constant pressure on the top
//! boundary, and a prescribed total flux through the top. Discretization is
//! P1 finite elements on a structured triangulation; the nonlinear coupling
//! is resolved by a damped fixed-point iteration. On top of the solver sit
//! diagnostics for selecting the travelling-wave speed and for classifying
//! the computed profile (saturated finger vs. profile reaching the top).

pub mod assemble;
pub mod config;
pub mod constitutive;
pub mod continuation;
pub mod diagnostics;
pub mod export;
pub mod linsolve;
pub mod mesh;
pub mod run;
pub mod scheme;
pub mod system;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("linear solve failed: {message} (residual {residual:e})")]
    Solver { message: String, residual: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
