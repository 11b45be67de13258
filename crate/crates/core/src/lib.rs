//! Numerical toolkit for the Dirichlet problem of prescribed `sigma_k`
//! curvature for spacelike graphs in Minkowski space.

pub mod config;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod symfun;
pub mod verify;

pub use error::{Error, Result};
