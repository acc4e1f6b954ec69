//! Multiscale substructuring for nonlinear elliptic problems with rough
//! coefficients, driven by exact or learned local Dirichlet-to-Neumann maps.

pub mod dtn;
pub mod experiments;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod newton;
pub mod substructure;
pub mod surrogate;

pub use error::{Error, Result};
