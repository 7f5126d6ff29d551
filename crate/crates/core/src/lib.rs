//! Distributed primal-dual interior-point solver for tree-coupled semidefinite programs.

pub mod chordal;
pub mod error;
pub mod io;
pub mod ipm;
pub mod iqc;
pub mod linalg;
pub mod model;
pub mod mpassing;
pub mod symcone;

pub use error::{Error, Result};
