//! Excursion sets of Gaussian random fields.
//!
//! Builds GP posteriors from a handful of evaluations, picks simulation
//! points that make affine quasi-realizations faithful to full conditional
//! simulations, and summarizes the resulting random sets.

pub mod analysis;
pub mod bvn;
pub mod criterion;
pub mod designs;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod optpoints;
pub mod randomsets;
pub mod simulate;
pub mod testfunctions;

pub use designs::{Design, DesignKind};
pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec, MeanSpec};
