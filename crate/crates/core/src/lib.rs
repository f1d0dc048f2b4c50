//! Fundamental solutions of non-divergence parabolic operators
//! `P = d/dt - a^ij D_ij` by a modified Levi parametrix, with a
//! finite-difference oracle and Gaussian-bound checks.

pub mod bounds;
pub mod coefficients;
pub mod error;
pub mod frozen_kernel;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod parametrix;
pub mod quadrature;
pub mod report;

pub use error::{Error, Result};
pub use grid::{KernelGrid, SpaceTime};
