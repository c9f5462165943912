//! Spectral analysis of first-order symmetric ODE systems
//! J y' - B(t) y = lambda Delta(t) y with possibly unequal deficiency
//! indices: boundary triplets, m-functions for lambda-dependent boundary
//! conditions, Green kernels, matrix spectral functions via Stieltjes
//! inversion, eigenfunction-expansion checks, and the reduction of odd-order
//! scalar differential expressions to such systems.

pub mod blockspace;
pub mod boundary;
pub mod config;
pub mod runner;
pub mod error;
pub mod linalg;
pub mod ode;
pub mod oddorder;
pub mod propagator;
pub mod quad;
pub mod system;
pub mod spectral;
pub mod weyl;

pub use blockspace::{build_j, inertia, nevanlinna_defect, BlockSignature, Inertia};
pub use error::{Result, WkError};
pub use system::{EndpointDescriptor, MatrixSampler, SymmetricSystem};
