//! Frozen Gaussian kernels, a parametrix solver and simulation experiments
//! for degenerate Kolmogorov-type diffusions
//!
//! ```text
//! dX1 = F1(t, X1, X2) dt + σ(t, X1, X2) dW
//! dX2 = F2(t, X1, X2) dt
//! ```
//!
//! where the noise only reaches the second block through `D1F2`.

pub mod cli;
pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod kernel;
pub mod parametrix;
pub mod quadrature;
pub mod sde;
pub mod stats;
pub mod tolerances;
pub mod transport;

pub use error::{Error, Result};
