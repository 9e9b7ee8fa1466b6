//! Numerical laboratory for G-deformations of positively curved surface
//! pieces in a Riemannian 3-space: ambient geometry, discretized immersions,
//! exact deformation residuals with their linearizations, and a least-squares
//! Riemann-Hilbert solver whose headline output is the dimension of the
//! solution family (the kernel of the discretized boundary-value problem).

pub mod ambient;
pub mod dual;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod linearize;
pub mod rhsolver;
pub mod sparse;
pub mod surface;

pub use error::CoreError;
