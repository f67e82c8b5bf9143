//! High-order isoparametric finite elements for the Poisson problem on smooth
//! planar domains, together with the diagnostic machinery used to study its
//! pointwise convergence: curved-mesh generation and verification, nodal
//! interpolation onto the curved space, regularized delta functions and the
//! associated discrete Green functions, and dyadic error decompositions.

pub mod assembly;
pub(crate) mod dense;
pub mod error;
pub mod femspace;
pub mod geometry;
pub mod greens;
pub mod meshing;
pub mod vec2;

pub use error::{Error, Result};
