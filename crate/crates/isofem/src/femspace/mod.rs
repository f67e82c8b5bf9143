//! Reference element, quadrature, the isoparametric finite element space,
//! interpolation operators, and error norms.

pub mod jet;
pub mod norms;
pub mod quadrature;
pub mod reference;
pub mod space;

pub use jet::{field_physical_jet, Jet2};
pub use norms::{boundary_patch, error_norms, lemma31_ratio, ErrorNorms, LpNorm};
pub use quadrature::{build_quadrature, QuadratureRule};
pub use reference::ReferenceElement;
pub use space::{FeSpace, Field};
