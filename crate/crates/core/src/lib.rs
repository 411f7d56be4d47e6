pub mod error;
pub mod experiments;
pub mod fbi;
pub mod geometry;
pub mod output;
pub mod quantize;
pub mod scalar;
pub mod schur;
pub mod spectral;
pub mod svg;
pub mod symbols;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` instances of the scalar-generic types.
pub type Model = symbols::ModelInstance<f64>;
pub type Escape = geometry::EscapeField<f64>;
pub type Lattice = geometry::PhaseLattice<f64>;
pub type Box2 = symbols::PhaseBox<f64>;
pub type Deformation = geometry::DeformationCheck<f64>;
pub type Trajectory = geometry::Trajectory<f64>;
pub type Complex = num_complex::Complex64;
