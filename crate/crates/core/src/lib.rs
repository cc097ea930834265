//! Leading-order spectra, metastable hierarchies and symmetry reduction for
//! reversible Markovian jump processes on finite state spaces.

pub mod asymptotic;
pub mod equivariant;
pub mod error;
pub mod hierarchy;
pub mod io;
pub mod lattice;
pub mod model;
pub mod scalar;
pub mod spectra;
pub mod symgroup;

pub use error::{Error, Result};
pub use scalar::{DoubleDouble, Real, Scalar};

use num_rational::Rational64;

pub type Spec = model::ProcessSpec<f64>;
pub type ExactSpec = model::ProcessSpec<Rational64>;
pub type Estimate = asymptotic::EigenEstimate<f64>;
pub type ExactEstimate = asymptotic::EigenEstimate<Rational64>;
