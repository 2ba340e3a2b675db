//! Markov semigroups built from second-order diffusion generators.
//!
//! The pipeline is: a continuous [`generator::GeneratorSpec`] is discretized
//! into a Q-matrix ([`discretize`]), exponentiated by uniformization
//! ([`semigroup`]), and checked against H-functionals ([`htheorem`]) and an
//! independent particle simulation ([`oracle`]). [`pawula`] builds explicit
//! witnesses that operators of order three or more break the maximum
//! principle.

pub mod discretize;
pub mod error;
pub mod expr;
pub mod generator;
pub mod grid;
pub mod htheorem;
pub mod numeric;
pub mod oracle;
pub mod pawula;
pub mod semigroup;

pub use error::{Error, Result};
pub use grid::{BoundaryCondition, Grid, ScalarField};
