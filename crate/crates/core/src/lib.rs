//! Numerical laboratory for the non-minimality of horizontal spirals in
//! rank-2 stratified models.
//!
//! A spiral `κ(t) = t·e^{iφ(t)}` in the plane lifts to a horizontal curve.
//! Cutting one spire and compensating the end-point displacement with small
//! translations of earlier arcs gives a competitor with the same end-points;
//! the [`lab`] module scans for a cut where the competitor is certifiably
//! shorter.
//!
//! Modules, bottom up: [`model`] (weights, monomial layers, remainders),
//! [`spiral`] (phases and the planar curve), [`quadrature`] and [`calculus`]
//! (integrals along the spiral), [`surgery`] (the competitor and its lift),
//! [`solver`] (device selection and the end-point equations) and [`lab`].

// `!(a < b)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod error;
pub mod lab;
pub mod model;
pub mod quadrature;
pub mod solver;
pub mod spiral;
pub mod surgery;

pub use error::{Error, Result};
pub use model::StratifiedModel;
pub use quadrature::QuadratureConfig;
pub use spiral::{Phase, Spiral};
