//! Numerical constructions of total renormalizations on the cylinder
//! `T x M`, `T = R/Z`, `M = [0, 1]` (or a circle fiber).
//!
//! A *plugin* of step `sigma = 2^-k` is a diffeomorphism equal to the rigid
//! rotation `R_sigma` on `Delta = [0, sigma) x M`, with bounded first-return
//! time to `Delta` and whose forward orbit of `Delta` covers the cylinder.
//! Its *output* is the rescaled first-return map `H ∘ g^tau ∘ H^-1` with
//! `H(theta, y) = (theta/sigma, y)`. This crate builds plugins realizing a
//! prescribed output (rotations, twists, fiber maps, zoom/insert maps, star
//! products and a full compiler for arbitrary targets), transfers invariant
//! densities between a plugin and its output, and verifies the Lie-algebra
//! identities behind the constructions.
//!
//! All numerics are generic over the scalar type through [`real::Real`];
//! `f64` aliases for the main types live at the crate root.

pub mod circle;
pub mod construct;
pub mod error;
pub mod expr;
pub mod field;
pub mod gridmap;
pub mod lang;
pub mod lielab;
pub mod mapexpr;
pub mod measure;
pub mod plugin;
pub mod profile;
pub mod quad;
pub mod real;

pub use error::{Error, Result};

/// Double-precision aliases for the main domain types.
pub type Angle64 = circle::Angle<f64>;
pub type CylPoint64 = circle::CylPoint<f64>;
pub type SampleGrid64 = circle::SampleGrid<f64>;
pub type ScalarProfile64 = profile::ScalarProfile<f64>;
pub type ScalarExpr64 = expr::ScalarExpr<f64>;
pub type CylField64 = field::CylField<f64>;
pub type MapExpr64 = mapexpr::MapExpr<f64>;
pub type Plugin64 = plugin::Plugin<f64>;
pub type DensitySampler64 = measure::DensitySampler<f64>;
