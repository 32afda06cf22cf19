//! Dyadic length and thickness calculus, constructive decompositions, and
//! lacunary surface-measure operators on sparse dyadic grids.

pub mod content;
pub mod czd;
pub mod decompose;
pub mod dense;
pub mod dilation;
pub mod dyadic;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod operators;
pub mod selftest;
pub mod surface;

pub use dyadic::{CubeCollection, DyadicCube, GridFunction, PointwiseOp};
pub use error::{Error, Result};
