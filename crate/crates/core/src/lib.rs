//! Numerical laboratory for sharp functional inequalities: convex duality on
//! tabulated functions, uniform convexity of Lebesgue norms, Sobolev and
//! Hardy-Littlewood-Sobolev deficits on periodic grids, and a radial
//! fast-diffusion solver whose lifted Sobolev deficit is monitored in time.

pub mod duality;
pub mod error;
pub mod fdflow;
pub mod grid;
pub mod lp;
pub mod numeric;
pub mod radial;
pub mod sobolev;

pub use error::{Error, Result};
