//! Numerical lab for skew products `F(x, y) = (f(x), G(x, y))` over expanding
//! circle maps with contracting fibers on `[0, 1]`.

pub mod analysis;
pub mod base_dynamics;
pub mod cli;
pub mod error;
pub mod fiber_measure;
pub mod geometry;
pub mod skew_measure;
pub mod transfer_operator;

pub use error::{Error, Result};
