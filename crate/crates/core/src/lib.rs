//! Poisson U-statistics of random geometric graphs: chaos decomposition,
//! contraction norms, geometric bounds, regimes and limit checks.

pub mod contraction;
pub mod error;
pub mod geobounds;
pub mod limits;
pub mod numeric;
pub mod regimes;
pub mod rules;
pub mod sampler;
pub mod scalar;
pub mod ustat;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CellGrid64 = contraction::CellGrid<f64>;
pub type CellGrid32 = contraction::CellGrid<f32>;
pub type GridKernel64 = contraction::GridKernel<f64>;
pub type GridKernel32 = contraction::GridKernel<f32>;
