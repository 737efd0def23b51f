// `!(x > 0)` is the NaN-rejecting form used throughout; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alignment;
pub mod dataset;
pub mod elicit;
pub mod error;
pub mod lmm;
pub mod nullsim;
pub mod optim;
pub mod oracles;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod specificity;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type VarianceFit64 = lmm::VarianceFit<f64>;
pub type VarianceFit32 = lmm::VarianceFit<f32>;
pub type BlupTable64 = lmm::BlupTable<f64>;
pub type FitOptions64 = lmm::FitOptions<f64>;
