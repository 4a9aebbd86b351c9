#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cases;
pub mod config;
pub mod env;
pub mod error;
pub mod grid;
pub mod model;
pub mod planner;
pub mod safety;
pub mod scalar;
pub mod seed;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};

/// Single-precision model used for training and checkpoints.
pub type Model32 = model::Model<f32>;
/// Double-precision model used by the gradient checks.
pub type Model64 = model::Model<f64>;
pub type Injections64 = grid::Injections<f64>;
pub type PowerFlow64 = grid::PowerFlowSolution<f64>;
pub type PfOptions64 = grid::PfOptions<f64>;
