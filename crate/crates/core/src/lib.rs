//! Finely stratified two-stage randomized experiments: matching units into
//! homogeneous groups, sampling and assigning treatment with exact rational
//! propensities, optimal propensities under a budget, and ATE inference.

pub mod design;
pub mod estimate;
pub mod error;
pub mod matching;
pub mod randomize;
pub mod matrix;
pub mod optimal;
pub mod pilot;
pub mod propensity;
pub mod rng;
pub mod sim;
pub mod units;

pub use design::{DesignResult, GroupPartition};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use propensity::{Propensity, PropensityMap};
pub use rng::RandomSource;
pub use units::{load_units, standardize, ColumnSchema, UnitTable};
