//! Parallel maximum state entropy pretraining.
//!
//! A population of Gaussian policy heads sharing one trunk is trained so that the
//! union of the states visited across many replicas of an environment has maximal
//! k-NN entropy. The best head can then seed PPO on a sparse-reward goal task.

// `!(x > 0.0)` is how contracts here reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod envs;
pub mod error;
pub mod estimators;
pub mod jumpstart;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
