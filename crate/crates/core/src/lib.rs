//! Selective inference for regions of interest found by piecewise-linear
//! neural networks.
//!
//! Given a model (as a JSON computation graph), an image and its noise
//! covariance, the engine thresholds the model's score map into a region of
//! interest, then tests the mean contrast between that region and a
//! comparison region. The p-value conditions on the region having been
//! selected from the same image, so it stays valid despite the data being
//! used twice.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod error;
pub mod hypothesis;
pub mod inference;
pub mod interval;
pub mod ir;
pub mod simulate;
pub mod synth;
pub mod tensor;
pub mod truncnorm;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalUnion};
pub use tensor::Tensor;
