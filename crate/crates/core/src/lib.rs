//! Small convolutional classifiers, alpha-beta layer-wise relevance propagation,
//! and bounding-box relevance analytics.
//!
//! The pipeline is split into stages that each consume and produce plain values
//! (or files, see [`format`]):
//!
//! * [`nn`] builds and runs sequential networks over [`Tensor`]s.
//! * [`training`] fits them with softmax cross-entropy and plain SGD.
//! * [`lrp`] decomposes a class logit back onto the input pixels.
//! * [`region`] sums relevance inside detector boxes.
//! * [`analytics`] groups those sums into per-genre tables.
//! * [`imaging`] and [`dataset`] deal with images and manifests.

pub mod analytics;
pub mod dataset;
mod error;
pub mod format;
pub mod imaging;
pub mod lrp;
pub mod nn;
pub mod region;
pub mod rng;
mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
