//! Point-cloud feature learning with X-Conv.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`graph`], [`params`], [`nn`], [`optim`], [`checkpoint`]:
//!   a small `f64` reverse-mode autodiff engine with ADAM and a binary
//!   checkpoint format.
//! - [`geometry`]: point sets, exact kNN, dilated neighbor sampling,
//!   farthest-point and random downsampling, resampling augmentation.
//! - [`xconv`]: the X-Conv operator and its ablated variant.
//! - [`network`]: classification and Conv-DeConv segmentation networks.
//! - [`data`]: the `XPC1` cloud format, synthetic shape generators, metrics.
//! - [`train`] and [`config`]: training, evaluation, ablation and
//!   feature-concentration analysis driven by a TOML run configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod network;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;
pub mod xconv;

pub use error::{Error, Result};
pub use geometry::PointSet;
pub use graph::{Graph, Mode, NodeId};
pub use params::{ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;
