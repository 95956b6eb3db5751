//! Depth as a continuous function of image coordinates.
//!
//! A [`DepthField`] pairs a multi-scale [`FeaturePyramid`] with
//! [`DecoderParams`]; it can be queried at any real-valued `(x, y)`,
//! differentiated exactly for surface normals, sampled uniformly over the
//! surface it describes, and trained on sparse supervision. Companion
//! modules build high-frequency evaluation masks, score predictions with δ
//! accuracy, and read and write the on-disk formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod depth_map;
pub mod error;
pub mod field;
pub mod fixture;
pub mod geometry;
pub mod hfmask;
pub mod io;
pub mod metrics;
pub mod sampler;
pub mod scalar;
pub mod training;

pub use autodiff::{depth_jacobian, fd_jacobian, fd_param_gradients, loss_gradients, Dual2, ParamGradients};
pub use depth_map::DepthMap;
pub use error::{Error, Result};
pub use field::{query_pyramid, DecoderParams, DepthField, FeatureLevel, FeaturePyramid, QueryCoord};
pub use geometry::{area_weight, backproject, surface_normal, CameraIntrinsics, PointCloud};
