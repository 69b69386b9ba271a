//! Camera pose registration from semantic keypoints.
//!
//! Every view back-projects its 2D keypoints to 3D using the current pose and
//! a per-keypoint depth. Back-projections of the same semantic keypoint should
//! coincide, so poses and depths are optimized jointly to pull each cluster
//! onto its centroid, both in 3D and after re-projecting the centroid into
//! each image.
//!
//! Module map:
//! - [`geom`]: camera model, 6D rotations, projection maps.
//! - [`objective`]: centroids, loss and analytic gradients.
//! - [`optimizer`]: depth initialization and the Adam loop.
//! - [`eval`]: pose perturbation, similarity alignment, error metrics.
//! - [`scenegen`]: synthetic scenes with exact ground truth.
//! - [`io`]: scene and camera-export JSON formats.
//! - [`cli`]: the `kronc` command line.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod objective;
pub mod optimizer;
pub mod scenegen;

pub use error::{Error, Result};
pub use geom::{back_project, world_to_image, CameraIntrinsics, CameraPose, KeypointObservation, Rot6D, Scene};
