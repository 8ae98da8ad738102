//! 6D object pose estimation from depth data with point pair features.
//!
//! The crate follows the classic two-stage layout:
//!
//! * **global modeling** ([`ppf::ModelTable`]) discretizes every oriented
//!   model point pair and stores it in a hash table keyed by the feature;
//! * **local matching** ([`matching`]) votes, per scene reference point, for
//!   (model point, rotation angle) correspondences, extracts the peak and
//!   clusters the resulting poses.
//!
//! Hypotheses are then re-scored against the depth image, refined with
//! projective ICP and screened by a consistency and a silhouette/edge filter
//! ([`verification`]). [`evaluation`] provides the Visible Surface
//! Discrepancy metric and a synthetic scene generator used as ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod ppf;
pub mod preprocess;
pub mod verification;

pub use error::{Error, Result};
pub use geometry::{OrientedPointCloud, RigidTransform, Vec3};
pub use pipeline::{DetectionResult, Detector, PipelineConfig};
