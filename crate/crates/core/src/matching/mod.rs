//! Local matching: Hough voting per scene reference point, peak extraction
//! and pose clustering.

mod cluster;
mod voting;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

pub use cluster::cluster_hypotheses;
pub use voting::{
    alpha_bin, delta_angle, match_scene, reference_points, vote_reference, Accumulator,
    SceneIndex, VoteLog, VoteScratch,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Every n-th subsampled scene point serves as a reference point.
    pub scene_ref_stride: usize,
    pub n_alpha_bins: u32,
    /// Translation threshold in mm; `None` means 0.1 × model diameter.
    pub cluster_trans_thresh: Option<f64>,
    /// Rotation threshold, radians.
    pub cluster_rot_thresh: f64,
    pub max_hypotheses_out: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            scene_ref_stride: 5,
            n_alpha_bins: 30,
            cluster_trans_thresh: None,
            cluster_rot_thresh: 12f64.to_radians(),
            max_hypotheses_out: 500,
        }
    }
}

impl MatchParams {
    pub fn cluster_trans_thresh(&self, diameter: f64) -> f64 {
        self.cluster_trans_thresh.unwrap_or(0.1 * diameter)
    }

    pub fn resolved(&self, diameter: f64) -> Self {
        Self {
            cluster_trans_thresh: Some(self.cluster_trans_thresh(diameter)),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene_ref_stride == 0 || self.max_hypotheses_out == 0 {
            return Err(Error::InvalidParam(
                "scene_ref_stride and max_hypotheses_out must be positive".into(),
            ));
        }
        if self.n_alpha_bins < 2 {
            return Err(Error::InvalidParam("n_alpha_bins must be at least 2".into()));
        }
        if !(self.cluster_rot_thresh > 0.0) || self.cluster_trans_thresh.is_some_and(|t| !(t > 0.0))
        {
            return Err(Error::InvalidParam("cluster thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    Raw,
    Clustered,
    Rescored,
    Refined,
    RejectedConsistency,
    RejectedEdge,
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    /// Model-to-scene transform.
    pub pose: RigidTransform,
    pub votes: u32,
    /// Depth agreement in [0, 1], set during verification.
    pub score: f64,
    /// Scene reference point that produced (or seeded) the hypothesis.
    pub scene_ref: usize,
    pub status: HypothesisStatus,
    /// ICP ran out of correspondences.
    pub low_support: bool,
}

impl PoseHypothesis {
    pub fn new(pose: RigidTransform, votes: u32) -> Self {
        Self {
            pose,
            votes,
            score: 0.0,
            scene_ref: 0,
            status: HypothesisStatus::Raw,
            low_support: false,
        }
    }
}
