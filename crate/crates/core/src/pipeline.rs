//! End-to-end configuration, model training and single-object detection.

use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evaluation::{PoseRecord, VSDParams};
use crate::geometry::{exact_diameter, RigidTransform, TriangleMesh};
use crate::io::LoadedModel;
use crate::matching::{cluster_hypotheses, match_scene, MatchParams};
use crate::ppf::{ModelTable, QuantizationParams};
use crate::preprocess::{preprocess, SubsampleParams};
use crate::verification::{
    verify_pipeline, CameraIntrinsics, DepthImage, FilterVerdicts, SceneView, VerifyModel,
    VerifyParams,
};

/// Model-side settings resolved into absolute values at training time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// Subsampling leaf as a fraction of the model diameter.
    pub leaf_frac: f64,
    pub normal_cluster_angle: f64,
    pub merge_neighbor_clusters: bool,
    pub n_dist_bins: u32,
    pub n_angle_bins: u32,
    pub noise_fraction: f64,
    #[serde(default)]
    pub min_pair_normal_angle: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        let sp = SubsampleParams::with_leaf(1.0);
        let q = QuantizationParams::with_diameter(1.0);
        Self {
            leaf_frac: 0.05,
            normal_cluster_angle: sp.normal_cluster_angle,
            merge_neighbor_clusters: sp.merge_neighbor_clusters,
            n_dist_bins: q.n_dist_bins,
            n_angle_bins: q.n_angle_bins,
            noise_fraction: q.noise_fraction,
            min_pair_normal_angle: q.min_pair_normal_angle,
        }
    }
}

impl TrainParams {
    pub fn subsample(&self, leaf: f64) -> SubsampleParams {
        SubsampleParams {
            leaf,
            normal_cluster_angle: self.normal_cluster_angle,
            merge_neighbor_clusters: self.merge_neighbor_clusters,
        }
    }

    pub fn quantization(&self, d_max: f64) -> QuantizationParams {
        QuantizationParams {
            d_max,
            n_dist_bins: self.n_dist_bins,
            n_angle_bins: self.n_angle_bins,
            noise_fraction: self.noise_fraction,
            min_pair_normal_angle: self.min_pair_normal_angle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leaf_frac > 0.0 && self.leaf_frac <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "leaf_frac must lie in (0, 1], got {}",
                self.leaf_frac
            )));
        }
        self.subsample(1.0).validate()?;
        self.quantization(1.0).validate()
    }
}

/// How the depth image becomes a scene cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Radius (mm) of the normal-map neighborhood; `None` means one leaf.
    pub normal_radius: Option<f64>,
    /// Every n-th pixel in each direction is back-projected.
    pub pixel_stride: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            normal_radius: None,
            pixel_stride: 2,
        }
    }
}

impl SceneParams {
    pub fn normal_radius(&self, leaf: f64) -> f64 {
        self.normal_radius.unwrap_or(leaf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainParams,
    pub scene: SceneParams,
    pub matching: MatchParams,
    pub verify: VerifyParams,
    pub vsd: VSDParams,
    /// Millimeters per depth-image count.
    pub depth_scale: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainParams::default(),
            scene: SceneParams::default(),
            matching: MatchParams::default(),
            verify: VerifyParams::default(),
            vsd: VSDParams::default(),
            depth_scale: 0.1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.matching.validate()?;
        self.verify.validate()?;
        self.vsd.validate()?;
        if !(self.depth_scale > 0.0) {
            return Err(Error::InvalidParam("depth_scale must be positive".into()));
        }
        if self.scene.pixel_stride == 0 || self.scene.normal_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::InvalidParam("invalid scene params".into()));
        }
        Ok(())
    }

    /// Fills every model-dependent default with its value for `table`.
    pub fn resolved(&self, table: &ModelTable) -> Self {
        let leaf = table.leaf();
        Self {
            scene: SceneParams {
                normal_radius: Some(self.scene.normal_radius(leaf)),
                ..self.scene
            },
            matching: self.matching.resolved(table.diameter()),
            verify: self.verify.resolved(leaf),
            ..*self
        }
    }
}

/// Builds the model table. Meshes are sampled on their surface at a
/// quarter leaf before subsampling; bare clouds are used as they are.
pub fn train_model(model: &LoadedModel, p: &TrainParams) -> Result<ModelTable> {
    p.validate()?;
    let diameter = match &model.mesh {
        Some(m) => exact_diameter(&m.vertices),
        None => model.cloud.diameter(),
    };
    if !(diameter > 0.0) {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: model.cloud.len(),
        });
    }
    let leaf = p.leaf_frac * diameter;
    let dense = match &model.mesh {
        Some(m) => m.sample_surface(leaf / 4.0)?,
        None => model.cloud.clone(),
    };
    ModelTable::build(&dense, &p.subsample(leaf), &p.quantization(diameter))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub scene_ms: f64,
    pub matching_ms: f64,
    pub clustering_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub scene_points: usize,
    pub raw_hypotheses: usize,
    pub clustered_hypotheses: usize,
    pub rejected_consistency: usize,
    pub rejected_edge: usize,
}

fn serialize_pose<S: Serializer>(pose: &Option<RigidTransform>, s: S) -> Result<S::Ok, S::Error> {
    pose.as_ref().map(PoseRecord::from).serialize(s)
}

/// Outcome of one detection. `pose` is `None` when every hypothesis was
/// filtered out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    #[serde(serialize_with = "serialize_pose")]
    pub pose: Option<RigidTransform>,
    pub score: f64,
    pub votes: u32,
    pub low_support: bool,
    pub verdicts: Option<FilterVerdicts>,
    pub stats: DetectionStats,
    pub timings: StageTimings,
}

impl DetectionResult {
    /// Equality ignoring timings.
    pub fn same_outcome(&self, other: &DetectionResult) -> bool {
        self.pose == other.pose
            && self.score.to_bits() == other.score.to_bits()
            && self.votes == other.votes
            && self.low_support == other.low_support
            && self.verdicts == other.verdicts
            && self.stats == other.stats
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// A trained model ready to detect in depth images.
#[derive(Debug, Clone)]
pub struct Detector {
    table: ModelTable,
    model: VerifyModel,
    config: PipelineConfig,
}

impl Detector {
    /// `mesh`, when given, is rendered during verification instead of
    /// point splats; it must be in the same frame as the table's model.
    pub fn new(table: ModelTable, mesh: Option<TriangleMesh>, config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let config = config.resolved(&table);
        let model = VerifyModel::new(table.model().clone(), mesh, table.leaf());
        Ok(Self {
            table,
            model,
            config,
        })
    }

    pub fn table(&self) -> &ModelTable {
        &self.table
    }

    pub fn verify_model(&self) -> &VerifyModel {
        &self.model
    }

    /// The configuration with every model-dependent default filled in.
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn scene_view(&self, depth: DepthImage, cam: &CameraIntrinsics) -> Result<SceneView> {
        let c = &self.config;
        SceneView::new(
            depth,
            *cam,
            c.scene.normal_radius(self.table.leaf()),
            c.verify.edge_depth_jump,
            c.verify.edge_dilation,
        )
    }

    pub fn detect(&self, depth: &DepthImage, cam: &CameraIntrinsics) -> Result<DetectionResult> {
        let start = Instant::now();
        let c = &self.config;
        let mut out = DetectionResult {
            pose: None,
            score: 0.0,
            votes: 0,
            low_support: false,
            verdicts: None,
            stats: DetectionStats::default(),
            timings: StageTimings::default(),
        };

        let t = Instant::now();
        let view = self.scene_view(depth.clone(), cam)?;
        let raw = view.cloud(c.scene.pixel_stride);
        let scene = if raw.is_empty() {
            raw
        } else {
            preprocess(&raw, self.table.subsample_params())?
        };
        out.stats.scene_points = scene.len();
        out.timings.scene_ms = ms(t);

        let t = Instant::now();
        let hyps = match_scene(&self.table, &scene, &c.matching);
        out.stats.raw_hypotheses = hyps.len();
        out.timings.matching_ms = ms(t);

        let t = Instant::now();
        let clustered = cluster_hypotheses(&hyps, &c.matching, self.table.diameter());
        out.stats.clustered_hypotheses = clustered.len();
        out.timings.clustering_ms = ms(t);

        let t = Instant::now();
        let v = verify_pipeline(&clustered, &view, &self.model, &c.verify);
        out.timings.verification_ms = ms(t);
        for h in &v.ranked {
            match h.status {
                crate::matching::HypothesisStatus::RejectedConsistency => {
                    out.stats.rejected_consistency += 1
                }
                crate::matching::HypothesisStatus::RejectedEdge => out.stats.rejected_edge += 1,
                _ => {}
            }
        }
        if let Some(best) = v.best {
            out.pose = Some(best.pose);
            out.score = best.score;
            out.votes = best.votes;
            out.low_support = best.low_support;
            out.verdicts = v.verdicts;
        }
        out.timings.total_ms = ms(start);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::SyntheticObject;
    use crate::geometry::Vec3;
    use crate::verification::{render_depth, RenderModel};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 572.4,
            fy: 573.6,
            cx: 325.3,
            cy: 242.0,
            width: 640,
            height: 480,
        }
    }

    fn loaded() -> LoadedModel {
        let mesh = SyntheticObject::mesh();
        let cloud = mesh.sample_surface(5.0).unwrap();
        LoadedModel {
            cloud,
            mesh: Some(mesh),
        }
    }

    #[test]
    fn config_json_round_trip() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
        assert!(c.validate().is_ok());
        assert!(PipelineConfig { depth_scale: 0.0, ..c }.validate().is_err());
    }

    #[test]
    fn training_uses_leaf_fraction() {
        let m = loaded();
        let table = train_model(&m, &TrainParams::default()).unwrap();
        let d = exact_diameter(&m.mesh.as_ref().unwrap().vertices);
        assert!((table.leaf() - 0.05 * d).abs() < 1e-9);
        assert!(table.model().len() > 50);
    }

    #[test]
    fn self_render_detection() {
        let m = loaded();
        let table = train_model(&m, &TrainParams::default()).unwrap();
        let leaf = table.leaf();
        let det = Detector::new(table, m.mesh.clone(), &PipelineConfig::default()).unwrap();
        let gt = RigidTransform::from_axis_angle(&Vec3::new(0.4, -1.0, 0.3), 2.1, Vec3::new(15.0, -10.0, 780.0));
        let depth = render_depth(&RenderModel::Mesh(m.mesh.as_ref().unwrap()), &gt, &cam()).depth;
        let r = det.detect(&depth, &cam()).unwrap();
        let pose = r.pose.expect("detection");
        assert!(pose.rotation_angle_to(&gt).to_degrees() < 1.0, "{r:?}");
        assert!(pose.translation_distance_to(&gt) < leaf, "{r:?}");
    }

    #[test]
    fn empty_scene_detects_nothing() {
        let m = loaded();
        let table = train_model(&m, &TrainParams::default()).unwrap();
        let det = Detector::new(table, None, &PipelineConfig::default()).unwrap();
        let r = det.detect(&DepthImage::new(640, 480), &cam()).unwrap();
        assert!(r.pose.is_none());
        assert_eq!(r.stats.scene_points, 0);
    }
}
