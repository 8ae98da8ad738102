//! Hypothesis verification against the depth image: rendering, re-scoring,
//! projective ICP refinement and the consistency and silhouette/edge
//! filters.

mod camera;
mod icp;
mod render;
mod scene;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, TriangleMesh};
use crate::matching::{HypothesisStatus, PoseHypothesis};

pub use camera::{CameraIntrinsics, DepthImage};
pub use icp::{projective_icp, projective_icp_with, IcpMetric, IcpReport, MIN_CORRESPONDENCES};
pub use render::{render_depth, PixelRect, RenderModel, Rendering, NEAR_PLANE};
pub use scene::{dilate, edge_map, normal_map, SceneView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub rescore_top: usize,
    pub icp_top: usize,
    /// Depth agreement tolerance in mm; `None` means 2 × leaf.
    pub fit_thresh: Option<f64>,
    pub icp_iters: usize,
    /// ICP correspondence distance limit in mm; `None` means 2.5 × leaf.
    pub icp_reject_dist: Option<f64>,
    /// ICP correspondence normal-angle limit, radians.
    pub icp_reject_angle: f64,
    pub occlusion_margin: f64,
    pub nonconsistent_max: f64,
    pub edge_depth_jump: f64,
    pub edge_dilation: usize,
    pub edge_overlap_min: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            rescore_top: 500,
            icp_top: 200,
            fit_thresh: None,
            icp_iters: 15,
            icp_reject_dist: None,
            icp_reject_angle: 45f64.to_radians(),
            occlusion_margin: 10.0,
            nonconsistent_max: 0.1,
            edge_depth_jump: 40.0,
            edge_dilation: 2,
            edge_overlap_min: 0.3,
        }
    }
}

impl VerifyParams {
    pub fn fit_thresh(&self, leaf: f64) -> f64 {
        self.fit_thresh.unwrap_or(2.0 * leaf)
    }

    pub fn icp_reject_dist(&self, leaf: f64) -> f64 {
        self.icp_reject_dist.unwrap_or(2.5 * leaf)
    }

    pub fn resolved(&self, leaf: f64) -> Self {
        Self {
            fit_thresh: Some(self.fit_thresh(leaf)),
            icp_reject_dist: Some(self.icp_reject_dist(leaf)),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.rescore_top > 0
            && self.icp_iters > 0
            && self.icp_reject_angle > 0.0
            && self.occlusion_margin > 0.0
            && self.edge_depth_jump > 0.0
            && self.fit_thresh.is_none_or(|v| v > 0.0)
            && self.icp_reject_dist.is_none_or(|v| v > 0.0);
        let fractions = [self.nonconsistent_max, self.edge_overlap_min]
            .iter()
            .all(|f| *f > 0.0 && *f < 1.0);
        if positive && fractions {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid verification params {self:?}")))
        }
    }
}

/// Model geometry used during verification: the subsampled cloud drives
/// ICP; the mesh, when present, is used for rendering instead of splats.
#[derive(Debug, Clone)]
pub struct VerifyModel {
    pub cloud: OrientedPointCloud,
    pub mesh: Option<TriangleMesh>,
    pub leaf: f64,
}

impl VerifyModel {
    pub fn new(cloud: OrientedPointCloud, mesh: Option<TriangleMesh>, leaf: f64) -> Self {
        Self { cloud, mesh, leaf }
    }

    pub fn render_model(&self) -> RenderModel<'_> {
        match &self.mesh {
            Some(m) => RenderModel::Mesh(m),
            None => RenderModel::Points {
                cloud: &self.cloud,
                leaf: self.leaf,
            },
        }
    }

    pub fn render(&self, pose: &crate::geometry::RigidTransform, cam: &CameraIntrinsics, buf: &mut Rendering) {
        buf.clear();
        buf.draw(&self.render_model(), pose, cam);
    }
}

/// Fraction of rendered pixels with a scene measurement whose depth agrees
/// with the scene within the fit threshold. 0 without evidence.
pub fn rescore(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
    buf: &mut Rendering,
) -> f64 {
    model.render(&h.pose, &scene.cam, buf);
    let fit = p.fit_thresh(model.leaf);
    let mut measured = 0usize;
    let mut agree = 0usize;
    for (_, _, i) in buf.mask_pixels() {
        let s = scene.depth_at(i);
        if s <= 0.0 {
            continue;
        }
        measured += 1;
        if (buf.depth.data[i] - s).abs() < fit {
            agree += 1;
        }
    }
    if measured == 0 {
        0.0
    } else {
        agree as f64 / measured as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub keep: bool,
    /// Measured mask pixels the hypothesis renders in front of the scene.
    pub nonconsistent: usize,
    pub measured: usize,
    pub occluded: usize,
}

impl ConsistencyCheck {
    pub fn fraction(&self) -> f64 {
        if self.measured == 0 {
            1.0
        } else {
            self.nonconsistent as f64 / self.measured as f64
        }
    }
}

/// Rejects hypotheses that would hide scene surface the sensor measured
/// behind them: a measured mask pixel is non-consistent when the render is
/// nearer than `scene − occlusion_margin`.
pub fn consistency_check(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
    buf: &mut Rendering,
) -> ConsistencyCheck {
    model.render(&h.pose, &scene.cam, buf);
    let mut c = ConsistencyCheck {
        keep: false,
        nonconsistent: 0,
        measured: 0,
        occluded: 0,
    };
    for (_, _, i) in buf.mask_pixels() {
        let s = scene.depth_at(i);
        if s <= 0.0 {
            continue;
        }
        c.measured += 1;
        let r = buf.depth.data[i];
        if r < s - p.occlusion_margin {
            c.nonconsistent += 1;
        } else if r > s + p.occlusion_margin {
            c.occluded += 1;
        }
    }
    c.keep = c.measured > 0 && c.fraction() <= p.nonconsistent_max;
    c
}

pub fn consistency_filter(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
) -> bool {
    consistency_check(h, scene, model, p, &mut Rendering::new(&scene.cam)).keep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub keep: bool,
    pub silhouette: usize,
    pub on_edge: usize,
}

impl EdgeCheck {
    pub fn rate(&self) -> f64 {
        if self.silhouette == 0 {
            0.0
        } else {
            self.on_edge as f64 / self.silhouette as f64
        }
    }
}

/// Fraction of silhouette pixels (mask pixels with a 4-neighbor outside
/// the mask or the image) lying on the dilated scene edge map.
pub fn edge_check(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
    buf: &mut Rendering,
) -> EdgeCheck {
    model.render(&h.pose, &scene.cam, buf);
    let (w, hgt) = (buf.width(), buf.height());
    let mut c = EdgeCheck {
        keep: false,
        silhouette: 0,
        on_edge: 0,
    };
    for (x, y, i) in buf.mask_pixels() {
        let boundary = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == hgt
            || !buf.mask[i - 1]
            || !buf.mask[i + 1]
            || !buf.mask[i - w]
            || !buf.mask[i + w];
        if !boundary {
            continue;
        }
        c.silhouette += 1;
        if scene.is_edge(i) {
            c.on_edge += 1;
        }
    }
    c.keep = c.silhouette > 0 && c.rate() >= p.edge_overlap_min;
    c
}

pub fn edge_overlap_filter(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
) -> bool {
    edge_check(h, scene, model, p, &mut Rendering::new(&scene.cam)).keep
}

/// Filter outcome of the selected hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdicts {
    pub consistency: ConsistencyCheck,
    pub edge: Option<EdgeCheck>,
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub best: Option<PoseHypothesis>,
    pub verdicts: Option<FilterVerdicts>,
    /// Every re-scored hypothesis in final ranking order with its status.
    pub ranked: Vec<PoseHypothesis>,
}

fn rank(a: &PoseHypothesis, b: &PoseHypothesis) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.votes.cmp(&a.votes))
        .then(a.scene_ref.cmp(&b.scene_ref))
}

/// Re-scores the `rescore_top` most voted hypotheses, refines the best
/// `icp_top` of them with projective ICP and re-scores the refined poses,
/// then walks the ranking and returns the first hypothesis that passes the
/// consistency filter and then the edge filter.
pub fn verify_pipeline(
    hyps: &[PoseHypothesis],
    scene: &SceneView,
    model: &VerifyModel,
    p: &VerifyParams,
) -> VerifyOutcome {
    let mut by_votes: Vec<PoseHypothesis> = hyps.to_vec();
    by_votes.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.scene_ref.cmp(&b.scene_ref)));
    by_votes.truncate(p.rescore_top);

    let mut rescored: Vec<PoseHypothesis> = by_votes
        .par_iter()
        .map_init(
            || Rendering::new(&scene.cam),
            |buf, h| {
                let mut h = *h;
                h.score = rescore(&h, scene, model, p, buf);
                h.status = HypothesisStatus::Rescored;
                h
            },
        )
        .collect();
    rescored.sort_by(rank);

    let n_icp = p.icp_top.min(rescored.len());
    let refined: Vec<PoseHypothesis> = rescored[..n_icp]
        .par_iter()
        .map_init(
            || Rendering::new(&scene.cam),
            |buf, h| {
                let mut r = projective_icp(h, scene, model, p).hypothesis;
                r.score = rescore(&r, scene, model, p, buf);
                r
            },
        )
        .collect();
    let mut ranked: Vec<PoseHypothesis> = refined;
    ranked.extend_from_slice(&rescored[n_icp..]);
    ranked.sort_by(rank);

    let mut buf = Rendering::new(&scene.cam);
    let mut best = None;
    let mut verdicts = None;
    for h in ranked.iter_mut() {
        let consistency = consistency_check(h, scene, model, p, &mut buf);
        if !consistency.keep {
            h.status = HypothesisStatus::RejectedConsistency;
            continue;
        }
        let edge = edge_check(h, scene, model, p, &mut buf);
        if !edge.keep {
            h.status = HypothesisStatus::RejectedEdge;
            continue;
        }
        h.status = HypothesisStatus::Accepted;
        best = Some(*h);
        verdicts = Some(FilterVerdicts {
            consistency,
            edge: Some(edge),
        });
        break;
    }
    VerifyOutcome {
        best,
        verdicts,
        ranked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{RigidTransform, Vec3};

    const LEAF: f64 = 8.0;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 570.0,
            fy: 570.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    fn model(size: Vec3) -> VerifyModel {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), size);
        VerifyModel::new(mesh.sample_surface(LEAF).unwrap(), Some(mesh), LEAF)
    }

    fn view(parts: &[TriangleMesh]) -> SceneView {
        let depth = if parts.is_empty() {
            DepthImage::new(640, 480)
        } else {
            render_depth(
                &RenderModel::Mesh(&TriangleMesh::merged(parts)),
                &RigidTransform::identity(),
                &cam(),
            )
            .depth
        };
        let p = VerifyParams::default();
        SceneView::new(depth, cam(), LEAF, p.edge_depth_jump, p.edge_dilation).unwrap()
    }

    fn wall(z: f64) -> TriangleMesh {
        TriangleMesh::cuboid(Vec3::new(0.0, 0.0, z + 50.0), Vec3::new(3000.0, 3000.0, 100.0))
    }

    fn object_pose() -> RigidTransform {
        RigidTransform::from_axis_angle(&Vec3::new(1.0, 1.0, 0.3).normalize(), 0.4, Vec3::new(10.0, -20.0, 900.0))
    }

    fn placed(m: &VerifyModel, pose: &RigidTransform) -> TriangleMesh {
        m.mesh.as_ref().unwrap().transformed(pose)
    }

    fn score(h: &RigidTransform, scene: &SceneView, m: &VerifyModel) -> f64 {
        rescore(&PoseHypothesis::new(*h, 1), scene, m, &VerifyParams::default(), &mut Rendering::new(&cam()))
    }

    #[test]
    fn rescore_examples() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let g = object_pose();
        let scene = view(&[placed(&m, &g)]);
        assert!(score(&g, &scene, &m) >= 0.99);
        let shifted = RigidTransform::from_translation(Vec3::new(100.0, 0.0, 0.0)).compose(&g);
        assert!(score(&shifted, &scene, &m) <= 0.1);
        assert_eq!(score(&g, &view(&[]), &m), 0.0);
    }

    #[test]
    fn rescore_is_a_fraction() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let scene = view(&[placed(&m, &object_pose()), wall(1000.0)]);
        for k in 0..10 {
            let h = RigidTransform::from_axis_angle(&Vec3::y(), 0.3 * k as f64, Vec3::new(5.0 * k as f64, 0.0, 850.0 + 10.0 * k as f64));
            let s = score(&h, &scene, &m);
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn consistency_fixtures() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let p = VerifyParams::default();
        let g = object_pose();
        let scene = view(&[placed(&m, &g), wall(1000.0)]);
        let mut buf = Rendering::new(&cam());
        let exact = consistency_check(&PoseHypothesis::new(g, 1), &scene, &m, &p, &mut buf);
        assert!(exact.keep);
        assert_eq!(exact.nonconsistent, 0);

        let only_wall = view(&[wall(1000.0)]);
        let floating = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1000.0 - 100.0 - 20.0));
        let c = consistency_check(&PoseHypothesis::new(floating, 1), &only_wall, &m, &p, &mut buf);
        assert!(!c.keep);
        assert!(c.fraction() > 0.99);

        // box between camera and object covering its left half
        let occluder = TriangleMesh::cuboid(Vec3::new(-25.0, -20.0, 700.0), Vec3::new(70.0, 150.0, 20.0));
        let occluded = view(&[placed(&m, &g), wall(1000.0), occluder]);
        let c = consistency_check(&PoseHypothesis::new(g, 1), &occluded, &m, &p, &mut buf);
        assert!(c.keep);
        assert!(c.occluded as f64 > 0.3 * c.measured as f64);
        assert!(consistency_filter(&PoseHypothesis::new(g, 1), &occluded, &m, &p));
    }

    #[test]
    fn edge_fixtures() {
        let p = VerifyParams::default();
        let mut buf = Rendering::new(&cam());
        let plate = model(Vec3::new(120.0, 120.0, 4.0));
        let on_wall = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1002.0));
        let scene = view(&[wall(1000.0)]);
        let h = PoseHypothesis::new(on_wall, 1);
        assert!(consistency_check(&h, &scene, &plate, &p, &mut buf).keep);
        let e = edge_check(&h, &scene, &plate, &p, &mut buf);
        assert!(!e.keep);
        assert_eq!(e.on_edge, 0);
        assert!(e.silhouette > 0);

        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let g = object_pose();
        let scene = view(&[placed(&m, &g), wall(1000.0)]);
        let e = edge_check(&PoseHypothesis::new(g, 1), &scene, &m, &p, &mut buf);
        assert!(e.keep);
        assert!(e.rate() > 0.9);
        assert!(edge_overlap_filter(&PoseHypothesis::new(g, 1), &scene, &m, &p));
    }

    #[test]
    fn edge_threshold_semantics() {
        // plate flush with a wall that ends halfway across it
        let plate = model(Vec3::new(120.0, 120.0, 4.0));
        let half_wall = TriangleMesh::cuboid(Vec3::new(-1500.0, 0.0, 1050.0), Vec3::new(3000.0, 3000.0, 100.0));
        let scene = view(&[half_wall]);
        let h = PoseHypothesis::new(RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1002.0)), 1);
        let rate = edge_check(&h, &scene, &plate, &VerifyParams::default(), &mut Rendering::new(&cam())).rate();
        assert!(rate > 0.0 && rate < 1.0, "{rate}");
        let mut p = VerifyParams::default();
        p.edge_overlap_min = rate;
        assert!(edge_overlap_filter(&h, &scene, &plate, &p));
        p.edge_overlap_min = rate + 1e-9;
        assert!(!edge_overlap_filter(&h, &scene, &plate, &p));
    }

    #[test]
    fn pipeline_accepts_single_perfect_hypothesis() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let g = object_pose();
        let scene = view(&[placed(&m, &g), wall(1000.0)]);
        let out = verify_pipeline(&[PoseHypothesis::new(g, 5)], &scene, &m, &VerifyParams::default());
        let best = out.best.unwrap();
        assert_eq!(best.status, HypothesisStatus::Accepted);
        assert!(best.pose.rotation_angle_to(&g).to_degrees() < 0.05);
        assert!(best.pose.translation_distance_to(&g) < 0.05);
        assert!(best.score >= 0.99);
        assert!(out.verdicts.unwrap().edge.unwrap().keep);
    }

    #[test]
    fn pipeline_returns_none_when_everything_is_filtered() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let scene = view(&[wall(1000.0)]);
        let floating = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 880.0));
        let out = verify_pipeline(&[PoseHypothesis::new(floating, 5)], &scene, &m, &VerifyParams::default());
        assert!(out.best.is_none());
        assert!(out.verdicts.is_none());
        assert_eq!(out.ranked[0].status, HypothesisStatus::RejectedConsistency);
    }

    #[test]
    fn pipeline_prefers_true_pose_over_decoys() {
        let m = model(Vec3::new(80.0, 60.0, 40.0));
        let g = object_pose();
        let scene = view(&[placed(&m, &g), wall(1000.0)]);
        let floating = PoseHypothesis::new(RigidTransform::from_translation(Vec3::new(200.0, 0.0, 880.0)), 50);
        let mut truth = PoseHypothesis::new(g, 3);
        truth.scene_ref = 7;
        let out = verify_pipeline(&[floating, truth], &scene, &m, &VerifyParams::default());
        assert_eq!(out.best.unwrap().scene_ref, 7);
    }

    #[test]
    fn params_validation() {
        assert!(VerifyParams::default().validate().is_ok());
        let mut p = VerifyParams::default();
        p.edge_overlap_min = 1.5;
        assert!(p.validate().is_err());
        let r = VerifyParams::default().resolved(LEAF);
        assert_eq!(r.fit_thresh, Some(16.0));
        assert_eq!(r.icp_reject_dist, Some(20.0));
    }
}
