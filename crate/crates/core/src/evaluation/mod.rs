//! Visible Surface Discrepancy, recall aggregation and synthetic scenes
//! with known ground truth.

mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::verification::{CameraIntrinsics, DepthImage, RenderModel, Rendering};

pub use synthetic::{
    generate_scene, occlusion_fraction, random_scene_spec, Primitive, SceneSpec, SyntheticObject,
};

/// VSD tolerances in mm (`delta`, `tau`) and the correctness threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VSDParams {
    pub delta: f64,
    pub tau: f64,
    pub t: f64,
}

impl Default for VSDParams {
    fn default() -> Self {
        Self {
            delta: 15.0,
            tau: 20.0,
            t: 0.35,
        }
    }
}

impl VSDParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.tau > 0.0 && self.t > 0.0 && self.t < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid VSD params {self:?}")))
        }
    }
}

/// Pose in the 9 + 3 row-major layout used by result and ground-truth files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&RigidTransform> for PoseRecord {
    fn from(p: &RigidTransform) -> Self {
        let a = p.to_array();
        let mut r = [0.0; 9];
        r.copy_from_slice(&a[..9]);
        Self {
            r,
            t: [a[9], a[10], a[11]],
        }
    }
}

impl From<PoseRecord> for RigidTransform {
    fn from(p: PoseRecord) -> Self {
        let mut a = [0.0; 12];
        a[..9].copy_from_slice(&p.r);
        a[9..].copy_from_slice(&p.t);
        RigidTransform::from_array(&a)
    }
}

/// Render buffers reused across VSD evaluations.
pub struct VsdScratch {
    est: Rendering,
    gt: Rendering,
}

impl VsdScratch {
    pub fn new(cam: &CameraIntrinsics) -> Self {
        Self {
            est: Rendering::new(cam),
            gt: Rendering::new(cam),
        }
    }
}

/// VSD error in `[0, 1]` on camera-z depth: the share of the union of both
/// visibility masks that is outside their intersection or differs by at
/// least `tau`. A pixel is visible when the scene has a measurement and
/// the render lies at most `delta` behind it. An empty union gives 1.
pub fn vsd_error(
    pose_est: &RigidTransform,
    pose_gt: &RigidTransform,
    model: &RenderModel<'_>,
    scene: &DepthImage,
    cam: &CameraIntrinsics,
    p: &VSDParams,
) -> f64 {
    vsd_error_with(pose_est, pose_gt, model, scene, cam, p, &mut VsdScratch::new(cam))
}

pub fn vsd_error_with(
    pose_est: &RigidTransform,
    pose_gt: &RigidTransform,
    model: &RenderModel<'_>,
    scene: &DepthImage,
    cam: &CameraIntrinsics,
    p: &VSDParams,
    scratch: &mut VsdScratch,
) -> f64 {
    let VsdScratch { est, gt } = scratch;
    est.clear();
    gt.clear();
    est.draw(model, pose_est, cam);
    gt.draw(model, pose_gt, cam);
    let visible = |r: &Rendering, i: usize| {
        let s = scene.data[i];
        r.mask[i] && s > 0.0 && r.depth.data[i] <= s + p.delta
    };
    let mut union = 0usize;
    let mut bad = 0usize;
    let pixels = est
        .mask_pixels()
        .map(|(_, _, i)| i)
        .chain(gt.mask_pixels().map(|(_, _, i)| i).filter(|&i| !est.mask[i]));
    for i in pixels {
        let (ve, vg) = (visible(est, i), visible(gt, i));
        if !(ve || vg) {
            continue;
        }
        union += 1;
        if !(ve && vg) || (est.depth.data[i] - gt.depth.data[i]).abs() >= p.tau {
            bad += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        bad as f64 / union as f64
    }
}

/// Strict `e < t`.
pub fn is_correct(e: f64, p: &VSDParams) -> bool {
    e < p.t
}

/// Fraction of targets with a correct pose. Each entry is the VSD error of
/// the pose emitted for one annotated target, `None` when nothing was
/// emitted.
pub fn recall(results: &[Option<f64>], p: &VSDParams) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidParam("recall over an empty target list".into()));
    }
    let correct = results
        .iter()
        .filter(|e| e.is_some_and(|e| is_correct(e, p)))
        .count();
    Ok(correct as f64 / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TriangleMesh, Vec3};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }

    fn render(mesh: &TriangleMesh, pose: &RigidTransform) -> Rendering {
        crate::verification::render_depth(&RenderModel::Mesh(mesh), pose, &cam())
    }

    /// Independent pixel loop over the whole image.
    fn vsd_oracle(est: &Rendering, gt: &Rendering, scene: &DepthImage, p: &VSDParams) -> f64 {
        let mut union = 0;
        let mut bad = 0;
        for i in 0..scene.data.len() {
            let s = scene.data[i];
            let ve = est.mask[i] && s > 0.0 && est.depth.data[i] <= s + p.delta;
            let vg = gt.mask[i] && s > 0.0 && gt.depth.data[i] <= s + p.delta;
            if ve || vg {
                union += 1;
                let agree = ve && vg && (est.depth.data[i] - gt.depth.data[i]).abs() < p.tau;
                if !agree {
                    bad += 1;
                }
            }
        }
        if union == 0 {
            1.0
        } else {
            bad as f64 / union as f64
        }
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(60.0, 40.0, 30.0));
        let pose = RigidTransform::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.5, Vec3::new(0.0, 0.0, 800.0));
        let scene = render(&mesh, &pose).depth;
        let e = vsd_error(&pose, &pose, &RenderModel::Mesh(&mesh), &scene, &cam(), &VSDParams::default());
        assert_eq!(e, 0.0);
    }

    #[test]
    fn depth_shift_beyond_tau_is_total_error() {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(60.0, 40.0, 30.0));
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 800.0));
        let est = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 850.0));
        let scene = render(&mesh, &gt).depth;
        let p = VSDParams::default();
        let e = vsd_error(&est, &gt, &RenderModel::Mesh(&mesh), &scene, &cam(), &p);
        assert_eq!(e, 1.0);
        assert_eq!(e, vsd_oracle(&render(&mesh, &est), &render(&mesh, &gt), &scene, &p));
    }

    #[test]
    fn sub_tau_shift_with_same_silhouette_is_zero() {
        // a slab wider than the view: both silhouettes cover every pixel
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(2000.0, 2000.0, 10.0));
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 800.0));
        let est = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 810.0));
        let scene = render(&mesh, &gt).depth;
        let p = VSDParams::default();
        let e = vsd_error(&est, &gt, &RenderModel::Mesh(&mesh), &scene, &cam(), &p);
        assert_eq!(e, 0.0);
        assert_eq!(render(&mesh, &est).mask_count(), 160 * 120);
    }

    #[test]
    fn matches_oracle_and_is_symmetric() {
        let mesh = TriangleMesh::uv_sphere(Vec3::zeros(), 40.0, 12, 18);
        let gt = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 700.0));
        let scene = render(&mesh, &gt).depth;
        let p = VSDParams::default();
        for k in 0..8 {
            let est = RigidTransform::from_axis_angle(
                &Vec3::new(0.3, 1.0, 0.2),
                0.2 * k as f64,
                Vec3::new(4.0 * k as f64, -2.0 * k as f64, 700.0 + 3.0 * k as f64),
            );
            let model = RenderModel::Mesh(&mesh);
            let e = vsd_error(&est, &gt, &model, &scene, &cam(), &p);
            let oracle = vsd_oracle(&render(&mesh, &est), &render(&mesh, &gt), &scene, &p);
            assert!((e - oracle).abs() < 1e-15);
            let swapped = vsd_error(&gt, &est, &model, &scene, &cam(), &p);
            assert!((e - swapped).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_union_is_one() {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(10.0));
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, -100.0));
        let scene = DepthImage::new(160, 120);
        let e = vsd_error(&pose, &pose, &RenderModel::Mesh(&mesh), &scene, &cam(), &VSDParams::default());
        assert_eq!(e, 1.0);
    }

    #[test]
    fn correctness_is_strict() {
        let p = VSDParams::default();
        assert!(is_correct(0.0, &p));
        assert!(!is_correct(0.35, &p));
        assert!(!is_correct(1.0, &p));
        for &e in &[0.1, 0.3, 0.349, 0.35, 0.5] {
            let loose = VSDParams { t: 0.5, ..p };
            assert!(!is_correct(e, &p) || is_correct(e, &loose));
        }
    }

    #[test]
    fn recall_counts_missing_as_wrong() {
        let p = VSDParams::default();
        assert_eq!(recall(&[Some(0.0), Some(0.1), Some(0.2), Some(0.9)], &p).unwrap(), 0.75);
        assert_eq!(recall(&[Some(0.0), Some(0.34)], &p).unwrap(), 1.0);
        assert_eq!(recall(&[Some(0.0), None], &p).unwrap(), 0.5);
        assert!(recall(&[], &p).is_err());
        let mixed = [Some(0.35), Some(0.05), None, Some(0.349_999), Some(0.7), Some(0.2)];
        let recount = mixed.iter().flatten().filter(|e| **e < 0.35).count() as f64 / mixed.len() as f64;
        assert_eq!(recall(&mixed, &p).unwrap(), recount);
    }

    #[test]
    fn pose_record_round_trip() {
        let pose = RigidTransform::from_axis_angle(&Vec3::new(1.0, -2.0, 0.5), 1.1, Vec3::new(1.0, 2.0, 3.0));
        let rec = PoseRecord::from(&pose);
        let json = serde_json::to_string(&rec).unwrap();
        let back: RigidTransform = serde_json::from_str::<PoseRecord>(&json).unwrap().into();
        assert_eq!(back, pose);
    }

    #[test]
    fn params_validate() {
        assert!(VSDParams::default().validate().is_ok());
        assert!(VSDParams { t: 1.0, ..Default::default() }.validate().is_err());
        assert!(VSDParams { tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
