//! Projective ICP against a depth image: correspondences come from
//! projecting each visible transformed model point into the scene and
//! back-projecting the pixel it lands on. Residuals are measured along the
//! model normal.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};

use super::render::Rendering;
use super::scene::SceneView;
use super::{VerifyModel, VerifyParams};
use crate::geometry::{rotation_angle, RigidTransform, Vec3};
use crate::matching::{HypothesisStatus, PoseHypothesis};

/// Fewest correspondences for a 6-DoF step.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpMetric {
    PointToPlane,
    /// Baseline used in tests only.
    PointToPoint,
}

#[derive(Debug, Clone)]
pub struct IcpReport {
    pub hypothesis: PoseHypothesis,
    /// Iterations that produced an accepted step.
    pub iterations: usize,
    /// `(rms before, rms after)` over the correspondences of each accepted
    /// step.
    pub rms_steps: Vec<(f64, f64)>,
    /// Correspondences found in the last attempted iteration.
    pub last_correspondences: usize,
}

struct Correspondence {
    /// transformed model point (camera frame)
    q: Vec3,
    /// scene point
    s: Vec3,
    /// transformed model normal
    n: Vec3,
}

fn find_correspondences(
    model: &VerifyModel,
    pose: &RigidTransform,
    scene: &SceneView,
    reject_dist: f64,
    cos_reject: f64,
    own: &Rendering,
    out: &mut Vec<Correspondence>,
) {
    out.clear();
    let w = scene.cam.width;
    for (p, n) in model.cloud.points().iter().zip(model.cloud.normals()) {
        let q = pose.apply_point(p);
        let Some((x, y)) = scene.cam.pixel(&q) else {
            continue;
        };
        let i = y * w + x;
        let nm = pose.apply_vector(n);
        // back-facing, or hidden behind another part of the model
        if nm.dot(&q) >= 0.0 || !own.mask[i] || q.z > own.depth.data[i] + model.leaf {
            continue;
        }
        let (Some(s), Some(ns)) = (scene.point_at(x, y), scene.normal_at(i)) else {
            continue;
        };
        if (q - s).norm() > reject_dist {
            continue;
        }
        if nm.dot(&ns) < cos_reject {
            continue;
        }
        out.push(Correspondence { q, s, n: nm });
    }
}

fn rms(corr: &[Correspondence], delta: &RigidTransform, metric: IcpMetric) -> f64 {
    let sum: f64 = corr
        .iter()
        .map(|c| {
            let d = delta.apply_point(&c.q) - c.s;
            match metric {
                IcpMetric::PointToPlane => d.dot(&c.n).powi(2),
                IcpMetric::PointToPoint => d.norm_squared(),
            }
        })
        .sum();
    (sum / corr.len() as f64).sqrt()
}

/// Eigenvalues of the normal matrix below this fraction of the largest
/// are treated as unconstrained and get no update.
const WEAK_DIRECTION_RATIO: f64 = 1e-3;

/// Small-angle least-squares step `(ω, v)` such that `q ↦ R(ω)·q + v`
/// reduces the residuals. Linearized about the correspondence centroid,
/// with rotation scaled by the RMS radius so that both halves of the
/// unknown have length units. Directions the correspondences barely
/// constrain (a plane sliding along itself) are left unchanged.
fn solve_step(corr: &[Correspondence], metric: IcpMetric) -> Option<RigidTransform> {
    let n = corr.len() as f64;
    let center = corr.iter().map(|c| c.q).sum::<Vec3>() / n;
    let radius = (corr.iter().map(|c| (c.q - center).norm_squared()).sum::<f64>() / n).sqrt();
    if !(radius > 0.0) {
        return None;
    }
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    let mut add_row = |j: Vector6<f64>, r: f64| {
        ata += j * j.transpose();
        atb -= j * r;
    };
    for c in corr {
        let d = c.q - c.s;
        let q = (c.q - center) / radius;
        match metric {
            IcpMetric::PointToPlane => {
                let a = q.cross(&c.n);
                add_row(Vector6::new(a.x, a.y, a.z, c.n.x, c.n.y, c.n.z), d.dot(&c.n));
            }
            IcpMetric::PointToPoint => {
                for k in 0..3 {
                    let e = Vec3::ith(k, 1.0);
                    let a = q.cross(&e);
                    add_row(Vector6::new(a.x, a.y, a.z, e.x, e.y, e.z), d[k]);
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return None;
    }
    let mut x = Vector6::<f64>::zeros();
    for i in 0..6 {
        let e = eig.eigenvalues[i];
        if e > WEAK_DIRECTION_RATIO * top {
            let v = eig.eigenvectors.column(i);
            x += v * (v.dot(&atb) / e);
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let omega = Vec3::new(x[0], x[1], x[2]) / radius;
    let v = Vec3::new(x[3], x[4], x[5]);
    let angle = omega.norm();
    let local = if angle > 1e-15 {
        RigidTransform::from_axis_angle(&omega, angle, v)
    } else {
        RigidTransform::from_translation(v)
    };
    // q ↦ R·(q − c) + v + c
    let step = RigidTransform::new(
        local.rotation,
        local.translation + center - local.rotation * center,
    );
    Some(step.orthonormalized())
}

pub fn projective_icp(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    params: &VerifyParams,
) -> IcpReport {
    projective_icp_with(h, scene, model, params, IcpMetric::PointToPlane)
}

/// Iterates correspondence search and a linearized least-squares update.
/// Model points count only where the model's own render at the current
/// pose shows them, so self-occluded surfaces never pair with the parts
/// in front of them. A step that would raise the RMS over its own correspondences is
/// rejected and ends the loop, as does a step below 0.01° and 0.01 mm or a
/// lack of correspondences (which flags the result as low-support).
pub fn projective_icp_with(
    h: &PoseHypothesis,
    scene: &SceneView,
    model: &VerifyModel,
    params: &VerifyParams,
    metric: IcpMetric,
) -> IcpReport {
    let reject_dist = params.icp_reject_dist(model.leaf);
    let cos_reject = params.icp_reject_angle.cos();
    let mut pose = h.pose;
    let mut corr = Vec::new();
    let mut own = Rendering::new(&scene.cam);
    let mut report = IcpReport {
        hypothesis: *h,
        iterations: 0,
        rms_steps: Vec::new(),
        last_correspondences: 0,
    };
    let mut low_support = false;

    for _ in 0..params.icp_iters {
        model.render(&pose, &scene.cam, &mut own);
        find_correspondences(model, &pose, scene, reject_dist, cos_reject, &own, &mut corr);
        report.last_correspondences = corr.len();
        if corr.len() < MIN_CORRESPONDENCES {
            low_support = true;
            break;
        }
        let Some(step) = solve_step(&corr, metric) else {
            break;
        };
        let before = rms(&corr, &RigidTransform::identity(), metric);
        let after = rms(&corr, &step, metric);
        if after > before {
            break;
        }
        let next = step.compose(&pose).orthonormalized();
        let moved = next.translation_distance_to(&pose);
        pose = next;
        report.iterations += 1;
        report.rms_steps.push((before, after));
        if rotation_angle(&step.rotation).to_degrees() < 0.01 && moved < 0.01 {
            break;
        }
    }

    report.hypothesis.pose = pose;
    report.hypothesis.low_support = low_support;
    report.hypothesis.status = HypothesisStatus::Refined;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriangleMesh;
    use crate::verification::{render_depth, CameraIntrinsics, DepthImage, RenderModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LEAF: f64 = 6.0;

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

    fn setup() -> (VerifyModel, SceneView, RigidTransform) {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(100.0, 70.0, 50.0));
        let g = RigidTransform::from_axis_angle(&Vec3::new(1.0, -1.0, 0.4).normalize(), 0.7, Vec3::new(0.0, 10.0, 800.0));
        let depth = render_depth(&RenderModel::Mesh(&mesh), &g, &cam()).depth;
        let scene = SceneView::new(depth, cam(), LEAF, 40.0, 2).unwrap();
        let model = VerifyModel::new(mesh.sample_surface(LEAF).unwrap(), Some(mesh), LEAF);
        (model, scene, g)
    }

    fn perturbed(g: &RigidTransform, rng: &mut ChaCha8Rng, deg: f64, mm: f64) -> RigidTransform {
        let axis = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let dir = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let rot = RigidTransform::from_axis_angle(&axis, deg.to_radians(), Vec3::zeros());
        // rotate about the object origin, then shift
        let mut p = g.compose(&rot);
        p.translation += dir * mm;
        p
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let (model, scene, g) = setup();
        let r = projective_icp(&PoseHypothesis::new(g, 1), &scene, &model, &VerifyParams::default());
        let p = r.hypothesis.pose;
        assert!(p.rotation_angle_to(&g).to_degrees() < 0.05);
        assert!(p.translation_distance_to(&g) < 0.05);
        assert_eq!(r.hypothesis.status, HypothesisStatus::Refined);
        assert!(!r.hypothesis.low_support);
    }

    #[test]
    fn converges_from_perturbations_with_monotone_rms() {
        let (model, scene, g) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let start = perturbed(&g, &mut rng, 5.0, 2.0);
            let r = projective_icp(&PoseHypothesis::new(start, 1), &scene, &model, &VerifyParams::default());
            let p = r.hypothesis.pose;
            assert!(p.rotation_angle_to(&g).to_degrees() < 1.0);
            assert!(p.translation_distance_to(&g) < 1.0);
            assert!(r.iterations > 0);
            for (before, after) in &r.rms_steps {
                assert!(after <= before);
            }
        }
    }

    #[test]
    fn point_to_point_baseline_improves() {
        let (model, scene, g) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let start = perturbed(&g, &mut rng, 3.0, 2.0);
        let r = projective_icp_with(&PoseHypothesis::new(start, 1), &scene, &model, &VerifyParams::default(), IcpMetric::PointToPoint);
        let p = r.hypothesis.pose;
        assert!(p.rotation_angle_to(&g) < start.rotation_angle_to(&g));
        for (before, after) in &r.rms_steps {
            assert!(after <= before);
        }
    }

    #[test]
    fn empty_scene_flags_low_support() {
        let (model, _, g) = setup();
        let scene = SceneView::new(DepthImage::new(640, 480), cam(), LEAF, 40.0, 2).unwrap();
        let r = projective_icp(&PoseHypothesis::new(g, 1), &scene, &model, &VerifyParams::default());
        assert!(r.hypothesis.low_support);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.hypothesis.pose, g);
    }
}
