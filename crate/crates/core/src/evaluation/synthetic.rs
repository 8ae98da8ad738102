use nalgebra::{UnitQuaternion, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PoseRecord;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TriangleMesh, Vec3};
use crate::verification::{CameraIntrinsics, DepthImage, RenderModel, Rendering};

/// Scene clutter in camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Cuboid {
        center: [f64; 3],
        size: [f64; 3],
        /// Rotation vector (axis × angle, radians).
        #[serde(default)]
        rotation: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
}

impl Primitive {
    pub fn mesh(&self) -> TriangleMesh {
        match self {
            Primitive::Cuboid {
                center,
                size,
                rotation,
            } => {
                let rv = Vec3::from(*rotation);
                let angle = rv.norm();
                let pose = if angle > 0.0 {
                    RigidTransform::from_axis_angle(&rv, angle, Vec3::from(*center))
                } else {
                    RigidTransform::from_translation(Vec3::from(*center))
                };
                TriangleMesh::cuboid(Vec3::zeros(), Vec3::from(*size)).transformed(&pose)
            }
            Primitive::Sphere { center, radius } => {
                TriangleMesh::uv_sphere(Vec3::from(*center), *radius, 16, 24)
            }
        }
    }
}

/// Everything needed to synthesize one test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Identifier of the model placed in the scene.
    pub model: String,
    /// Model-to-camera ground truth.
    pub pose: PoseRecord,
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub distractors: Vec<Primitive>,
    /// Camera-z (mm) of a fronto-parallel wall filling the view behind the
    /// scene.
    #[serde(default)]
    pub backdrop: Option<f64>,
    /// Standard deviation of additive depth noise, mm.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Probability that a measured pixel is dropped.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(self.noise_sigma >= 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam(
                "noise_sigma must be ≥ 0 and dropout in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn gt_pose(&self) -> RigidTransform {
        RigidTransform::from(self.pose).orthonormalized()
    }
}

/// Renders the model at the ground-truth pose, composites the distractors
/// through the z-buffer, then adds Gaussian noise to measured pixels and
/// drops pixels at random, visiting pixels in row-major order with a
/// generator seeded from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec, model: &RenderModel<'_>) -> Result<(DepthImage, RigidTransform)> {
    spec.validate()?;
    let gt = spec.gt_pose();
    let cam = &spec.camera;
    let mut r = Rendering::new(cam);
    r.draw(model, &gt, cam);
    if r.is_empty() {
        return Err(Error::OutsideFrustum);
    }
    let identity = RigidTransform::identity();
    for d in &spec.distractors {
        r.draw_mesh(&d.mesh(), &identity, cam);
    }
    let mut depth = r.depth;
    if let Some(z) = spec.backdrop {
        for (d, m) in depth.data.iter_mut().zip(&r.mask) {
            if !*m || *d > z {
                *d = z;
            }
        }
    }
    if spec.noise_sigma > 0.0 || spec.dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidParam(e.to_string()))?;
        for d in depth.data.iter_mut().filter(|d| **d > 0.0) {
            if spec.noise_sigma > 0.0 {
                *d = (*d + noise.sample(&mut rng)).max(f64::MIN_POSITIVE);
            }
            if spec.dropout > 0.0 && rng.gen::<f64>() < spec.dropout {
                *d = 0.0;
            }
        }
    }
    Ok((depth, gt))
}

/// Share of the model's rendered pixels hidden behind distractors.
pub fn occlusion_fraction(spec: &SceneSpec, model: &RenderModel<'_>) -> f64 {
    let cam = &spec.camera;
    let alone = crate::verification::render_depth(model, &spec.gt_pose(), cam);
    let total = alone.mask_count();
    if total == 0 {
        return 0.0;
    }
    let mut clutter = Rendering::new(cam);
    let identity = RigidTransform::identity();
    for d in &spec.distractors {
        clutter.draw_mesh(&d.mesh(), &identity, cam);
    }
    let hidden = alone
        .mask_pixels()
        .filter(|&(_, _, i)| clutter.mask[i] && clutter.depth.data[i] < alone.depth.data[i])
        .count();
    hidden as f64 / total as f64
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let v = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(v))
}

/// Random scene: uniformly random orientation, model center 700–900 mm
/// in front of the camera and projected within the middle of the image.
/// With `backdrop_offset`, a wall stands that many mm behind the model center.
/// With `occluder`, one box or sphere is placed between camera and object
/// so that it hides between 5 % and 30 % of the object.
pub fn random_scene_spec(
    rng: &mut impl Rng,
    model_id: &str,
    model: &RenderModel<'_>,
    model_center: &Vec3,
    cam: &CameraIntrinsics,
    noise_sigma: f64,
    backdrop_offset: Option<f64>,
    occluder: bool,
) -> Result<SceneSpec> {
    let rot = random_rotation(rng);
    let z = rng.gen_range(700.0..900.0);
    let u = cam.cx + rng.gen_range(-0.15..0.15) * cam.width as f64;
    let v = cam.cy + rng.gen_range(-0.15..0.15) * cam.height as f64;
    let center_cam = cam.backproject(u, v, z);
    let pose = RigidTransform::from_quaternion(&rot, center_cam - rot * model_center);
    let mut spec = SceneSpec {
        model: model_id.to_owned(),
        pose: PoseRecord::from(&pose),
        camera: *cam,
        distractors: Vec::new(),
        backdrop: backdrop_offset.map(|o| z + o),
        noise_sigma,
        dropout: 0.0,
        seed: rng.gen(),
    };
    if !occluder {
        return Ok(spec);
    }
    let toward_camera = -center_cam.normalize();
    let side = toward_camera.cross(&Vec3::y()).normalize();
    let up = toward_camera.cross(&side);
    for _ in 0..200 {
        let size = rng.gen_range(30.0..70.0);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let offset = rng.gen_range(30.0..90.0);
        let c = center_cam
            + toward_camera * rng.gen_range(150.0..250.0)
            + (side * theta.cos() + up * theta.sin()) * offset;
        let prim = if rng.gen_bool(0.5) {
            Primitive::Sphere {
                center: c.into(),
                radius: size / 2.0,
            }
        } else {
            Primitive::Cuboid {
                center: c.into(),
                size: [size, size * rng.gen_range(0.6..1.6), size],
                rotation: [0.0, 0.0, rng.gen_range(-0.5..0.5)],
            }
        };
        spec.distractors = vec![prim];
        let f = occlusion_fraction(&spec, model);
        if f > 0.05 && f <= 0.3 {
            return Ok(spec);
        }
    }
    Err(Error::InvalidParam("could not place an occluder covering 5–30 % of the object".into()))
}

/// Asymmetric L-shaped prism (about 130 × 100 × 45 mm) with 45° chamfers
/// along both cap outlines, centered at its bounding-box center. The
/// built-in test object.
pub struct SyntheticObject;

impl SyntheticObject {
    pub const ID: &'static str = "l_bracket";

    pub fn mesh() -> TriangleMesh {
        let poly = [
            (0.0, 0.0),
            (130.0, 0.0),
            (130.0, 35.0),
            (55.0, 35.0),
            (55.0, 100.0),
            (0.0, 100.0),
        ];
        let prism = TriangleMesh::beveled_prism(&poly, 45.0, 10.0);
        prism.transformed(&RigidTransform::from_translation(Vec3::new(-65.0, -50.0, -22.5)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verification::render_depth;

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

    fn spec(pose: RigidTransform) -> SceneSpec {
        SceneSpec {
            model: SyntheticObject::ID.into(),
            pose: PoseRecord::from(&pose),
            camera: cam(),
            distractors: vec![],
            backdrop: None,
            noise_sigma: 0.0,
            dropout: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_scene_equals_render() {
        let mesh = SyntheticObject::mesh();
        let pose = RigidTransform::from_axis_angle(&Vec3::new(1.0, 0.2, 0.0), 0.7, Vec3::new(10.0, -5.0, 800.0));
        let model = RenderModel::Mesh(&mesh);
        let (depth, gt) = generate_scene(&spec(pose), &model).unwrap();
        assert_eq!(gt, pose.orthonormalized());
        assert_eq!(depth, render_depth(&model, &gt, &cam()).depth);
    }

    #[test]
    fn box_in_front_hides_object() {
        let mesh = SyntheticObject::mesh();
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 800.0));
        let mut s = spec(pose);
        let prim = Primitive::Cuboid {
            center: [20.0, 0.0, 600.0],
            size: [40.0, 40.0, 40.0],
            rotation: [0.0; 3],
        };
        s.distractors.push(prim.clone());
        let model = RenderModel::Mesh(&mesh);
        let (depth, _) = generate_scene(&s, &model).unwrap();
        let obj = render_depth(&model, &pose, &cam());
        let occ = render_depth(&RenderModel::Mesh(&prim.mesh()), &RigidTransform::identity(), &cam());
        let mut hidden = 0;
        for i in 0..depth.data.len() {
            let expected = match (obj.mask[i], occ.mask[i]) {
                (true, true) => obj.depth.data[i].min(occ.depth.data[i]),
                (true, false) => obj.depth.data[i],
                (false, true) => occ.depth.data[i],
                (false, false) => 0.0,
            };
            assert_eq!(depth.data[i], expected);
            if obj.mask[i] && occ.mask[i] {
                assert!(depth.data[i] < 700.0);
                hidden += 1;
            }
        }
        assert!(hidden > 0);
        let f = occlusion_fraction(&s, &model);
        assert!((f - hidden as f64 / obj.mask_count() as f64).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_image() {
        let mesh = SyntheticObject::mesh();
        let model = RenderModel::Mesh(&mesh);
        let mut s = spec(RigidTransform::from_translation(Vec3::new(0.0, 0.0, 750.0)));
        s.noise_sigma = 2.0;
        s.dropout = 0.05;
        let (a, _) = generate_scene(&s, &model).unwrap();
        let (b, _) = generate_scene(&s, &model).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        s.seed += 1;
        let (c, _) = generate_scene(&s, &model).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn object_outside_frustum_is_an_error() {
        let mesh = SyntheticObject::mesh();
        let s = spec(RigidTransform::from_translation(Vec3::new(0.0, 0.0, -500.0)));
        assert!(matches!(
            generate_scene(&s, &RenderModel::Mesh(&mesh)),
            Err(Error::OutsideFrustum)
        ));
    }

    #[test]
    fn random_occluded_specs_stay_in_range() {
        let mesh = SyntheticObject::mesh();
        let model = RenderModel::Mesh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let s = random_scene_spec(&mut rng, "x", &model, &Vec3::zeros(), &cam(), 2.0, Some(150.0), true).unwrap();
            let f = occlusion_fraction(&s, &model);
            assert!(f > 0.05 && f <= 0.3);
        }
    }

    #[test]
    fn spec_yaml_round_trip() {
        let mut s = spec(RigidTransform::from_translation(Vec3::new(1.0, 2.0, 800.0)));
        s.distractors.push(Primitive::Sphere {
            center: [0.0, 0.0, 600.0],
            radius: 20.0,
        });
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&json).unwrap(), s);
    }
}
