//! Geometric primitives shared by every stage: vectors, rigid transforms,
//! oriented point clouds, triangle meshes, the kd-tree and normal estimation.

mod cloud;
mod kdtree;
mod mesh;
mod normals;
mod transform;

pub use cloud::{apply_transform, exact_diameter, OrientedPointCloud};
pub use kdtree::KdTree;
pub use mesh::TriangleMesh;
pub use normals::{estimate_normals, NormalEstimate};
pub(crate) use normals::pca_normal;
pub use transform::{nearest_rotation, rotation_angle, weighted_quaternion_mean, RigidTransform};

/// Position or direction in model units (millimeters).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Tolerance of the unit-length invariant on normals.
pub const UNIT_TOL: f64 = 1e-6;

#[inline]
pub fn is_unit(v: &Vec3) -> bool {
    (v.norm() - 1.0).abs() <= UNIT_TOL
}

/// Angle between two unit vectors via clamped arccos.
#[inline]
pub fn angle_between_unit(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}
