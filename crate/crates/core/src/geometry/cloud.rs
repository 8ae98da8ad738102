use std::sync::OnceLock;

use super::{is_unit, RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Points with unit normals. The diameter (largest pairwise distance) is
/// computed on first use by an exact O(n²) scan and cached.
#[derive(Debug, Clone, Default)]
pub struct OrientedPointCloud {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    diameter: OnceLock<f64>,
}

impl PartialEq for OrientedPointCloud {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.normals == other.normals
    }
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::InvalidParam(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals.iter().position(|n| !is_unit(n)) {
            return Err(Error::InvalidParam(format!("normal {i} is not unit length")));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParam(format!("point {i} is not finite")));
        }
        Ok(Self {
            points,
            normals,
            diameter: OnceLock::new(),
        })
    }

    /// Normalizes every normal and drops points whose normal is degenerate.
    pub fn from_unnormalized(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let (p, n): (Vec<_>, Vec<_>) = points
            .into_iter()
            .zip(normals)
            .filter_map(|(p, n)| {
                let len = n.norm();
                (len > 1e-12 && len.is_finite()).then(|| (p, n / len))
            })
            .unzip();
        Self::new(p, n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    pub fn normal(&self, i: usize) -> &Vec3 {
        &self.normals[i]
    }

    pub fn diameter(&self) -> f64 {
        *self.diameter.get_or_init(|| exact_diameter(&self.points))
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<Vec3>) {
        (self.points, self.normals)
    }

    /// Rounds every coordinate to `f32` precision, keeping normals unit
    /// length. Tables built from a rounded cloud survive the binary format
    /// without drift.
    pub fn rounded_to_f32(&self) -> OrientedPointCloud {
        let round = |v: &Vec3| Vec3::new(v.x as f32 as f64, v.y as f32 as f64, v.z as f32 as f64);
        let points = self.points.iter().map(round).collect();
        let normals = self
            .normals
            .iter()
            .map(|n| {
                let r = round(n);
                if is_unit(&r) {
                    r
                } else {
                    r.normalize()
                }
            })
            .collect();
        OrientedPointCloud {
            points,
            normals,
            diameter: OnceLock::new(),
        }
    }
}

/// Largest pairwise distance, exact O(n²).
pub fn exact_diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Maps points by `R·p + t` and normals by `R·n`; the cached diameter is
/// carried over unchanged.
pub fn apply_transform(t: &RigidTransform, cloud: &OrientedPointCloud) -> OrientedPointCloud {
    let points = cloud.points.iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud.normals.iter().map(|n| t.apply_vector(n)).collect();
    let diameter = OnceLock::new();
    if let Some(d) = cloud.diameter.get() {
        let _ = diameter.set(*d);
    }
    OrientedPointCloud {
        points,
        normals,
        diameter,
    }
}
