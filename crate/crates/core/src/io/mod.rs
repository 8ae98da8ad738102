//! File formats: PLY models, PNG depth, intrinsics, ground truth and
//! results.

pub mod depth;
pub mod ply;
pub mod results;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{estimate_normals, OrientedPointCloud, TriangleMesh, Vec3};

pub use depth::{load_depth, load_depth_png, load_intrinsics, save_depth_png, save_intrinsics};
pub use ply::{read_ply, save_ply, PlyData, PlyError, PlyFormat};
pub use results::{GroundTruth, ResultRecord};

/// Neighbors used when a model file carries neither normals nor faces.
pub const MODEL_NORMAL_K: usize = 10;

/// A model as read from disk: vertices with normals, plus the triangle
/// mesh when the file has faces.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub cloud: OrientedPointCloud,
    pub mesh: Option<TriangleMesh>,
}

/// Normals come from the file when present, else from the faces (area
/// weighted), else from PCA over the nearest vertices oriented away from
/// the centroid. Vertices without a usable normal are left out of the
/// cloud; the mesh keeps all of them.
pub fn model_from_ply(data: PlyData) -> Result<LoadedModel> {
    let mesh = data.mesh();
    let normals: Vec<Option<Vec3>> = match (&data.normals, &mesh) {
        (Some(n), _) => n
            .iter()
            .map(|v| {
                let len = v.norm();
                (len > 1e-12 && len.is_finite()).then(|| v / len)
            })
            .collect(),
        (None, Some(m)) => m.vertex_normals(),
        (None, None) => {
            if data.vertices.is_empty() {
                return Err(Error::EmptyCloud);
            }
            let centroid = data.vertices.iter().sum::<Vec3>() / data.vertices.len() as f64;
            let est = estimate_normals(&data.vertices, MODEL_NORMAL_K, &centroid)?;
            let mut out = vec![None; data.vertices.len()];
            for (k, &i) in est.source_index.iter().enumerate() {
                out[i] = Some(-est.cloud.normal(k));
            }
            out
        }
    };
    let (points, normals): (Vec<Vec3>, Vec<Vec3>) = data
        .vertices
        .iter()
        .zip(normals)
        .filter_map(|(p, n)| n.map(|n| (*p, n)))
        .unzip();
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(LoadedModel {
        cloud: OrientedPointCloud::new(points, normals)?,
        mesh,
    })
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<LoadedModel> {
    model_from_ply(read_ply(path)?)
}
