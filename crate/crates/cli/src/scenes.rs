//! Scene directories (`<dir>/<scene_id>/depth.png`, `intrinsics.txt`,
//! `gt.json`) and model files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ppf_core::evaluation::SyntheticObject;
use ppf_core::geometry::{OrientedPointCloud, TriangleMesh};
use ppf_core::io::results::{load_ground_truth, save_ground_truth};
use ppf_core::io::{load_depth, load_model_file, save_depth_png, save_intrinsics, GroundTruth};
use ppf_core::verification::{CameraIntrinsics, DepthImage, RenderModel};

pub const DEPTH_FILE: &str = "depth.png";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GT_FILE: &str = "gt.json";

pub struct Scene {
    pub depth: DepthImage,
    pub cam: CameraIntrinsics,
    pub gt: Option<GroundTruth>,
}

/// Scene ids of `dir`: every subdirectory holding a depth image, sorted.
pub fn scene_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        if entry.path().join(DEPTH_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if ids.is_empty() {
        bail!("no scenes (subdirectories with {DEPTH_FILE}) in {}", dir.display());
    }
    ids.sort();
    Ok(ids)
}

pub fn load_scene(dir: &Path, id: &str, depth_scale: f64) -> Result<Scene> {
    let sd = dir.join(id);
    let (depth, cam) = load_depth(sd.join(DEPTH_FILE), depth_scale, sd.join(INTRINSICS_FILE))
        .with_context(|| format!("scene {id}"))?;
    let gt_path = sd.join(GT_FILE);
    let gt = if gt_path.is_file() {
        Some(load_ground_truth(&gt_path).with_context(|| format!("scene {id}: {GT_FILE}"))?)
    } else {
        None
    };
    Ok(Scene {
        depth,
        cam,
        gt,
    })
}

pub fn save_scene(
    sd: &Path,
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    gt: &GroundTruth,
    depth_scale: f64,
) -> Result<()> {
    std::fs::create_dir_all(sd).with_context(|| format!("creating {}", sd.display()))?;
    save_depth_png(sd.join(DEPTH_FILE), depth, depth_scale)?;
    save_intrinsics(sd.join(INTRINSICS_FILE), cam)?;
    save_ground_truth(sd.join(GT_FILE), gt)?;
    Ok(())
}

/// Model geometry used for rendering: a mesh, or the bare cloud rendered
/// as splats of the given leaf.
pub enum Geometry {
    Mesh(TriangleMesh),
    Cloud(OrientedPointCloud, f64),
}

impl Geometry {
    /// `spec` is a PLY path or `builtin:l_bracket`. Clouds without faces
    /// render with splats of `leaf_frac` × diameter.
    pub fn load(spec: &str, leaf_frac: f64) -> Result<Geometry> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            if name != SyntheticObject::ID {
                bail!("unknown builtin model `{name}` (available: {})", SyntheticObject::ID);
            }
            return Ok(Geometry::Mesh(SyntheticObject::mesh()));
        }
        let m = load_model_file(spec).with_context(|| format!("model {spec}"))?;
        Ok(match m.mesh {
            Some(mesh) if !mesh.faces.is_empty() => Geometry::Mesh(mesh),
            _ => {
                let leaf = leaf_frac * m.cloud.diameter();
                Geometry::Cloud(m.cloud, leaf)
            }
        })
    }

    pub fn render_model(&self) -> RenderModel<'_> {
        match self {
            Geometry::Mesh(m) => RenderModel::Mesh(m),
            Geometry::Cloud(cloud, leaf) => RenderModel::Points { cloud, leaf: *leaf },
        }
    }

    pub fn mesh(&self) -> Option<&TriangleMesh> {
        match self {
            Geometry::Mesh(m) => Some(m),
            Geometry::Cloud(..) => None,
        }
    }
}

pub fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into())
}

pub fn parent_name(p: &Path) -> Option<String> {
    let parent: PathBuf = p.parent()?.canonicalize().ok()?;
    parent.file_name().map(|s| s.to_string_lossy().into_owned())
}
