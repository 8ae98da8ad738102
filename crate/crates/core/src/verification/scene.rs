use rayon::prelude::*;

use super::camera::{CameraIntrinsics, DepthImage};
use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Vec3};

/// Most pixels of window radius used for normal estimation.
const MAX_WINDOW: usize = 8;
/// Fewest in-radius neighbors for a normal.
const MIN_NEIGHBORS: usize = 5;

/// A depth image prepared for verification: intrinsics, a per-pixel normal
/// map and the dilated depth-discontinuity edge map.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub depth: DepthImage,
    pub cam: CameraIntrinsics,
    normals: Vec<Option<Vec3>>,
    edges: Vec<bool>,
}

impl SceneView {
    /// `normal_radius` (mm) bounds the neighborhood used for the normal map;
    /// `edge_depth_jump` and `edge_dilation` define the edge map.
    pub fn new(
        depth: DepthImage,
        cam: CameraIntrinsics,
        normal_radius: f64,
        edge_depth_jump: f64,
        edge_dilation: usize,
    ) -> Result<Self> {
        cam.validate()?;
        if !depth.matches(&cam) {
            return Err(Error::InvalidParam(format!(
                "depth image is {}×{} but camera is {}×{}",
                depth.width, depth.height, cam.width, cam.height
            )));
        }
        let normals = normal_map(&depth, &cam, normal_radius);
        let edges = dilate(&edge_map(&depth, edge_depth_jump), depth.width, depth.height, edge_dilation);
        Ok(Self {
            depth,
            cam,
            normals,
            edges,
        })
    }

    #[inline]
    pub fn depth_at(&self, i: usize) -> f64 {
        self.depth.data[i]
    }

    #[inline]
    pub fn normal_at(&self, i: usize) -> Option<Vec3> {
        self.normals[i]
    }

    #[inline]
    pub fn is_edge(&self, i: usize) -> bool {
        self.edges[i]
    }

    pub fn edges(&self) -> &[bool] {
        &self.edges
    }

    /// Camera-frame point at pixel `(x, y)`, `None` where depth is missing.
    #[inline]
    pub fn point_at(&self, x: usize, y: usize) -> Option<Vec3> {
        let d = self.depth.get(x, y);
        (d > 0.0).then(|| self.cam.backproject(x as f64, y as f64, d))
    }

    /// Oriented cloud of every `stride`-th pixel (in both directions) that
    /// has depth and a normal.
    pub fn cloud(&self, stride: usize) -> OrientedPointCloud {
        let stride = stride.max(1);
        let w = self.depth.width;
        let mut pts = Vec::new();
        let mut nrm = Vec::new();
        for y in (0..self.depth.height).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let i = y * w + x;
                if let (Some(p), Some(n)) = (self.point_at(x, y), self.normals[i]) {
                    pts.push(p);
                    nrm.push(n);
                }
            }
        }
        OrientedPointCloud::new(pts, nrm).expect("normal map holds unit normals")
    }
}

/// PCA normal per measured pixel over the neighbors inside a square window
/// that also lie within `radius` (mm) in 3-D; oriented toward the camera.
pub fn normal_map(depth: &DepthImage, cam: &CameraIntrinsics, radius: f64) -> Vec<Option<Vec3>> {
    let (w, h) = (depth.width, depth.height);
    let r2 = radius * radius;
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut buf: Vec<Vec3> = Vec::with_capacity((2 * MAX_WINDOW + 1).pow(2));
            (0..w)
                .map(|x| {
                    let d = depth.get(x, y);
                    if d <= 0.0 {
                        return None;
                    }
                    let c = cam.backproject(x as f64, y as f64, d);
                    let win = ((cam.fx.max(cam.fy) * radius / d).ceil() as usize).clamp(1, MAX_WINDOW);
                    buf.clear();
                    for yy in y.saturating_sub(win)..=(y + win).min(h - 1) {
                        for xx in x.saturating_sub(win)..=(x + win).min(w - 1) {
                            let dd = depth.get(xx, yy);
                            if dd <= 0.0 {
                                continue;
                            }
                            let p = cam.backproject(xx as f64, yy as f64, dd);
                            if (p - c).norm_squared() <= r2 {
                                buf.push(p);
                            }
                        }
                    }
                    if buf.len() < MIN_NEIGHBORS {
                        return None;
                    }
                    let n = crate::geometry::pca_normal(buf.iter())?;
                    Some(if n.dot(&c) > 0.0 { -n } else { n })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Pixels with a 4-neighbor across a depth jump larger than `jump`, or
/// across the border between measured and missing data.
pub fn edge_map(depth: &DepthImage, jump: f64) -> Vec<bool> {
    let (w, h) = (depth.width, depth.height);
    let mut edges = vec![false; w * h];
    let mut mark = |a: usize, b: usize| {
        let (da, db) = (depth.data[a], depth.data[b]);
        let is_edge = match (da > 0.0, db > 0.0) {
            (true, true) => (da - db).abs() > jump,
            (false, false) => false,
            _ => true,
        };
        if is_edge {
            edges[a] = true;
            edges[b] = true;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                mark(i, i + 1);
            }
            if y + 1 < h {
                mark(i, i + w);
            }
        }
    }
    edges
}

/// Square (Chebyshev) dilation by `k` pixels.
pub fn dilate(mask: &[bool], w: usize, h: usize, k: usize) -> Vec<bool> {
    if k == 0 {
        return mask.to_vec();
    }
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &mask[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(k);
            let hi = (x + k).min(w - 1);
            horiz[y * w + x] = row[lo..=hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(k);
        let hi = (y + k).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
        }
    }
    out
}
