//! Z-buffer depth rendering of meshes and oriented point clouds.

use super::camera::{CameraIntrinsics, DepthImage};
use crate::geometry::{OrientedPointCloud, RigidTransform, TriangleMesh, Vec3};

/// Vertices closer than this (mm) to the camera plane are not drawn.
pub const NEAR_PLANE: f64 = 1.0;

/// Geometry that can be rendered at a pose.
#[derive(Debug, Clone, Copy)]
pub enum RenderModel<'a> {
    Mesh(&'a TriangleMesh),
    /// Square splats whose half-width covers half a leaf at the point's
    /// depth; splats facing away from the camera are skipped.
    Points {
        cloud: &'a OrientedPointCloud,
        leaf: f64,
    },
}

/// Inclusive pixel bounds of the written region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    fn include(rect: &mut Option<PixelRect>, x: usize, y: usize) {
        match rect {
            Some(r) => {
                r.x0 = r.x0.min(x);
                r.y0 = r.y0.min(y);
                r.x1 = r.x1.max(x);
                r.y1 = r.y1.max(y);
            }
            None => {
                *rect = Some(PixelRect {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                })
            }
        }
    }
}

/// Rendered depth, the set of written pixels and their bounding box.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub depth: DepthImage,
    pub mask: Vec<bool>,
    pub bbox: Option<PixelRect>,
}

impl Rendering {
    pub fn new(cam: &CameraIntrinsics) -> Self {
        Self {
            depth: DepthImage::new(cam.width, cam.height),
            mask: vec![false; cam.pixel_count()],
            bbox: None,
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    /// Resets only the region touched since the last clear.
    pub fn clear(&mut self) {
        if let Some(r) = self.bbox.take() {
            let w = self.depth.width;
            for y in r.y0..=r.y1 {
                let row = y * w;
                self.depth.data[row + r.x0..=row + r.x1].fill(0.0);
                self.mask[row + r.x0..=row + r.x1].fill(false);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }

    #[inline]
    fn write(&mut self, x: usize, y: usize, z: f64) {
        let i = y * self.depth.width + x;
        if !self.mask[i] || z < self.depth.data[i] {
            self.depth.data[i] = z;
            self.mask[i] = true;
            PixelRect::include(&mut self.bbox, x, y);
        }
    }

    /// `(x, y, flat index)` of every mask pixel, row by row.
    pub fn mask_pixels(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let w = self.depth.width;
        let rect = self.bbox;
        rect.into_iter().flat_map(move |r| {
            (r.y0..=r.y1).flat_map(move |y| {
                (r.x0..=r.x1).filter_map(move |x| {
                    let i = y * w + x;
                    self.mask[i].then_some((x, y, i))
                })
            })
        })
    }

    pub fn mask_count(&self) -> usize {
        self.mask_pixels().count()
    }

    pub fn draw(&mut self, model: &RenderModel<'_>, pose: &RigidTransform, cam: &CameraIntrinsics) {
        match model {
            RenderModel::Mesh(mesh) => self.draw_mesh(mesh, pose, cam),
            RenderModel::Points { cloud, leaf } => self.draw_points(cloud, *leaf, pose, cam),
        }
    }

    /// Rasterizes every triangle with perspective-correct depth, sampling
    /// at pixel centers. Triangles crossing the near plane are dropped.
    pub fn draw_mesh(&mut self, mesh: &TriangleMesh, pose: &RigidTransform, cam: &CameraIntrinsics) {
        let verts: Vec<Vec3> = mesh.vertices.iter().map(|v| pose.apply_point(v)).collect();
        let (w, h) = (cam.width as f64, cam.height as f64);
        for face in &mesh.faces {
            let [a, b, c] = face.map(|i| verts[i as usize]);
            if a.z < NEAR_PLANE || b.z < NEAR_PLANE || c.z < NEAR_PLANE {
                continue;
            }
            let pa = cam.project(&a);
            let pb = cam.project(&b);
            let pc = cam.project(&c);
            let area = edge(pa, pb, pc);
            if area.abs() < 1e-12 {
                continue;
            }
            let min_u = pa.0.min(pb.0).min(pc.0).ceil().max(0.0);
            let max_u = pa.0.max(pb.0).max(pc.0).floor().min(w - 1.0);
            let min_v = pa.1.min(pb.1).min(pc.1).ceil().max(0.0);
            let max_v = pa.1.max(pb.1).max(pc.1).floor().min(h - 1.0);
            if min_u > max_u || min_v > max_v {
                continue;
            }
            let inv = 1.0 / area;
            let eps = -1e-9;
            let (iza, izb, izc) = (1.0 / a.z, 1.0 / b.z, 1.0 / c.z);
            for y in min_v as usize..=max_v as usize {
                for x in min_u as usize..=max_u as usize {
                    let p = (x as f64, y as f64);
                    let wa = edge(pb, pc, p) * inv;
                    let wb = edge(pc, pa, p) * inv;
                    let wc = edge(pa, pb, p) * inv;
                    if wa < eps || wb < eps || wc < eps {
                        continue;
                    }
                    let z = 1.0 / (wa * iza + wb * izb + wc * izc);
                    self.write(x, y, z);
                }
            }
        }
    }

    pub fn draw_points(
        &mut self,
        cloud: &OrientedPointCloud,
        leaf: f64,
        pose: &RigidTransform,
        cam: &CameraIntrinsics,
    ) {
        let (w, h) = (cam.width as i64, cam.height as i64);
        for (p, n) in cloud.points().iter().zip(cloud.normals()) {
            let q = pose.apply_point(p);
            if q.z < NEAR_PLANE || pose.apply_vector(n).dot(&q) > 0.0 {
                continue;
            }
            let (u, v) = cam.project(&q);
            let (px, py) = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
            let r = (cam.fx * leaf / (2.0 * q.z)).ceil().max(0.0) as i64;
            if px + r < 0 || py + r < 0 || px - r >= w || py - r >= h {
                continue;
            }
            for y in (py - r).max(0)..=(py + r).min(h - 1) {
                for x in (px - r).max(0)..=(px + r).min(w - 1) {
                    self.write(x as usize, y as usize, q.z);
                }
            }
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Renders `model` at `pose` into a fresh image.
pub fn render_depth(model: &RenderModel<'_>, pose: &RigidTransform, cam: &CameraIntrinsics) -> Rendering {
    let mut r = Rendering::new(cam);
    r.draw(model, pose, cam);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 320.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn single_point_on_axis() {
        let cloud = OrientedPointCloud::new(vec![Vec3::new(0.0, 0.0, 1000.0)], vec![-Vec3::z()]).unwrap();
        let r = render_depth(
            &RenderModel::Points {
                cloud: &cloud,
                leaf: 1.0,
            },
            &RigidTransform::identity(),
            &cam(),
        );
        assert_eq!(r.depth.get(320, 320), 1000.0);
        assert!(r.mask[320 * 640 + 320]);
    }

    #[test]
    fn points_behind_camera_are_skipped() {
        let cloud = OrientedPointCloud::new(vec![Vec3::new(0.0, 0.0, -10.0), Vec3::zeros()], vec![Vec3::z(), -Vec3::z()])
            .unwrap();
        let r = render_depth(
            &RenderModel::Points {
                cloud: &cloud,
                leaf: 1.0,
            },
            &RigidTransform::identity(),
            &cam(),
        );
        assert!(r.is_empty());
        assert_eq!(r.mask_count(), 0);
        assert_eq!(r.depth.measured_count(), 0);
    }

    #[test]
    fn cube_front_face_has_plane_depth() {
        let mesh = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 1050.0), Vec3::repeat(100.0));
        let r = render_depth(&RenderModel::Mesh(&mesh), &RigidTransform::identity(), &cam());
        let n = r.mask_count();
        // 100 mm at 1 m with f = 500 → about 50 px square
        assert!(n > 2400 && n < 2700, "{n}");
        for (x, y, _) in r.mask_pixels() {
            assert!((r.depth.get(x, y) - 1000.0).abs() <= 0.5);
        }
    }

    #[test]
    fn nearest_surface_wins() {
        let far = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 1500.0), Vec3::repeat(200.0));
        let near = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 1000.0), Vec3::repeat(50.0));
        let both = TriangleMesh::merged(&[far, near]);
        let r = render_depth(&RenderModel::Mesh(&both), &RigidTransform::identity(), &cam());
        assert!((r.depth.get(320, 320) - 975.0).abs() < 1e-6);
        assert!((r.depth.get(320 + 30, 320) - 1400.0).abs() < 1e-6);
    }

    #[test]
    fn backprojection_inverts_rendering() {
        let mesh = TriangleMesh::uv_sphere(Vec3::zeros(), 60.0, 16, 24);
        let pose = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 0.0), 0.4, Vec3::new(20.0, -10.0, 800.0));
        let c = cam();
        let r = render_depth(&RenderModel::Mesh(&mesh), &pose, &c);
        assert!(r.mask_count() > 100);
        for (x, y, _) in r.mask_pixels() {
            let d = r.depth.get(x, y);
            let p = c.backproject(x as f64, y as f64, d);
            let (u, v) = c.project(&p);
            assert!((u - x as f64).abs() < 0.5 && (v - y as f64).abs() < 0.5);
            assert!((p.z - d).abs() < 0.1);
        }
    }

    #[test]
    fn clear_resets_touched_region() {
        let mesh = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 1000.0), Vec3::repeat(100.0));
        let c = cam();
        let mut r = Rendering::new(&c);
        r.draw_mesh(&mesh, &RigidTransform::identity(), &c);
        assert!(!r.is_empty());
        r.clear();
        assert!(r.mask.iter().all(|m| !m));
        assert!(r.depth.data.iter().all(|d| *d == 0.0));
    }
}
