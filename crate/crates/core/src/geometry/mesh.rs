use super::{OrientedPointCloud, RigidTransform, Vec3};
use crate::error::Result;

/// Indexed triangle mesh. Faces wind counter-clockwise seen from outside,
/// so `(b − a) × (c − a)` points outward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces }
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unit face normal, `None` for zero-area faces.
    pub fn face_normal(&self, f: usize) -> Option<Vec3> {
        let [a, b, c] = self.triangle(f);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        (len > 1e-15).then(|| n / len)
    }

    /// Area-weighted vertex normals; isolated vertices get `None`.
    pub fn vertex_normals(&self) -> Vec<Option<Vec3>> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let n = (b - a).cross(&(c - a));
            for &v in &self.faces[f] {
                acc[v as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                (len > 1e-15).then(|| n / len)
            })
            .collect()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply_point(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Concatenates meshes, re-basing face indices.
    pub fn merged(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for part in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&part.vertices);
            out.faces
                .extend(part.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        }
        out
    }

    /// Deterministic uniform surface sampling: every face is split into an
    /// `m × m` lattice of sub-triangles (edges no longer than `spacing`) and
    /// each sub-triangle contributes its centroid with the face normal.
    pub fn sample_surface(&self, spacing: f64) -> Result<OrientedPointCloud> {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for f in 0..self.faces.len() {
            let Some(n) = self.face_normal(f) else {
                continue;
            };
            let [a, b, c] = self.triangle(f);
            let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
            let m = ((longest / spacing).ceil() as usize).max(1);
            let e1 = (b - a) / m as f64;
            let e2 = (c - a) / m as f64;
            for i in 0..m {
                for j in 0..m - i {
                    let (fi, fj) = (i as f64, j as f64);
                    points.push(a + e1 * (fi + 1.0 / 3.0) + e2 * (fj + 1.0 / 3.0));
                    normals.push(n);
                    if i + j + 1 < m {
                        points.push(a + e1 * (fi + 2.0 / 3.0) + e2 * (fj + 2.0 / 3.0));
                        normals.push(n);
                    }
                }
            }
        }
        OrientedPointCloud::new(points, normals)
    }

    /// Axis-aligned box centered at `center` with full edge lengths `size`.
    pub fn cuboid(center: Vec3, size: Vec3) -> TriangleMesh {
        let h = size * 0.5;
        let mut vertices = Vec::with_capacity(8);
        for &z in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &x in &[-1.0, 1.0] {
                    vertices.push(center + Vec3::new(x * h.x, y * h.y, z * h.z));
                }
            }
        }
        // vertex index = x + 2y + 4z with each bit meaning "positive side"
        let quads: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriangleMesh { vertices, faces }
    }

    /// Prism over a simple polygon given counter-clockwise in the xy-plane,
    /// spanning `z ∈ [0, height]`. Caps are ear-clipped.
    pub fn extruded_polygon(polygon: &[(f64, f64)], height: f64) -> TriangleMesh {
        loft(&[(polygon.to_vec(), 0.0), (polygon.to_vec(), height)])
    }

    /// Like [`TriangleMesh::extruded_polygon`] with both cap outlines
    /// chamfered at 45° by `bevel`.
    pub fn beveled_prism(polygon: &[(f64, f64)], height: f64, bevel: f64) -> TriangleMesh {
        let inset = inset_polygon(polygon, bevel);
        loft(&[
            (inset.clone(), 0.0),
            (polygon.to_vec(), bevel),
            (polygon.to_vec(), height - bevel),
            (inset, height),
        ])
    }

    /// Latitude/longitude sphere.
    pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![center + Vec3::new(0.0, 0.0, radius)];
        for i in 1..stacks {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let phi = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push(
                    center
                        + radius
                            * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                );
            }
        }
        vertices.push(center - Vec3::new(0.0, 0.0, radius));
        let south = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + (j % slices)) as u32;
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, c, d]);
                faces.push([a, d, b]);
            }
        }
        for j in 0..slices {
            faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
        }
        TriangleMesh { vertices, faces }
    }
}

/// Stacks polygon rings with equal vertex counts at increasing heights,
/// joins consecutive rings with quads and closes both ends with
/// ear-clipped caps.
fn loft(rings: &[(Vec<(f64, f64)>, f64)]) -> TriangleMesh {
    let n = rings[0].0.len();
    let vertices: Vec<Vec3> = rings
        .iter()
        .flat_map(|(poly, z)| poly.iter().map(move |&(x, y)| Vec3::new(x, y, *z)))
        .collect();
    let mut faces = Vec::new();
    let top = ((rings.len() - 1) * n) as u32;
    for [a, b, c] in ear_clip(&rings[0].0) {
        faces.push([a as u32, c as u32, b as u32]);
    }
    for [a, b, c] in ear_clip(&rings[rings.len() - 1].0) {
        faces.push([a as u32 + top, b as u32 + top, c as u32 + top]);
    }
    for r in 0..rings.len() - 1 {
        let base = (r * n) as u32;
        for i in 0..n {
            let (a, b) = (base + i as u32, base + ((i + 1) % n) as u32);
            let (a1, b1) = (a + n as u32, b + n as u32);
            faces.push([a, b, b1]);
            faces.push([a, b1, a1]);
        }
    }
    TriangleMesh { vertices, faces }
}

/// Moves every edge of a counter-clockwise polygon inward by `d` (mitered
/// corners).
fn inset_polygon(poly: &[(f64, f64)], d: f64) -> Vec<(f64, f64)> {
    let n = poly.len();
    let inward = |i: usize| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = dx.hypot(dy);
        (-dy / len, dx / len)
    };
    (0..n)
        .map(|i| {
            let (n1, n2) = (inward((i + n - 1) % n), inward(i));
            let k = d / (1.0 + n1.0 * n2.0 + n1.1 * n2.1);
            (poly[i].0 + k * (n1.0 + n2.0), poly[i].1 + k * (n1.1 + n2.1))
        })
        .collect()
}

fn cross2(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Triangulates a simple counter-clockwise polygon.
fn ear_clip(poly: &[(f64, f64)]) -> Vec<[usize; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::new();
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&k| {
            let (i0, i1, i2) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (poly[i0], poly[i1], poly[i2]);
            if cross2(a, b, c) <= 0.0 {
                return false;
            }
            idx.iter().all(|&j| {
                j == i0
                    || j == i1
                    || j == i2
                    || !(cross2(a, b, poly[j]) >= 0.0
                        && cross2(b, c, poly[j]) >= 0.0
                        && cross2(c, a, poly[j]) >= 0.0)
            })
        });
        let Some(k) = ear else {
            break;
        };
        tris.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
        idx.remove(k);
    }
    if idx.len() == 3 {
        tris.push([idx[0], idx[1], idx[2]]);
    }
    tris
}
