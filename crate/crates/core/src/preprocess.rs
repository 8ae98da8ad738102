//! Voxel subsampling with per-voxel normal clustering, followed by merging of
//! near-duplicate representatives across neighboring voxels.
//!
//! Each voxel keeps one representative per group of similar normals. Two
//! representatives from adjacent voxels with nearly the same position and
//! normal are then merged into one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between_unit, OrientedPointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleParams {
    /// Voxel edge length in mm.
    pub leaf: f64,
    /// Normals further apart than this (radians) land in separate clusters.
    pub normal_cluster_angle: f64,
    pub merge_neighbor_clusters: bool,
}

impl SubsampleParams {
    pub fn with_leaf(leaf: f64) -> Self {
        Self {
            leaf,
            normal_cluster_angle: 30f64.to_radians(),
            merge_neighbor_clusters: true,
        }
    }

    /// `normal_cluster_angle = π` is accepted as the degenerate "no normal
    /// clustering" setting.
    pub fn validate(&self) -> Result<()> {
        if !(self.leaf > 0.0 && self.leaf.is_finite()) {
            return Err(Error::InvalidParam(format!("leaf must be > 0, got {}", self.leaf)));
        }
        let a = self.normal_cluster_angle;
        if !(a > 0.0 && a <= std::f64::consts::PI) {
            return Err(Error::InvalidParam(format!(
                "normal_cluster_angle must lie in (0, π], got {a}"
            )));
        }
        Ok(())
    }

    fn clusters_everything(&self) -> bool {
        self.normal_cluster_angle >= std::f64::consts::PI
    }
}

type CellKey = [i64; 3];

/// Result of [`subsample`]: one representative per (voxel, normal cluster).
#[derive(Debug, Clone)]
pub struct ClusteredCloud {
    /// Representatives, ordered by voxel key and then by cluster creation.
    pub cloud: OrientedPointCloud,
    /// Voxel label of each representative (index into `cells`).
    pub cell_id: Vec<usize>,
    /// Cluster label of each representative; unique per (cell, cluster).
    pub cluster_id: Vec<usize>,
    /// Integer voxel coordinates, one per occupied voxel.
    pub cells: Vec<CellKey>,
    /// Number of source points behind each representative.
    pub weights: Vec<usize>,
    /// For every input point, the representative it was assigned to.
    pub assignment: Vec<usize>,
}

struct Cluster {
    members: Vec<usize>,
    normal_sum: Vec3,
}

fn mean_direction(sum: &Vec3, fallback: &Vec3) -> Vec3 {
    let len = sum.norm();
    if len > 1e-9 {
        sum / len
    } else {
        *fallback
    }
}

fn voxel_key(p: &Vec3, origin: &Vec3, leaf: f64) -> CellKey {
    let r = (p - origin) / leaf;
    [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
}

/// Buckets points into voxels of edge `leaf` anchored at the cloud's minimum
/// corner, then greedily clusters normals inside each voxel. A point joins
/// the first cluster for which every member, itself included, stays strictly
/// within `normal_cluster_angle` of the updated mean normal; otherwise it
/// seeds a new cluster.
pub fn subsample(cloud: &OrientedPointCloud, params: &SubsampleParams) -> Result<ClusteredCloud> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let points = cloud.points();
    let normals = cloud.normals();
    let origin = points.iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p));

    let keys: Vec<CellKey> = points.iter().map(|p| voxel_key(p, &origin, params.leaf)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    let mut out_points = Vec::new();
    let mut out_normals = Vec::new();
    let mut cell_id = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    let mut assignment = vec![0usize; points.len()];

    let cos_limit = params.normal_cluster_angle.cos();
    let mut start = 0;
    while start < order.len() {
        let key = keys[order[start]];
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| keys[i] == key)
                .count();

        let mut clusters: Vec<Cluster> = Vec::new();
        for &i in &order[start..end] {
            let n = &normals[i];
            let joined = clusters.iter_mut().find(|c| {
                if params.clusters_everything() {
                    return true;
                }
                let sum = c.normal_sum + n;
                let mean = mean_direction(&sum, n);
                n.dot(&mean) > cos_limit
                    && c.members.iter().all(|&m| normals[m].dot(&mean) > cos_limit)
            });
            match joined {
                Some(c) => {
                    c.members.push(i);
                    c.normal_sum += n;
                }
                None => clusters.push(Cluster {
                    members: vec![i],
                    normal_sum: *n,
                }),
            }
        }

        let cell = cells.len();
        cells.push(key);
        for c in clusters {
            let rep = out_points.len();
            let centroid =
                c.members.iter().map(|&m| points[m]).sum::<Vec3>() / c.members.len() as f64;
            out_points.push(centroid);
            out_normals.push(mean_direction(&c.normal_sum, &normals[c.members[0]]));
            cell_id.push(cell);
            weights.push(c.members.len());
            for &m in &c.members {
                assignment[m] = rep;
            }
        }
        start = end;
    }

    let cluster_id = (0..out_points.len()).collect();
    Ok(ClusteredCloud {
        cloud: OrientedPointCloud::new(out_points, out_normals)?,
        cell_id,
        cluster_id,
        cells,
        weights,
        assignment,
    })
}

/// Merges representatives in the same or a face/edge/corner-adjacent voxel
/// whose normals differ by less than `normal_cluster_angle` and whose
/// distance is below `leaf`. Each unmerged representative, in order, absorbs
/// every later qualifying one; the merged point is the weight-averaged
/// centroid with the weight-averaged normal renormalized.
pub fn filter_neighbor_pairs(cc: &ClusteredCloud, params: &SubsampleParams) -> OrientedPointCloud {
    if !params.merge_neighbor_clusters {
        return cc.cloud.clone();
    }
    let mut by_cell: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (rep, &cell) in cc.cell_id.iter().enumerate() {
        by_cell.entry(cc.cells[cell]).or_default().push(rep);
    }

    let points = cc.cloud.points();
    let normals = cc.cloud.normals();
    let n = points.len();
    let mut absorbed = vec![false; n];
    let mut out_points = Vec::with_capacity(n);
    let mut out_normals = Vec::with_capacity(n);

    for i in 0..n {
        if absorbed[i] {
            continue;
        }
        let key = cc.cells[cc.cell_id[i]];
        let w_i = cc.weights[i] as f64;
        let mut pos_sum = points[i] * w_i;
        let mut normal_sum = normals[i] * w_i;
        let mut weight = w_i;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(reps) = by_cell.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) else {
                        continue;
                    };
                    for &j in reps {
                        if j <= i || absorbed[j] {
                            continue;
                        }
                        if (points[i] - points[j]).norm() < params.leaf
                            && angle_between_unit(&normals[i], &normals[j])
                                < params.normal_cluster_angle
                        {
                            absorbed[j] = true;
                            let w = cc.weights[j] as f64;
                            pos_sum += points[j] * w;
                            normal_sum += normals[j] * w;
                            weight += w;
                        }
                    }
                }
            }
        }
        out_points.push(pos_sum / weight);
        out_normals.push(mean_direction(&normal_sum, &normals[i]));
    }
    OrientedPointCloud::new(out_points, out_normals).expect("merged normals are unit length")
}

/// Full preprocessing: [`subsample`] then [`filter_neighbor_pairs`].
pub fn preprocess(cloud: &OrientedPointCloud, params: &SubsampleParams) -> Result<OrientedPointCloud> {
    let cc = subsample(cloud, params)?;
    Ok(filter_neighbor_pairs(&cc, params))
}
