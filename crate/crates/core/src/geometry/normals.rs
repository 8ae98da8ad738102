use nalgebra::{Matrix3, SymmetricEigen};

use super::{KdTree, OrientedPointCloud, Vec3};
use crate::error::{Error, Result};

/// Output of [`estimate_normals`]: the oriented cloud plus, for each of its
/// points, the index of the input point it came from. Points whose
/// neighborhood was degenerate are absent.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: OrientedPointCloud,
    pub source_index: Vec<usize>,
}

/// Smallest-eigenvalue eigenvector of the covariance of `pts`, or `None`
/// when the neighborhood does not span a plane.
pub(crate) fn pca_normal<'a>(pts: impl Iterator<Item = &'a Vec3> + Clone) -> Option<Vec3> {
    let mut count = 0usize;
    let mut mean = Vec3::zeros();
    for p in pts.clone() {
        mean += p;
        count += 1;
    }
    if count < 3 {
        return None;
    }
    mean /= count as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= count as f64;
    let scale = cov.trace();
    if !(scale > 1e-18) {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // A line (two vanishing eigenvalues) has no defined normal.
    if eig.eigenvalues[order[1]] <= 1e-12 * scale {
        return None;
    }
    let n: Vec3 = eig.eigenvectors.column(order[0]).into();
    let len = n.norm();
    (len > 1e-12).then(|| n / len)
}

/// PCA normals from the `k` nearest neighbors (the point itself included),
/// oriented so that `normal · (viewpoint − point) ≥ 0`.
pub fn estimate_normals(points: &[Vec3], k: usize, viewpoint: &Vec3) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidParam(format!("k must be at least 3, got {k}")));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    let tree = KdTree::build(points);
    let mut out_p = Vec::with_capacity(points.len());
    let mut out_n = Vec::with_capacity(points.len());
    let mut source_index = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let nn = tree.knn(p, k);
        let Some(mut n) = pca_normal(nn.iter().map(|(j, _)| &points[*j])) else {
            continue;
        };
        if n.dot(&(viewpoint - p)) < 0.0 {
            n = -n;
        }
        out_p.push(*p);
        out_n.push(n);
        source_index.push(i);
    }
    Ok(NormalEstimate {
        cloud: OrientedPointCloud::new(out_p, out_n)?,
        source_index,
    })
}
