//! Static 3-D kd-tree over a borrowed point slice.
//!
//! The tree stores a permutation of point indices; every node covers a
//! contiguous range of that permutation and splits it at the median of the
//! axis with the largest extent. Leaves hold at most [`LEAF_SIZE`] points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Spatial index answering radius and k-nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
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

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Indices of all points with `|p − center| ≤ radius`, in unspecified
    /// order.
    pub fn radius_query(&self, center: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(center, radius, &mut out);
        out
    }

    /// Like [`radius_query`](Self::radius_query) but appends into a reusable
    /// buffer (which is cleared first).
    pub fn radius_query_into(&self, center: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() || radius < 0.0 {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if (self.points[i] - center).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = center[axis] - value;
                    // The median point sits in the right subtree; points equal
                    // to `value` may also sit on the left after partitioning.
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// The `k` nearest points as `(index, distance²)`, closest first.
    pub fn knn(&self, center: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, center, k, &mut heap);
        let mut out: Vec<_> = heap.into_iter().map(|c| (c.index, c.dist2)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_node(&self, id: usize, center: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let dist2 = (self.points[i] - center).norm_squared();
                    if heap.len() < k {
                        heap.push(Candidate { dist2, index: i });
                    } else if let Some(top) = heap.peek() {
                        if dist2 < top.dist2 {
                            heap.pop();
                            heap.push(Candidate { dist2, index: i });
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = center[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, center, k, heap);
                let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if heap.len() < k || diff * diff <= worst {
                    self.knn_node(far, center, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect()
    }

    fn brute_radius(points: &[Vec3], c: &Vec3, r: f64) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| (points[i] - c).norm() <= r)
            .collect()
    }

    #[test]
    fn radius_query_equals_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pts = random_cloud(&mut rng, 200);
            let tree = KdTree::build(&pts);
            let c = Vec3::new(
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
            );
            let r = rng.gen_range(0.0..60.0);
            let mut got = tree.radius_query(&c, r);
            got.sort_unstable();
            assert_eq!(got, brute_radius(&pts, &c, r));
        }
    }

    #[test]
    fn zero_radius_returns_duplicates() {
        let mut pts = random_cloud(&mut ChaCha8Rng::seed_from_u64(5), 50);
        pts.push(pts[7]);
        let tree = KdTree::build(&pts);
        let mut got = tree.radius_query(&pts[7], 0.0);
        got.sort_unstable();
        assert_eq!(got, vec![7, 50]);
    }

    #[test]
    fn diameter_radius_covers_everything() {
        let pts = random_cloud(&mut ChaCha8Rng::seed_from_u64(6), 300);
        let tree = KdTree::build(&pts);
        let diameter = super::super::exact_diameter(&pts);
        assert_eq!(tree.radius_query(&pts[0], diameter).len(), pts.len());
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = random_cloud(&mut rng, 500);
        let tree = KdTree::build(&pts);
        for _ in 0..50 {
            let c = random_cloud(&mut rng, 1)[0];
            let mut all: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - c).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let got = tree.knn(&c, 10);
            assert_eq!(got, all[..10].to_vec());
        }
    }

    #[test]
    fn coincident_points_do_not_recurse_forever() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0); 100];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.radius_query(&pts[0], 0.0).len(), 100);
        assert_eq!(tree.knn(&pts[0], 5).len(), 5);
    }
}
