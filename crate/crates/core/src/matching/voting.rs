use std::f64::consts::PI;

use rayon::prelude::*;
use rustc_hash::FxHashSet;

use super::{HypothesisStatus, MatchParams, PoseHypothesis};
use crate::geometry::{KdTree, OrientedPointCloud};
use crate::ppf::{
    alpha_angle, compute_ppf, discretize, intermediate_frame, neighbor_keys_into,
    pose_from_frames, ModelTable, PpfKey,
};

/// Quantizes an angle in (−π, π] into `n` equal bins starting at −π.
#[inline]
pub fn alpha_bin(alpha: f64, n: u32) -> u32 {
    let b = ((alpha + PI) / (2.0 * PI) * n as f64).floor() as i64;
    b.rem_euclid(n as i64) as u32
}

/// Rotation about x represented by a vote in `delta_bin`: the difference of
/// the lower edges of the scene and model angle bins.
#[inline]
pub fn delta_angle(delta_bin: u32, n: u32) -> f64 {
    delta_bin as f64 * 2.0 * PI / n as f64
}

/// Vote grid over (model reference point × rotation bin), reset lazily by
/// remembering the touched cells.
#[derive(Debug, Clone)]
pub struct Accumulator {
    votes: Vec<u32>,
    n_alpha: u32,
    touched: Vec<u32>,
}

impl Accumulator {
    pub fn new(n_model: usize, n_alpha: u32) -> Self {
        Self {
            votes: vec![0; n_model * n_alpha as usize],
            n_alpha,
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn vote(&mut self, model_index: u32, bin: u32) {
        let cell = model_index * self.n_alpha + bin;
        let v = &mut self.votes[cell as usize];
        if *v == 0 {
            self.touched.push(cell);
        }
        *v += 1;
    }

    pub fn get(&self, model_index: usize, bin: u32) -> u32 {
        self.votes[model_index * self.n_alpha as usize + bin as usize]
    }

    pub fn n_alpha(&self) -> u32 {
        self.n_alpha
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.votes
    }

    /// Highest cell as `(model index, bin, votes)`; ties go to the lowest
    /// (model index, bin). `None` when nothing was voted.
    pub fn peak(&self) -> Option<(u32, u32, u32)> {
        let mut best: Option<(u32, u32)> = None;
        for &cell in &self.touched {
            let v = self.votes[cell as usize];
            best = match best {
                Some((bc, bv)) if bv > v || (bv == v && bc < cell) => Some((bc, bv)),
                _ => Some((cell, v)),
            };
        }
        best.map(|(cell, v)| (cell / self.n_alpha, cell % self.n_alpha, v))
    }

    pub fn clear(&mut self) {
        for &cell in &self.touched {
            self.votes[cell as usize] = 0;
        }
        self.touched.clear();
    }
}

/// Per-reference-point record of the (feature key, scene angle bin) pairs
/// that already voted.
#[derive(Debug, Default, Clone)]
pub struct VoteLog {
    seen: FxHashSet<u64>,
}

impl VoteLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// `true` the first time a (key, angle bin) pair is offered since the
    /// last [`clear`](Self::clear), `false` afterwards.
    #[inline]
    pub fn allow(&mut self, packed_key: u32, alpha_bin: u32) -> bool {
        self.seen.insert(((packed_key as u64) << 32) | alpha_bin as u64)
    }

    pub fn clear(&mut self) {
        self.seen.clear();
    }
}

/// Reference-point-independent matching state: the scene, its kd-tree and
/// the rotation bin of every table entry.
pub struct SceneIndex<'a> {
    pub scene: &'a OrientedPointCloud,
    pub tree: KdTree,
    entry_bins: Vec<u32>,
    n_alpha: u32,
}

impl<'a> SceneIndex<'a> {
    pub fn new(scene: &'a OrientedPointCloud, table: &ModelTable, n_alpha: u32) -> Self {
        Self {
            scene,
            tree: KdTree::build(scene.points()),
            entry_bins: table
                .entries()
                .iter()
                .map(|e| alpha_bin(e.alpha as f64, n_alpha))
                .collect(),
            n_alpha,
        }
    }
}

/// Scratch buffers owned by one worker.
pub struct VoteScratch {
    pub acc: Accumulator,
    pub log: VoteLog,
    neighbors: Vec<usize>,
    keys: Vec<PpfKey>,
}

impl VoteScratch {
    pub fn new(table: &ModelTable, params: &MatchParams) -> Self {
        Self {
            acc: Accumulator::new(table.model().len(), params.n_alpha_bins),
            log: VoteLog::new(),
            neighbors: Vec::new(),
            keys: Vec::with_capacity(16),
        }
    }
}

/// Fills `scratch.acc` with the votes of scene point `ref_index`. Returns
/// the number of scene partners that produced a feature.
pub fn vote_reference(
    table: &ModelTable,
    index: &SceneIndex<'_>,
    ref_index: usize,
    params: &MatchParams,
    scratch: &mut VoteScratch,
) -> usize {
    scratch.acc.clear();
    scratch.log.clear();
    let q = table.quant();
    let n_alpha = params.n_alpha_bins;
    assert_eq!(index.n_alpha, n_alpha, "scene index built for another rotation binning");
    let scene = index.scene;
    let (p_r, n_r) = (scene.point(ref_index), scene.normal(ref_index));
    let frame = intermediate_frame(p_r, n_r);

    index
        .tree
        .radius_query_into(p_r, q.d_max * (1.0 + 1e-9), &mut scratch.neighbors);
    // the padded radius leaves the cut at d_max to the feature distance below;
    // kd-tree order is unspecified; duplicate suppression depends on order
    scratch.neighbors.sort_unstable();

    let mut partners = 0;
    for &i in &scratch.neighbors {
        if i == ref_index {
            continue;
        }
        let Ok(f) = compute_ppf(p_r, n_r, scene.point(i), scene.normal(i)) else {
            continue;
        };
        if f.dist > q.d_max {
            continue;
        }
        partners += 1;
        let s_bin = alpha_bin(alpha_angle(&frame, scene.point(i)), n_alpha);
        if q.noise_fraction > 0.0 {
            neighbor_keys_into(&f, q, &mut scratch.keys);
        } else {
            scratch.keys.clear();
            scratch.keys.push(discretize(&f, q));
        }
        for key in &scratch.keys {
            let packed = key.pack(q);
            if !scratch.log.allow(packed, s_bin) {
                continue;
            }
            let range = table.lookup_range(packed);
            let entries = &table.entries()[range.clone()];
            for (e, &m_bin) in entries.iter().zip(&index.entry_bins[range]) {
                let delta = (s_bin + n_alpha - m_bin) % n_alpha;
                scratch.acc.vote(e.ref_index, delta);
            }
        }
    }
    partners
}

/// Scene reference points visited by [`match_scene`].
pub fn reference_points(scene: &OrientedPointCloud, params: &MatchParams) -> Vec<usize> {
    (0..scene.len())
        .step_by(params.scene_ref_stride.max(1))
        .collect()
}

/// Votes for every scene reference point and returns one hypothesis per
/// reference point that received any vote, sorted by votes (descending)
/// then reference index.
pub fn match_scene(
    table: &ModelTable,
    scene: &OrientedPointCloud,
    params: &MatchParams,
) -> Vec<PoseHypothesis> {
    if scene.is_empty() || table.model().is_empty() {
        return Vec::new();
    }
    let index = SceneIndex::new(scene, table, params.n_alpha_bins);
    let refs = reference_points(scene, params);
    let n_alpha = params.n_alpha_bins;

    let mut hyps: Vec<PoseHypothesis> = refs
        .par_iter()
        .map_init(
            || VoteScratch::new(table, params),
            |scratch, &r| {
                vote_reference(table, &index, r, params, scratch);
                let (m, bin, votes) = scratch.acc.peak()?;
                let scene_frame = intermediate_frame(scene.point(r), scene.normal(r));
                let pose = pose_from_frames(
                    &scene_frame,
                    &table.frames()[m as usize],
                    delta_angle(bin, n_alpha),
                );
                Some(PoseHypothesis {
                    pose,
                    votes,
                    score: 0.0,
                    scene_ref: r,
                    status: HypothesisStatus::Raw,
                    low_support: false,
                })
            },
        )
        .flatten()
        .collect();
    hyps.sort_by(|a, b| b.votes.cmp(&a.votes).then(a.scene_ref.cmp(&b.scene_ref)));
    hyps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_log_allows_each_pair_once() {
        let mut log = VoteLog::new();
        assert!(log.allow(17, 3));
        assert!(!log.allow(17, 3));
        assert!(log.allow(17, 4));
        assert!(log.allow(18, 3));
        log.clear();
        assert!(log.allow(17, 3));
    }

    #[test]
    fn alpha_bins_cover_the_circle() {
        assert_eq!(alpha_bin(-PI, 30), 0);
        assert_eq!(alpha_bin(PI, 30), 0);
        assert_eq!(alpha_bin(PI - 1e-9, 30), 29);
        assert_eq!(alpha_bin(0.0, 30), 15);
        assert_eq!(alpha_bin(-1e-12, 30), 14);
    }

    #[test]
    fn peak_breaks_ties_toward_lowest_cell() {
        let mut acc = Accumulator::new(4, 5);
        acc.vote(3, 1);
        acc.vote(3, 1);
        acc.vote(1, 4);
        acc.vote(1, 4);
        acc.vote(2, 0);
        assert_eq!(acc.peak(), Some((1, 4, 2)));
        acc.vote(3, 1);
        assert_eq!(acc.peak(), Some((3, 1, 3)));
        acc.clear();
        assert_eq!(acc.peak(), None);
        assert!(acc.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn peak_equals_brute_argmax() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let mut acc = Accumulator::new(20, 7);
            for _ in 0..60 {
                acc.vote(rng.gen_range(0..20), rng.gen_range(0..7));
            }
            let slice = acc.as_slice();
            let max = *slice.iter().max().unwrap();
            let first = slice.iter().position(|&v| v == max).unwrap() as u32;
            assert_eq!(acc.peak(), Some((first / 7, first % 7, max)));
        }
    }
}
