use nalgebra::UnitQuaternion;

use super::{HypothesisStatus, MatchParams, PoseHypothesis};
use crate::geometry::{weighted_quaternion_mean, RigidTransform, Vec3};

struct PoseCluster {
    seed: RigidTransform,
    seed_q: UnitQuaternion<f64>,
    seed_ref: usize,
    votes: u64,
    trans_sum: Vec3,
    members: Vec<(UnitQuaternion<f64>, f64)>,
}

/// Greedy pose clustering. Hypotheses are visited by votes (descending,
/// then scene reference); each joins the first cluster whose seed lies
/// within both thresholds, otherwise it seeds a new cluster. A cluster's
/// pose is the vote-weighted mean of its members and its vote count their
/// sum. Output is ordered by summed votes and truncated to
/// `max_hypotheses_out`.
pub fn cluster_hypotheses(
    hyps: &[PoseHypothesis],
    params: &MatchParams,
    diameter: f64,
) -> Vec<PoseHypothesis> {
    let trans_thresh = params.cluster_trans_thresh(diameter);
    let rot_thresh = params.cluster_rot_thresh;

    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| {
        hyps[b]
            .votes
            .cmp(&hyps[a].votes)
            .then(hyps[a].scene_ref.cmp(&hyps[b].scene_ref))
    });

    let mut clusters: Vec<PoseCluster> = Vec::new();
    for i in order {
        let h = &hyps[i];
        let w = h.votes as f64;
        let q = h.pose.quaternion();
        let joined = clusters.iter_mut().find(|c| {
            c.seed.translation_distance_to(&h.pose) <= trans_thresh
                && c.seed_q.angle_to(&q) <= rot_thresh
        });
        match joined {
            Some(c) => {
                c.votes += h.votes as u64;
                c.trans_sum += h.pose.translation * w;
                c.members.push((q, w));
            }
            None => clusters.push(PoseCluster {
                seed: h.pose,
                seed_q: q,
                seed_ref: h.scene_ref,
                votes: h.votes as u64,
                trans_sum: h.pose.translation * w,
                members: vec![(q, w)],
            }),
        }
    }

    let mut out: Vec<PoseHypothesis> = clusters
        .into_iter()
        .map(|c| {
            let total: f64 = c.members.iter().map(|m| m.1).sum();
            let translation = if total > 0.0 {
                c.trans_sum / total
            } else {
                c.seed.translation
            };
            let rotation = if total > 0.0 {
                weighted_quaternion_mean(&c.seed_q, c.members.iter().copied())
            } else {
                c.seed_q
            };
            PoseHypothesis {
                pose: RigidTransform::from_quaternion(&rotation, translation),
                votes: c.votes.min(u32::MAX as u64) as u32,
                score: 0.0,
                scene_ref: c.seed_ref,
                status: HypothesisStatus::Clustered,
                low_support: false,
            }
        })
        .collect();
    // stable: equal vote sums keep seed order
    out.sort_by_key(|h| std::cmp::Reverse(h.votes));
    out.truncate(params.max_hypotheses_out);
    out
}
