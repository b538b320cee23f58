use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("vote requires at least one sample")]
    EmptySampleWindow,
    #[error("no node responded; session cannot be tallied")]
    NoRespondents,
    #[error("respondent {0} has no known weight")]
    UnknownRespondent(NodeId),
}

/// One node's vote on a scenario.
///
/// The counted part is `normalized` (exactly 0.0 or 1.0). `raw_mean` is the
/// mean of the sampled primary channel and only rides along for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub raw_mean: f64,
    pub normalized: f64,
    pub weight: f64,
}

impl Vote {
    pub fn positive(&self) -> bool {
        self.normalized == 1.0
    }

    pub fn weighted(&self) -> f64 {
        self.normalized * self.weight
    }
}

/// Averages the sample window and applies the scenario's vote predicate to
/// the raw samples.
pub fn compute_vote(
    samples: &[f64],
    predicate: impl FnOnce(&[f64]) -> bool,
    weight: f64,
) -> Result<Vote, VoteError> {
    if samples.is_empty() {
        return Err(VoteError::EmptySampleWindow);
    }
    let raw_mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let normalized = if predicate(samples) { 1.0 } else { 0.0 };
    Ok(Vote { raw_mean, normalized, weight })
}

/// Scales the weights of the responding nodes so that they sum to the total
/// weight of the whole network while keeping their mutual ratios.
///
/// If every responder has weight zero the scale is undefined; all scaled
/// weights are zero then, which makes any tally reject.
pub fn rebalance_weights(
    all_weights: &BTreeMap<NodeId, f64>,
    responding: &BTreeSet<NodeId>,
) -> Result<BTreeMap<NodeId, f64>, VoteError> {
    if responding.is_empty() {
        return Err(VoteError::NoRespondents);
    }
    let mut responder_sum = 0.0;
    for id in responding {
        responder_sum += all_weights.get(id).ok_or(VoteError::UnknownRespondent(*id))?;
    }
    let total: f64 = all_weights.values().sum();
    let scale = if responder_sum > 0.0 { total / responder_sum } else { 0.0 };
    Ok(responding.iter().map(|id| (*id, all_weights[id] * scale)).collect())
}

/// Acceptance rule for a weighted tally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorityRule {
    pub required: f64,
    /// Accept only when the total strictly exceeds `required`.
    pub strict: bool,
}

impl MajorityRule {
    pub fn accepts(&self, total: f64) -> bool {
        if self.strict {
            total > self.required
        } else {
            total >= self.required
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u16]) -> BTreeSet<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    fn weights(v: &[(u16, f64)]) -> BTreeMap<NodeId, f64> {
        v.iter().map(|&(i, w)| (NodeId(i), w)).collect()
    }

    #[test]
    fn mean_and_threshold() {
        let v = compute_vote(&[400.0, 420.0, 440.0], |s| s.iter().sum::<f64>() / 3.0 > 410.0, 1.0).unwrap();
        assert_eq!(v.raw_mean, 420.0);
        assert_eq!(v.normalized, 1.0);

        let v = compute_vote(&[100.0, 100.0], |s| s[0] > 410.0, 1.0).unwrap();
        assert_eq!(v.raw_mean, 100.0);
        assert_eq!(v.normalized, 0.0);
    }

    #[test]
    fn empty_window() {
        assert_eq!(compute_vote(&[], |_| true, 1.0), Err(VoteError::EmptySampleWindow));
    }

    #[test]
    fn two_of_five_scaled_to_two_and_a_half() {
        let all = weights(&[(1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)]);
        let scaled = rebalance_weights(&all, &ids(&[1, 2])).unwrap();
        assert_eq!(scaled, weights(&[(1, 2.5), (2, 2.5)]));
    }

    #[test]
    fn full_response_is_identity() {
        let all = weights(&[(1, 1.0), (2, 2.5), (3, 0.5)]);
        let scaled = rebalance_weights(&all, &ids(&[1, 2, 3])).unwrap();
        assert_eq!(scaled, all);
    }

    #[test]
    fn uneven_weights() {
        let all = weights(&[(1, 2.5), (2, 1.0), (3, 1.0)]);
        let scaled = rebalance_weights(&all, &ids(&[2, 3])).unwrap();
        assert_eq!(scaled, weights(&[(2, 2.25), (3, 2.25)]));
    }

    #[test]
    fn rebalance_errors() {
        let all = weights(&[(1, 1.0)]);
        assert_eq!(rebalance_weights(&all, &BTreeSet::new()), Err(VoteError::NoRespondents));
        assert_eq!(rebalance_weights(&all, &ids(&[9])), Err(VoteError::UnknownRespondent(NodeId(9))));
    }

    #[test]
    fn zero_weight_responders() {
        let all = weights(&[(1, 0.0), (2, 1.0)]);
        let scaled = rebalance_weights(&all, &ids(&[1])).unwrap();
        assert_eq!(scaled, weights(&[(1, 0.0)]));
    }

    #[test]
    fn majority_comparison() {
        let rule = MajorityRule { required: 2.5, strict: false };
        assert!(rule.accepts(2.5));
        assert!(!MajorityRule { strict: true, ..rule }.accepts(2.5));
        assert!(!rule.accepts(2.0));
    }

    proptest! {
        #[test]
        fn rebalance_preserves_ratio_and_sum(
            ws in prop::collection::vec(0.01f64..10.0, 1..10),
            mask in prop::collection::vec(any::<bool>(), 10),
        ) {
            let all: BTreeMap<NodeId, f64> =
                ws.iter().enumerate().map(|(i, &w)| (NodeId(i as u16), w)).collect();
            let mut responding: BTreeSet<NodeId> =
                all.keys().zip(&mask).filter(|(_, &m)| m).map(|(id, _)| *id).collect();
            if responding.is_empty() {
                responding.insert(NodeId(0));
            }
            let scaled = rebalance_weights(&all, &responding).unwrap();
            let total: f64 = all.values().sum();
            let scaled_sum: f64 = scaled.values().sum();
            prop_assert!(((scaled_sum - total) / total).abs() <= 1e-9);
            for a in &responding {
                for b in &responding {
                    let before = all[a] / all[b];
                    let after = scaled[a] / scaled[b];
                    prop_assert!(((after - before) / before).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn normalized_is_binary(samples in prop::collection::vec(-1e3f64..1e3, 1..20), th in -1e3f64..1e3) {
            let v = compute_vote(&samples, |s| s.iter().sum::<f64>() / s.len() as f64 > th, 1.0).unwrap();
            prop_assert!(v.normalized == 0.0 || v.normalized == 1.0);
        }
    }
}
