//! Graph augmentation by random inactivation of non-root-cause instances.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FailureSample, InstanceGraph};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// inactivation probability p; m = floor(p * |V|) nodes are dropped
    pub inactivation_probability: f64,
    pub copies_per_sample: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            inactivation_probability: 0.2,
            copies_per_sample: 1,
            seed: 0,
        }
    }
}

/// Outcome of one augmentation draw.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub sample: FailureSample,
    /// old node index -> new node index for surviving nodes
    pub index_map: Vec<Option<usize>>,
}

/// Drops `m = floor(p * |V|)` nodes drawn uniformly without replacement from
/// the non-root-cause nodes, with all incident edges. When m = 0 the sample is
/// returned unchanged with `augmented = false`.
pub fn augment<R: Rng>(sample: &FailureSample, p: f64, rng: &mut R) -> Augmented {
    let n = sample.graph.nodes.len();
    let m = (p * n as f64).floor() as usize;
    if m == 0 {
        return Augmented {
            sample: FailureSample {
                augmented: false,
                ..sample.clone()
            },
            index_map: (0..n).map(Some).collect(),
        };
    }

    let mut candidates: Vec<usize> = (0..n).filter(|&v| v != sample.root_cause).collect();
    candidates.shuffle(rng);
    let dropped: std::collections::HashSet<usize> =
        candidates.into_iter().take(m).collect();

    let mut index_map: Vec<Option<usize>> = vec![None; n];
    let mut nodes = Vec::with_capacity(n - dropped.len());
    let mut features = Vec::with_capacity(n - dropped.len());
    for v in 0..n {
        if !dropped.contains(&v) {
            index_map[v] = Some(nodes.len());
            nodes.push(sample.graph.nodes[v].clone());
            features.push(sample.features[v].clone());
        }
    }
    let edges: Vec<(usize, usize)> = sample
        .graph
        .edges
        .iter()
        .filter_map(|&(a, b)| match (index_map[a], index_map[b]) {
            (Some(na), Some(nb)) => Some((na, nb)),
            _ => None,
        })
        .collect();

    Augmented {
        sample: FailureSample {
            graph: InstanceGraph { nodes, edges },
            features,
            root_cause: index_map[sample.root_cause].expect("root cause is never dropped"),
            failure_type: sample.failure_type,
            augmented: true,
        },
        index_map,
    }
}
