//! Isolation forest over small fixed-dimension feature vectors.
//!
//! Standard construction: each tree isolates a subsample by splitting on a
//! random feature at a random cut between the observed min and max; the
//! anomaly score is `s(x) = 2^(-E[h(x)] / c(n))` where `h` is the path length
//! adjusted by `c(size)` at external nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<TreeNode>,
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            let harmonic = (n - 1.0).ln() + 0.577_215_664_901_532_9;
            2.0 * harmonic - 2.0 * (n - 1.0) / n
        }
    }
}

impl IsolationTree {
    pub fn fit<R: Rng>(points: &[Vec<f64>], height_limit: usize, rng: &mut R) -> Self {
        let mut nodes = Vec::new();
        let idx: Vec<usize> = (0..points.len()).collect();
        Self::build(points, &idx, 0, height_limit, rng, &mut nodes);
        IsolationTree { nodes }
    }

    fn build<R: Rng>(
        points: &[Vec<f64>],
        idx: &[usize],
        depth: usize,
        height_limit: usize,
        rng: &mut R,
        nodes: &mut Vec<TreeNode>,
    ) -> usize {
        if depth >= height_limit || idx.len() <= 1 {
            nodes.push(TreeNode::Leaf { size: idx.len() });
            return nodes.len() - 1;
        }
        let dim = points[idx[0]].len();
        // pick among features that still vary
        let splittable: Vec<usize> = (0..dim)
            .filter(|&f| {
                let (mn, mx) = min_max(points, idx, f);
                mx > mn
            })
            .collect();
        if splittable.is_empty() {
            nodes.push(TreeNode::Leaf { size: idx.len() });
            return nodes.len() - 1;
        }
        let feature = splittable[rng.gen_range(0..splittable.len())];
        let (mn, mx) = min_max(points, idx, feature);
        let split = rng.gen_range(mn..mx);
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| points[i][feature] < split);

        let slot = nodes.len();
        nodes.push(TreeNode::Leaf { size: 0 }); // placeholder
        let left = Self::build(points, &left_idx, depth + 1, height_limit, rng, nodes);
        let right = Self::build(points, &right_idx, depth + 1, height_limit, rng, nodes);
        nodes[slot] = TreeNode::Internal {
            feature,
            split,
            left,
            right,
        };
        slot
    }

    /// Path length of `x` including the `c(size)` leaf adjustment.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { size } => return depth + average_path_length(*size),
                TreeNode::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *split { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    /// subsample size actually used per tree
    pub sample_size: usize,
}

impl IsolationForest {
    /// Groups smaller than `subsample_size` use all their points per tree.
    pub fn fit<R: Rng>(
        points: &[Vec<f64>],
        tree_count: usize,
        subsample_size: usize,
        rng: &mut R,
    ) -> Self {
        assert!(!points.is_empty(), "cannot fit a forest on no points");
        let sample_size = subsample_size.min(points.len());
        let height_limit = (sample_size as f64).log2().ceil().max(1.0) as usize;
        let trees = (0..tree_count)
            .map(|_| {
                let sample: Vec<Vec<f64>> = if sample_size == points.len() {
                    points.to_vec()
                } else {
                    rand::seq::index::sample(rng, points.len(), sample_size)
                        .iter()
                        .map(|i| points[i].clone())
                        .collect()
                };
                IsolationTree::fit(&sample, height_limit, rng)
            })
            .collect();
        IsolationForest { trees, sample_size }
    }

    /// Anomaly score in (0, 1); higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mean_path: f64 =
            self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        let c = average_path_length(self.sample_size);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-mean_path / c)
    }
}

fn min_max(points: &[Vec<f64>], idx: &[usize], feature: usize) -> (f64, f64) {
    let mut mn = f64::INFINITY;
    let mut mx = f64::NEG_INFINITY;
    for &i in idx {
        let v = points[i][feature];
        mn = mn.min(v);
        mx = mx.max(v);
    }
    (mn, mx)
}
