//! Skip-gram embeddings with negative sampling over alert token sequences.
//!
//! Alert tokens are synthetic identifiers, so no subword n-grams: plain SGNS
//! with window 3, 5 negatives, 5 epochs, lr 0.05 linearly decayed. Training is
//! single-threaded and deterministic under a fixed seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dimension: 128,
            window: 3,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Token -> vector table. Unknown tokens map to the `<unk>` vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub config: EmbeddingConfig,
}

impl EmbeddingTable {
    pub fn vector(&self, token: &str) -> &[f64] {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(UNK_TOKEN))
            .expect("table always carries an unk vector")
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains SGNS over the given token sequences (one sequence per node).
pub fn train_embedding(corpus: &[Vec<String>], config: EmbeddingConfig) -> Result<EmbeddingTable> {
    let sentences: Vec<&Vec<String>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // vocabulary in first-appearance order for determinism
    let mut vocab: Vec<String> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut counts: Vec<usize> = Vec::new();
    for sentence in &sentences {
        for token in sentence.iter() {
            match index.get(token) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(token.clone(), vocab.len());
                    vocab.push(token.clone());
                    counts.push(1);
                }
            }
        }
    }

    let v = vocab.len();
    let d = config.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut input: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..d).map(|_| rng.gen_range(-0.5..0.5) / d as f64).collect())
        .collect();
    let mut output: Vec<Vec<f64>> = vec![vec![0.0; d]; v];

    // unigram^0.75 negative-sampling table
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total_weight: f64 = weights.iter().sum();
    let mut neg_table = Vec::with_capacity(100_000.min(v * 100));
    {
        let table_size = 100_000.min(v * 100).max(v);
        for (i, w) in weights.iter().enumerate() {
            let slots = ((w / total_weight) * table_size as f64).ceil() as usize;
            neg_table.extend(std::iter::repeat(i).take(slots.max(1)));
        }
    }

    let pairs: Vec<(usize, usize)> = sentences
        .iter()
        .flat_map(|sentence| {
            let ids: Vec<usize> = sentence.iter().map(|t| index[t]).collect();
            let mut p = Vec::new();
            for (pos, &center) in ids.iter().enumerate() {
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(ids.len());
                for ctx_pos in lo..hi {
                    if ctx_pos != pos {
                        p.push((center, ids[ctx_pos]));
                    }
                }
            }
            p
        })
        .collect();

    let total_steps = (config.epochs * pairs.len().max(1)) as f64;
    let mut step = 0usize;
    for _ in 0..config.epochs {
        for &(center, context) in &pairs {
            let lr = config.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
            step += 1;

            let mut grad_center = vec![0.0; d];
            // positive pair plus negatives
            for k in 0..=config.negatives {
                let (target, label) = if k == 0 {
                    (context, 1.0)
                } else {
                    (neg_table[rng.gen_range(0..neg_table.len())], 0.0)
                };
                if k > 0 && target == context {
                    continue;
                }
                let dot: f64 = input[center].iter().zip(&output[target]).map(|(a, b)| a * b).sum();
                let g = (sigmoid(dot) - label) * lr;
                for j in 0..d {
                    grad_center[j] += g * output[target][j];
                    output[target][j] -= g * input[center][j];
                }
            }
            for j in 0..d {
                input[center][j] -= grad_center[j];
            }
        }
    }

    let mut vectors: BTreeMap<String, Vec<f64>> = vocab
        .into_iter()
        .zip(input)
        .collect();
    vectors.insert(UNK_TOKEN.to_string(), vec![0.0; d]);
    Ok(EmbeddingTable {
        dimension: d,
        vectors,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_corpus_yields_token_plus_unk() {
        let table = train_embedding(
            &[vec!["M|cpu_usage|up".to_string()]],
            EmbeddingConfig { dimension: 8, ..Default::default() },
        )
        .unwrap();
        assert_eq!(table.vectors.len(), 2);
        assert!(table.vectors.contains_key("M|cpu_usage|up"));
        assert!(table.vector("M|cpu_usage|up").iter().all(|v| v.is_finite()));
        assert_eq!(table.vector("never seen"), table.vector(UNK_TOKEN));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            train_embedding(&[], EmbeddingConfig::default()),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train_embedding(&[vec![]], EmbeddingConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn same_seed_gives_bit_identical_tables() {
        let corpus: Vec<Vec<String>> = (0..20)
            .map(|i| {
                vec![
                    format!("M|metric{}|up", i % 4),
                    format!("T|caller-{}|Op|PD", i % 3),
                    format!("L|{}", i % 5),
                ]
            })
            .collect();
        let cfg = EmbeddingConfig { dimension: 16, seed: 42, ..Default::default() };
        let a = train_embedding(&corpus, cfg).unwrap();
        let b = train_embedding(&corpus, cfg).unwrap();
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn tokens_sharing_contexts_end_closer_than_disjoint_ones() {
        // a and b always appear around x, c and d around y; input vectors of
        // tokens with shared contexts should align
        let mut wins = 0;
        for seed in 0..20u64 {
            let mut corpus = Vec::new();
            for _ in 0..60 {
                corpus.push(vec!["a".to_string(), "x".to_string(), "b".to_string()]);
                corpus.push(vec!["c".to_string(), "y".to_string(), "d".to_string()]);
            }
            let cfg = EmbeddingConfig { dimension: 16, seed, ..Default::default() };
            let table = train_embedding(&corpus, cfg).unwrap();
            if table.cosine("a", "b") > table.cosine("a", "c") {
                wins += 1;
            }
        }
        assert!(wins >= 18, "shared-context ordering held in only {wins}/20 seeds");
    }
}
