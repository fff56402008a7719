//! Labeled failure samples: correlation graph, per-node per-modality alert
//! features, and the dataset file format.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alerts::{Alert, Modality};
use crate::embed::{EmbeddingConfig, EmbeddingTable};
use crate::error::{Error, Result};
use crate::telemetry::Span;

/// Instances as nodes, bidirectional invocation edges from traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceGraph {
    /// first-appearance order over the window's spans
    pub nodes: Vec<String>,
    /// directed index pairs; every undirected invocation is stored both ways
    pub edges: Vec<(usize, usize)>,
}

impl InstanceGraph {
    pub fn node_index(&self, instance: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == instance)
    }

    /// Neighbor indices of `v`, ascending.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(a, _)| a == v)
            .map(|&(_, b)| b)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Nodes are all instances appearing in the spans; every parented invocation
/// (p -> c) with distinct endpoints contributes both (p, c) and (c, p).
pub fn build_graph(window_spans: &[Span]) -> Result<InstanceGraph> {
    if window_spans.is_empty() {
        return Err(Error::EmptyTraces);
    }
    let mut nodes: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for s in window_spans {
        if !index.contains_key(&s.instance_id) {
            index.insert(s.instance_id.clone(), nodes.len());
            nodes.push(s.instance_id.clone());
        }
    }
    let mut span_instance: HashMap<(&str, &str), &str> = HashMap::new();
    for s in window_spans {
        span_instance.insert((s.trace_id.as_str(), s.span_id.as_str()), s.instance_id.as_str());
    }
    let mut edge_set: HashSet<(usize, usize)> = HashSet::new();
    for s in window_spans {
        let Some(parent_id) = &s.parent_span_id else { continue };
        let Some(&parent_instance) = span_instance.get(&(s.trace_id.as_str(), parent_id.as_str()))
        else {
            continue;
        };
        let p = index[parent_instance];
        let c = index[&s.instance_id];
        if p != c {
            edge_set.insert((p, c));
            edge_set.insert((c, p));
        }
    }
    let mut edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
    edges.sort_unstable();
    Ok(InstanceGraph { nodes, edges })
}

/// Mean of the token vectors of one node's alerts in one modality;
/// the zero vector when the node has no alerts there.
pub fn encode_node(tokens: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let d = table.dimension;
    if tokens.is_empty() {
        return vec![0.0; d];
    }
    let mut acc = vec![0.0; d];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(table.vector(t)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= tokens.len() as f64;
    }
    acc
}

/// Per-node, per-modality alert token sequences for one failure window.
pub fn group_alert_tokens(
    alerts: &[Alert],
    graph: &InstanceGraph,
) -> Vec<BTreeMap<Modality, Vec<String>>> {
    let mut grouped: Vec<BTreeMap<Modality, Vec<String>>> =
        vec![BTreeMap::new(); graph.nodes.len()];
    for alert in alerts {
        if let Some(v) = graph.node_index(&alert.reporter_id) {
            grouped[v]
                .entry(alert.modality)
                .or_default()
                .push(alert.token());
        }
    }
    grouped
}

/// One labeled failure ready for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSample {
    pub graph: InstanceGraph,
    /// per node: (metric, trace, log) feature vectors of length d
    pub features: Vec<[Vec<f64>; 3]>,
    /// node index of the root cause
    pub root_cause: usize,
    /// failure-type class index
    pub failure_type: usize,
    pub augmented: bool,
}

/// Builds one sample from windowed alerts, the graph, and labels.
pub fn build_sample(
    graph: InstanceGraph,
    alerts: &[Alert],
    table: &EmbeddingTable,
    root_cause_instance: &str,
    failure_type: usize,
) -> Result<FailureSample> {
    let root_cause = graph
        .node_index(root_cause_instance)
        .ok_or_else(|| Error::RootCauseNotInGraph(root_cause_instance.to_string()))?;
    let features = node_features(&graph, alerts, table);
    Ok(FailureSample {
        graph,
        features,
        root_cause,
        failure_type,
        augmented: false,
    })
}

/// Per-node feature tuples without labels (online diagnosis path).
pub fn node_features(
    graph: &InstanceGraph,
    alerts: &[Alert],
    table: &EmbeddingTable,
) -> Vec<[Vec<f64>; 3]> {
    let grouped = group_alert_tokens(alerts, graph);
    grouped
        .iter()
        .map(|by_modality| {
            let empty: Vec<String> = Vec::new();
            [
                encode_node(by_modality.get(&Modality::Metric).unwrap_or(&empty), table),
                encode_node(by_modality.get(&Modality::Trace).unwrap_or(&empty), table),
                encode_node(by_modality.get(&Modality::Log).unwrap_or(&empty), table),
            ]
        })
        .collect()
}

/// Dataset file: manifest plus samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<FailureSample>,
    /// parallel to `samples`: true for training-split samples
    pub train_split: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// failure-type label -> class index
    pub failure_types: BTreeMap<String, usize>,
    pub embedding: EmbeddingConfig,
    pub embedding_table: EmbeddingTable,
    pub seed: u64,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.manifest.failure_types.len()
    }

    pub fn failure_type_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.manifest.failure_types.len()];
        for (name, &idx) in &self.manifest.failure_types {
            names[idx] = name.clone();
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alerts::{AlertPayload, Direction};
    use crate::embed::train_embedding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn span(trace: &str, id: &str, parent: Option<&str>, instance: &str) -> Span {
        Span {
            trace_id: trace.into(),
            span_id: id.into(),
            parent_span_id: parent.map(String::from),
            service: instance.into(),
            instance_id: instance.into(),
            operation: "Op".into(),
            start_ts: 0,
            duration_ms: 10,
            status: "200".into(),
        }
    }

    #[test]
    fn chain_spans_yield_bidirectional_edges() {
        let spans = vec![
            span("t", "a", None, "A"),
            span("t", "b", Some("a"), "B"),
            span("t", "c", Some("b"), "C"),
        ];
        let g = build_graph(&spans).unwrap();
        assert_eq!(g.nodes, vec!["A", "B", "C"]);
        let edges: BTreeSet<_> = g.edges.iter().copied().collect();
        let expect: BTreeSet<_> = [(0, 1), (1, 0), (1, 2), (2, 1)].into_iter().collect();
        assert_eq!(edges, expect);
    }

    #[test]
    fn single_root_span_has_no_edges() {
        let g = build_graph(&[span("t", "a", None, "A")]).unwrap();
        assert_eq!(g.nodes, vec!["A"]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn empty_spans_error() {
        assert!(matches!(build_graph(&[]), Err(Error::EmptyTraces)));
    }

    #[test]
    fn random_forests_match_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n_traces = rng.gen_range(1..6);
            let mut spans = Vec::new();
            for t in 0..n_traces {
                let trace = format!("t{t}");
                let n_spans = rng.gen_range(1..8);
                for s in 0..n_spans {
                    let parent = if s == 0 {
                        None
                    } else {
                        Some(format!("s{}", rng.gen_range(0..s)))
                    };
                    let instance = format!("inst-{}", rng.gen_range(0..5));
                    spans.push(Span {
                        trace_id: trace.clone(),
                        span_id: format!("s{s}"),
                        parent_span_id: parent,
                        service: instance.clone(),
                        instance_id: instance,
                        operation: "Op".into(),
                        start_ts: 0,
                        duration_ms: 1,
                        status: "200".into(),
                    });
                }
            }
            let g = build_graph(&spans).unwrap();
            // brute-force pair enumeration
            let mut expect: BTreeSet<(usize, usize)> = BTreeSet::new();
            for s in &spans {
                if let Some(p) = &s.parent_span_id {
                    if let Some(parent) = spans
                        .iter()
                        .find(|x| x.trace_id == s.trace_id && &x.span_id == p)
                    {
                        let pi = g.node_index(&parent.instance_id).unwrap();
                        let ci = g.node_index(&s.instance_id).unwrap();
                        if pi != ci {
                            expect.insert((pi, ci));
                            expect.insert((ci, pi));
                        }
                    }
                }
            }
            let got: BTreeSet<_> = g.edges.iter().copied().collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn permuting_spans_changes_indexing_not_edge_relation() {
        let spans = vec![
            span("t", "a", None, "A"),
            span("t", "b", Some("a"), "B"),
            span("t", "c", Some("a"), "C"),
        ];
        let mut reversed = spans.clone();
        reversed.reverse();
        let g1 = build_graph(&spans).unwrap();
        let g2 = build_graph(&reversed).unwrap();
        let as_names = |g: &InstanceGraph| -> BTreeSet<(String, String)> {
            g.edges
                .iter()
                .map(|&(a, b)| (g.nodes[a].clone(), g.nodes[b].clone()))
                .collect()
        };
        assert_ne!(g1.nodes, g2.nodes);
        assert_eq!(as_names(&g1), as_names(&g2));
    }

    fn small_table() -> EmbeddingTable {
        let corpus = vec![
            vec!["M|cpu_usage|up".to_string(), "M|memory|down".to_string()],
            vec!["T|frontend-0|GetProduct|PD".to_string()],
            vec!["L|13".to_string()],
        ];
        train_embedding(
            &corpus,
            EmbeddingConfig { dimension: 8, seed: 1, ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn encode_empty_is_zero_vector() {
        let table = small_table();
        assert_eq!(encode_node(&[], &table), vec![0.0; 8]);
    }

    #[test]
    fn encode_single_token_is_its_vector() {
        let table = small_table();
        let got = encode_node(&["L|13".to_string()], &table);
        assert_eq!(got, table.vector("L|13").to_vec());
    }

    #[test]
    fn encode_matches_averaging_oracle() {
        let table = small_table();
        let tokens = vec![
            "M|cpu_usage|up".to_string(),
            "M|memory|down".to_string(),
            "L|13".to_string(),
        ];
        let got = encode_node(&tokens, &table);
        for j in 0..8 {
            let expect: f64 =
                tokens.iter().map(|t| table.vector(t)[j]).sum::<f64>() / tokens.len() as f64;
            assert!((got[j] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_norm_bounded_by_max_token_norm() {
        let table = small_table();
        let tokens = vec![
            "M|cpu_usage|up".to_string(),
            "T|frontend-0|GetProduct|PD".to_string(),
        ];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = encode_node(&tokens, &table);
        let max_norm = tokens
            .iter()
            .map(|t| norm(table.vector(t)))
            .fold(0.0f64, f64::max);
        assert!(norm(&got) <= max_norm + 1e-12);
    }

    #[test]
    fn build_sample_tuple_per_node_and_roundtrip() {
        let spans = vec![
            span("t", "a", None, "frontend-0"),
            span("t", "b", Some("a"), "product-1"),
        ];
        let graph = build_graph(&spans).unwrap();
        let table = small_table();
        let alerts = vec![
            Alert {
                reporter_id: "product-1".into(),
                modality: Modality::Metric,
                payload: AlertPayload::Metric {
                    metric: "cpu_usage".into(),
                    direction: Direction::Up,
                },
            },
            Alert {
                reporter_id: "product-1".into(),
                modality: Modality::Trace,
                payload: AlertPayload::Trace {
                    parent: "frontend-0".into(),
                    operation: "GetProduct".into(),
                    abnormal: "PD".into(),
                },
            },
            Alert {
                reporter_id: "product-1".into(),
                modality: Modality::Log,
                payload: AlertPayload::Log { log_key: 13 },
            },
        ];
        let sample = build_sample(graph, &alerts, &table, "product-1", 2).unwrap();
        assert_eq!(sample.features.len(), sample.graph.nodes.len());
        assert!(!sample.augmented);
        let idx = sample.graph.node_index("product-1").unwrap();
        for block in &sample.features[idx] {
            assert!(block.iter().any(|&v| v != 0.0), "expected nonzero feature block");
        }
        // alert-free node carries all-zero tuples
        let f_idx = sample.graph.node_index("frontend-0").unwrap();
        for block in &sample.features[f_idx] {
            assert!(block.iter().all(|&v| v == 0.0));
        }
        let json = serde_json::to_string(&sample).unwrap();
        let back: FailureSample = serde_json::from_str(&json).unwrap();
        assert_eq!(sample, back);
    }

    #[test]
    fn missing_root_cause_is_reported() {
        let graph = build_graph(&[span("t", "a", None, "A")]).unwrap();
        let table = small_table();
        assert!(matches!(
            build_sample(graph, &[], &table, "nowhere-9", 0),
            Err(Error::RootCauseNotInGraph(_))
        ));
    }

    #[test]
    fn alert_free_sample_has_all_zero_features() {
        let graph = build_graph(&[span("t", "a", None, "A")]).unwrap();
        let table = small_table();
        let sample = build_sample(graph, &[], &table, "A", 0).unwrap();
        for tuple in &sample.features {
            for block in tuple {
                assert!(block.iter().all(|&v| v == 0.0));
            }
        }
    }
}
