//! Fixed-depth Drain-style log template mining.
//!
//! Every message is masked (numbers, hex, IPs, UUIDs become `<*>`), tokenized
//! on whitespace, and routed through a prefix tree keyed first by token count
//! and then by the leading tokens. Leaves hold template groups; a message joins
//! the most similar group when the literal-token similarity reaches the
//! configured threshold, otherwise it founds a new template.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WILDCARD: &str = "<*>";

/// One mined template. `tokens` mixes literals and `<*>` wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub template_id: usize,
    pub tokens: Vec<String>,
    pub match_count: usize,
}

impl LogTemplate {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Drain hyperparameters and masking rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrainConfig {
    pub tree_depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
    /// Ordered (pattern, placeholder) pairs applied before tokenization.
    pub mask_rules: Vec<(String, String)>,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            tree_depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
            mask_rules: vec![
                // UUIDs before hex, hex before decimals: longest patterns first.
                (
                    r"\b[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}\b".into(),
                    WILDCARD.into(),
                ),
                (r"\b(?:\d{1,3}\.){3}\d{1,3}(?::\d+)?\b".into(), WILDCARD.into()),
                (r"\b0x[0-9a-fA-F]+\b".into(), WILDCARD.into()),
                (
                    r"\b[0-9a-fA-F]*\d[0-9a-fA-F]*[a-fA-F][0-9a-fA-F]{2,}\b".into(),
                    WILDCARD.into(),
                ),
                (r"\b\d+(\.\d+)?\b".into(), WILDCARD.into()),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InternalNode {
    children: HashMap<String, usize>,
    leaf_groups: Vec<usize>,
}

impl InternalNode {
    fn new() -> Self {
        InternalNode {
            children: HashMap::new(),
            leaf_groups: Vec::new(),
        }
    }
}

/// Mutable Drain parse tree. Single writer; parsing must be externally
/// serialized, reads on a quiesced state are safe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrainState {
    pub config: DrainConfig,
    templates: Vec<LogTemplate>,
    nodes: Vec<InternalNode>,
    /// root children keyed by token count
    length_roots: HashMap<usize, usize>,
    #[serde(skip)]
    compiled_masks: Option<Vec<(Regex, String)>>,
}

impl DrainState {
    pub fn new(config: DrainConfig) -> Self {
        DrainState {
            config,
            templates: Vec::new(),
            nodes: Vec::new(),
            length_roots: HashMap::new(),
            compiled_masks: None,
        }
    }

    pub fn templates(&self) -> &[LogTemplate] {
        &self.templates
    }

    fn compile_masks(&mut self) {
        if self.compiled_masks.is_none() {
            let compiled = self
                .config
                .mask_rules
                .iter()
                .map(|(pat, repl)| (Regex::new(pat).expect("mask rule must compile"), repl.clone()))
                .collect();
            self.compiled_masks = Some(compiled);
        }
    }

    /// Masks variables and splits on whitespace.
    pub fn preprocess(&mut self, message: &str) -> Vec<String> {
        self.compile_masks();
        let mut s = message.to_string();
        for (re, repl) in self.compiled_masks.as_ref().unwrap() {
            s = re.replace_all(&s, repl.as_str()).into_owned();
        }
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    fn similarity(template: &[String], tokens: &[String]) -> f64 {
        debug_assert_eq!(template.len(), tokens.len());
        if template.is_empty() {
            return 1.0;
        }
        let same = template
            .iter()
            .zip(tokens)
            .filter(|(a, b)| *a == *b && a.as_str() != WILDCARD)
            .count();
        same as f64 / template.len() as f64
    }

    /// Parses one message, returning its (possibly new) template id.
    pub fn parse(&mut self, message: &str) -> usize {
        let tokens = self.preprocess(message);
        let len = tokens.len();

        let root = *self.length_roots.entry(len).or_insert_with(|| {
            self.nodes.push(InternalNode::new());
            self.nodes.len() - 1
        });

        // descend depth-2 internal levels keyed by leading tokens
        let internal_levels = self.config.tree_depth.saturating_sub(2).min(len);
        let mut node = root;
        for token in tokens.iter().take(internal_levels) {
            let key = if token == WILDCARD || self.nodes[node].children.len() >= self.config.max_children
            {
                if self.nodes[node].children.contains_key(token.as_str()) {
                    token.clone()
                } else {
                    WILDCARD.to_string()
                }
            } else {
                token.clone()
            };
            let next = match self.nodes[node].children.get(&key) {
                Some(&n) => n,
                None => {
                    self.nodes.push(InternalNode::new());
                    let idx = self.nodes.len() - 1;
                    self.nodes[node].children.insert(key, idx);
                    idx
                }
            };
            node = next;
        }

        // best-matching leaf group
        let mut best: Option<(usize, f64)> = None;
        for &tid in &self.nodes[node].leaf_groups {
            let sim = Self::similarity(&self.templates[tid].tokens, &tokens);
            if best.map_or(true, |(_, b)| sim > b) {
                best = Some((tid, sim));
            }
        }

        match best {
            Some((tid, sim)) if sim >= self.config.similarity_threshold => {
                // merge: differing positions become wildcards, never the reverse
                let template = &mut self.templates[tid];
                for (slot, tok) in template.tokens.iter_mut().zip(&tokens) {
                    if slot != tok {
                        *slot = WILDCARD.to_string();
                    }
                }
                template.match_count += 1;
                tid
            }
            _ => {
                let tid = self.templates.len();
                self.templates.push(LogTemplate {
                    template_id: tid,
                    tokens,
                    match_count: 1,
                });
                self.nodes[node].leaf_groups.push(tid);
                tid
            }
        }
    }

    /// Template id for a message without mutating learned templates.
    /// Unmatched messages return `None`.
    pub fn lookup(&self, message: &str) -> Option<usize> {
        let mut scratch = self.clone();
        let before = self.templates.len();
        let tid = scratch.parse(message);
        if tid < before {
            Some(tid)
        } else {
            None
        }
    }

    /// Per-template match counts. Counts sum to the number of parsed messages.
    pub fn frequency_table(&self) -> Result<HashMap<usize, usize>> {
        if self.templates.is_empty() {
            return Err(Error::EmptyState);
        }
        Ok(self
            .templates
            .iter()
            .map(|t| (t.template_id, t.match_count))
            .collect())
    }

    /// Serializes the template store as `[{"id":..,"template":..,"count":..}]`.
    pub fn template_store_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.templates
                .iter()
                .map(|t| {
                    serde_json::json!({
                        "id": t.template_id,
                        "template": t.text(),
                        "count": t.match_count,
                    })
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ip_masking_unifies_connect_failures() {
        let mut state = DrainState::new(DrainConfig::default());
        let a = state.parse("connect to 10.0.0.1 failed");
        let b = state.parse("connect to 10.0.0.2 failed");
        assert_eq!(a, b);
        assert_eq!(state.templates()[a].text(), "connect to <*> failed");
    }

    #[test]
    fn identical_messages_share_a_template() {
        let mut state = DrainState::new(DrainConfig::default());
        let a = state.parse("upload business logs on 2021-08-15 failed");
        let b = state.parse("upload business logs on 2021-08-15 failed");
        assert_eq!(a, b);
        assert_eq!(state.templates()[a].match_count, 2);
    }

    #[test]
    fn frequency_table_counts_sum_to_parses() {
        let mut state = DrainState::new(DrainConfig::default());
        let messages = [
            "node 2 is online",
            "node 4 going offline",
            "node 7 is online",
            "cache hit ratio 0.95",
            "cache hit ratio 0.21",
        ];
        for m in &messages {
            state.parse(m);
        }
        let freq = state.frequency_table().unwrap();
        assert_eq!(freq.values().sum::<usize>(), messages.len());
    }

    #[test]
    fn frequency_table_on_empty_state_errors() {
        let state = DrainState::new(DrainConfig::default());
        assert!(matches!(state.frequency_table(), Err(Error::EmptyState)));
    }

    #[test]
    fn frequency_matches_recount_oracle() {
        let mut state = DrainState::new(DrainConfig::default());
        let mut recount: HashMap<usize, usize> = HashMap::new();
        for i in 0..200 {
            let msg = match i % 4 {
                0 => format!("request {} served in {} ms", i, i * 3),
                1 => format!("gc pause {} ms on heap {}", i, i * 2),
                2 => "listener started".to_string(),
                _ => format!("dropped connection from 10.0.0.{}", i % 255),
            };
            let tid = state.parse(&msg);
            *recount.entry(tid).or_default() += 1;
        }
        assert_eq!(state.frequency_table().unwrap(), recount);
    }

    #[test]
    fn determinism_over_fixed_sequence() {
        let corpus: Vec<String> = (0..100)
            .map(|i| format!("worker {} processed {} items", i % 7, i))
            .collect();
        let run = |msgs: &[String]| {
            let mut st = DrainState::new(DrainConfig::default());
            let ids: Vec<usize> = msgs.iter().map(|m| st.parse(m)).collect();
            (ids, st.templates().to_vec())
        };
        assert_eq!(run(&corpus), run(&corpus));
    }

    #[test]
    fn wildcards_never_revert_to_literals() {
        let mut state = DrainState::new(DrainConfig::default());
        state.parse("job alpha finished with status ok");
        let tid = state.parse("job beta finished with status ok");
        let wildcard_positions: Vec<usize> = state.templates()[tid]
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == WILDCARD)
            .map(|(i, _)| i)
            .collect();
        state.parse("job alpha finished with status ok");
        for i in wildcard_positions {
            assert_eq!(state.templates()[tid].tokens[i], WILDCARD);
        }
    }
}
