//! Offline and online phase orchestration: corpus -> dataset -> trained
//! bundle -> per-case diagnosis and evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::augment;
use crate::config::{substream, Config};
use crate::dataset::{build_graph, build_sample, group_alert_tokens, Dataset, DatasetManifest, FailureSample};
use crate::diagnose::{diagnose, DiagnosisReport, Extractors};
use crate::embed::{train_embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evalkit::{avg_at_k, hr_at_k, macro_prf1, micro_prf1, mrr_at_k, Prf1};
use crate::model::{train, Checkpoint, Model, TrainReport};
use crate::telemetry::{slice, FailureRecord, LogEntry, MetricSample, Span, TimeWindow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One raw corpus in memory.
#[derive(Debug, Clone)]
pub struct CorpusData {
    pub metrics: Vec<MetricSample>,
    pub spans: Vec<Span>,
    pub logs: Vec<LogEntry>,
    pub labels: Vec<FailureRecord>,
}

impl CorpusData {
    pub fn load(dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(CorpusData {
            metrics: crate::telemetry::load_metrics(dir.join("metrics.jsonl"))?,
            spans: crate::telemetry::load_spans(dir.join("traces.jsonl"))?,
            logs: crate::telemetry::load_logs(dir.join("logs.jsonl"))?,
            labels: crate::telemetry::load_labels(dir.join("labels.jsonl"))?,
        })
    }

    pub fn window(&self, w: TimeWindow) -> (Vec<MetricSample>, Vec<Span>, Vec<LogEntry>) {
        (
            slice(&self.metrics, w),
            slice(&self.spans, w),
            slice(&self.logs, w),
        )
    }
}

pub fn failure_window(label: &FailureRecord, window_ms: i64) -> TimeWindow {
    TimeWindow {
        start_ts: label.inject_ts,
        end_ts: label.inject_ts + window_ms,
    }
}

/// Time-ordered train/test split flags for the labels.
pub fn split_flags(labels: &[FailureRecord], train_fraction: f64) -> Vec<bool> {
    let n = labels.len();
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| labels[i].inject_ts);
    let mut flags = vec![false; n];
    for (pos, &i) in order.iter().enumerate() {
        flags[i] = pos < n_train;
    }
    flags
}

/// Builds the labeled dataset: per-failure alert extraction, skip-gram
/// embedding fitted on the training split's token sentences, and one sample
/// per failure.
pub fn build_dataset(
    corpus: &CorpusData,
    extractors: &Extractors,
    config: &Config,
) -> Result<Dataset> {
    if corpus.labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut type_names: Vec<String> = corpus
        .labels
        .iter()
        .map(|l| l.failure_type.clone())
        .collect();
    type_names.sort();
    type_names.dedup();
    let failure_types: BTreeMap<String, usize> = type_names
        .into_iter()
        .enumerate()
        .map(|(i, name)| (name, i))
        .collect();

    let train_split = split_flags(&corpus.labels, config.train_fraction);

    // first pass: alerts and graphs per failure
    let mut per_failure = Vec::with_capacity(corpus.labels.len());
    for label in &corpus.labels {
        let w = failure_window(label, config.window_ms);
        let (metrics, spans, logs) = corpus.window(w);
        let (alerts, _) = crate::diagnose::extract_alerts(extractors, &metrics, &spans, &logs);
        let graph = build_graph(&spans)?;
        per_failure.push((graph, alerts));
    }

    // embedding corpus: one sentence per (training failure, node), tokens in
    // metric/trace/log order
    let mut sentences: Vec<Vec<String>> = Vec::new();
    for (i, (graph, alerts)) in per_failure.iter().enumerate() {
        if !train_split[i] {
            continue;
        }
        for by_modality in group_alert_tokens(alerts, graph) {
            let sentence: Vec<String> = by_modality.into_values().flatten().collect();
            if !sentence.is_empty() {
                sentences.push(sentence);
            }
        }
    }
    let embedding_config = config.embedding_config();
    let table = train_embedding(&sentences, embedding_config)?;

    let mut samples = Vec::with_capacity(corpus.labels.len());
    for (label, (graph, alerts)) in corpus.labels.iter().zip(&per_failure) {
        samples.push(build_sample(
            graph.clone(),
            alerts,
            &table,
            &label.root_cause_instance,
            failure_types[&label.failure_type],
        )?);
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            failure_types,
            embedding: embedding_config,
            embedding_table: table,
            seed: config.seed,
        },
        samples,
        train_split,
    })
}

/// Everything the online phase needs, as written to the checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub checkpoint: Checkpoint,
    /// class index -> failure-type name
    pub failure_types: Vec<String>,
    pub embedding: EmbeddingTable,
}

impl Bundle {
    pub fn model(&self) -> Result<Model> {
        self.checkpoint.to_model()
    }
}

/// Trains on the dataset's training split (with augmentation when enabled)
/// and packages the result.
pub fn train_bundle(dataset: &Dataset, config: &Config) -> Result<(Bundle, TrainReport)> {
    if dataset.manifest.embedding_table.dimension != config.d {
        return Err(Error::DimensionMismatch {
            expected: config.d,
            got: dataset.manifest.embedding_table.dimension,
        });
    }
    let mut training: Vec<FailureSample> = dataset
        .samples
        .iter()
        .zip(&dataset.train_split)
        .filter(|(_, &t)| t)
        .map(|(s, _)| s.clone())
        .collect();
    if training.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.enable_augmentation {
        let aug = config.augment_config();
        let mut rng = ChaCha8Rng::seed_from_u64(aug.seed);
        let originals = training.clone();
        for sample in &originals {
            for _ in 0..aug.copies_per_sample {
                let out = augment(sample, aug.inactivation_probability, &mut rng);
                if out.sample.augmented {
                    training.push(out.sample);
                }
            }
        }
    }
    let model_config = config.model_config(dataset.class_count())?;
    let report = train(&training, &model_config, substream(config.seed, "train"))?;
    let bundle = Bundle {
        checkpoint: report.checkpoint.clone(),
        failure_types: dataset.failure_type_names(),
        embedding: dataset.manifest.embedding_table.clone(),
    };
    Ok((bundle, report))
}

/// One diagnosed test case with its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub inject_ts: i64,
    pub true_root: String,
    pub true_type: String,
    /// 1-based rank of the true root; number of nodes + 1 when absent
    pub rank: usize,
    pub predicted_type: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub cases: Vec<CaseResult>,
    pub hr1: f64,
    pub hr3: f64,
    pub hr5: f64,
    pub avg3: f64,
    pub avg5: f64,
    pub mrr5: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub mean_elapsed_ms: f64,
    pub max_elapsed_ms: f64,
}

/// Diagnoses one labeled case.
pub fn diagnose_case(
    bundle: &Bundle,
    model: &Model,
    extractors: &Extractors,
    corpus: &CorpusData,
    label: &FailureRecord,
    config: &Config,
) -> Result<(CaseResult, DiagnosisReport)> {
    let w = failure_window(label, config.window_ms);
    let (metrics, spans, logs) = corpus.window(w);
    let report = diagnose(
        model,
        &bundle.embedding,
        extractors,
        &metrics,
        &spans,
        &logs,
        &bundle.failure_types,
    )?;
    let rank = report
        .ranking
        .iter()
        .position(|r| r.instance == label.root_cause_instance)
        .map(|p| p + 1)
        .unwrap_or(report.ranking.len() + 1);
    Ok((
        CaseResult {
            inject_ts: label.inject_ts,
            true_root: label.root_cause_instance.clone(),
            true_type: label.failure_type.clone(),
            rank,
            predicted_type: report.predicted_type.clone(),
            elapsed_ms: report.elapsed_ms,
        },
        report,
    ))
}

/// Runs diagnosis over the given labels and aggregates metrics.
pub fn evaluate_bundle(
    bundle: &Bundle,
    extractors: &Extractors,
    corpus: &CorpusData,
    labels: &[FailureRecord],
    config: &Config,
) -> Result<EvalSummary> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = bundle.model()?;
    let mut cases = Vec::with_capacity(labels.len());
    for label in labels {
        let (case, _) = diagnose_case(bundle, &model, extractors, corpus, label, config)?;
        cases.push(case);
    }
    summarize(cases, &bundle.failure_types)
}

/// Aggregates already-collected case results into the metric summary.
pub fn summarize(cases: Vec<CaseResult>, type_names: &[String]) -> Result<EvalSummary> {
    let class_of = |name: &str| -> Result<usize> {
        type_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::Config(format!("unknown failure type {name}")))
    };
    let ranks: Vec<usize> = cases.iter().map(|c| c.rank).collect();
    let truth: Vec<usize> = cases
        .iter()
        .map(|c| class_of(&c.true_type))
        .collect::<Result<_>>()?;
    let pred: Vec<usize> = cases
        .iter()
        .map(|c| class_of(&c.predicted_type))
        .collect::<Result<_>>()?;
    let macro_m: Prf1 = macro_prf1(&pred, &truth, type_names.len())?;
    let micro_m = micro_prf1(&pred, &truth, type_names.len())?;
    let mean_ms = cases.iter().map(|c| c.elapsed_ms).sum::<f64>() / cases.len() as f64;
    let max_ms = cases.iter().map(|c| c.elapsed_ms).fold(0.0, f64::max);
    Ok(EvalSummary {
        hr1: hr_at_k(&ranks, 1),
        hr3: hr_at_k(&ranks, 3),
        hr5: hr_at_k(&ranks, 5),
        avg3: avg_at_k(&ranks, 3),
        avg5: avg_at_k(&ranks, 5),
        mrr5: mrr_at_k(&ranks, 5),
        macro_precision: macro_m.precision,
        macro_recall: macro_m.recall,
        macro_f1: macro_m.f1,
        micro_f1: micro_m.f1,
        mean_elapsed_ms: mean_ms,
        max_elapsed_ms: max_ms,
        cases,
    })
}

/// Test-split labels of a dataset, in corpus order.
pub fn test_labels(corpus: &CorpusData, dataset: &Dataset) -> Vec<FailureRecord> {
    corpus
        .labels
        .iter()
        .zip(&dataset.train_split)
        .filter(|(_, &t)| !t)
        .map(|(l, _)| l.clone())
        .collect()
}
