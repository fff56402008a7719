//! Unified alert extraction from windowed telemetry.
//!
//! Three extractors produce the same alert shape: a 3-sigma rule over metric
//! series, an isolation forest per trace invocation pair, and two rules over
//! mined log templates (ERROR-level keys plus the lowest-frequency half).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iforest::IsolationForest;
use crate::logparse::DrainState;
use crate::telemetry::{LogEntry, MetricSample, Span};

/// Floor applied to sigma so constant baselines still alert on any deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Metric,
    Trace,
    Log,
}

impl Modality {
    pub fn tag(&self) -> &'static str {
        match self {
            Modality::Metric => "M",
            Modality::Trace => "T",
            Modality::Log => "L",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Modality-specific alert fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlertPayload {
    Metric {
        metric: String,
        direction: Direction,
    },
    Trace {
        parent: String,
        operation: String,
        /// a status-code string or the literal "PD"
        abnormal: String,
    },
    Log {
        log_key: usize,
    },
}

/// One unified anomaly record, keyed by the reporting instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alert {
    #[serde(rename = "reporter")]
    pub reporter_id: String,
    pub modality: Modality,
    #[serde(flatten)]
    pub payload: AlertPayload,
}

impl Alert {
    /// Canonical token: modality tag plus payload fields joined by `|`,
    /// reporter excluded (it is already encoded by graph position).
    pub fn token(&self) -> String {
        match &self.payload {
            AlertPayload::Metric { metric, direction } => {
                let d = match direction {
                    Direction::Up => "up",
                    Direction::Down => "down",
                };
                format!("M|{metric}|{d}")
            }
            AlertPayload::Trace {
                parent,
                operation,
                abnormal,
            } => format!("T|{parent}|{operation}|{abnormal}"),
            AlertPayload::Log { log_key } => format!("L|{log_key}"),
        }
    }
}

/// Per-series mean/std fitted on a training window.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricBaseline {
    /// keyed by "instance\u{1}metric"
    pub series: BTreeMap<String, SeriesStats>,
    /// series skipped for having < 2 samples
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    pub sample_count: usize,
}

fn series_key(instance: &str, metric: &str) -> String {
    format!("{instance}\u{1}{metric}")
}

/// Fits per-(instance, metric) mean and population standard deviation.
pub fn fit_metric_baseline(training: &[MetricSample]) -> MetricBaseline {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in training {
        grouped
            .entry(series_key(&m.instance_id, &m.metric_name))
            .or_default()
            .push(m.value);
    }
    let mut baseline = MetricBaseline::default();
    for (key, values) in grouped {
        if values.len() < 2 {
            baseline.skipped.push(key);
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        baseline.series.insert(
            key,
            SeriesStats {
                mean,
                std: var.sqrt(),
                sample_count: values.len(),
            },
        );
    }
    baseline
}

/// 3-sigma detection; at most one alert per (instance, metric, direction).
/// Series without a baseline are skipped and reported back.
pub fn detect_metric_alerts(
    window: &[MetricSample],
    baseline: &MetricBaseline,
) -> (Vec<Alert>, Vec<String>) {
    let mut seen: BTreeSet<(String, String, Direction)> = BTreeSet::new();
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for m in window {
        let key = series_key(&m.instance_id, &m.metric_name);
        let Some(stats) = baseline.series.get(&key) else {
            unknown.insert(key);
            continue;
        };
        let sigma = stats.std.max(SIGMA_FLOOR);
        if m.value > stats.mean + 3.0 * sigma {
            seen.insert((m.instance_id.clone(), m.metric_name.clone(), Direction::Up));
        } else if m.value < stats.mean - 3.0 * sigma {
            seen.insert((m.instance_id.clone(), m.metric_name.clone(), Direction::Down));
        }
    }
    let alerts = seen
        .into_iter()
        .map(|(instance, metric, direction)| Alert {
            reporter_id: instance,
            modality: Modality::Metric,
            payload: AlertPayload::Metric { metric, direction },
        })
        .collect();
    (alerts, unknown.into_iter().collect())
}

/// One resolved invocation: caller instance -> callee instance over an operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Invocation {
    pub caller_instance: String,
    pub callee_instance: String,
    pub operation: String,
    pub duration_ms: i64,
    pub status: String,
}

/// Resolves parent links within each trace into invocation records.
pub fn resolve_invocations(spans: &[Span]) -> Vec<Invocation> {
    let mut by_trace: HashMap<&str, HashMap<&str, &Span>> = HashMap::new();
    for s in spans {
        by_trace
            .entry(s.trace_id.as_str())
            .or_default()
            .insert(s.span_id.as_str(), s);
    }
    let mut out = Vec::new();
    for s in spans {
        let Some(parent_id) = &s.parent_span_id else {
            continue;
        };
        let Some(parent) = by_trace[s.trace_id.as_str()].get(parent_id.as_str()) else {
            // broken trace: surfaced unchanged, no invocation derivable
            continue;
        };
        out.push(Invocation {
            caller_instance: parent.instance_id.clone(),
            callee_instance: s.instance_id.clone(),
            operation: s.operation.clone(),
            duration_ms: s.duration_ms,
            status: s.status.clone(),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceDetectorConfig {
    pub tree_count: usize,
    pub subsample_size: usize,
    pub score_threshold: f64,
    pub success_statuses: BTreeSet<String>,
}

impl Default for TraceDetectorConfig {
    fn default() -> Self {
        TraceDetectorConfig {
            tree_count: 100,
            subsample_size: 256,
            score_threshold: 0.6,
            success_statuses: ["200", "0", "OK"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One isolation forest per invocation pair, plus a global 3-sigma duration
/// fallback for pairs unseen at training time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IForestModel {
    pub config: TraceDetectorConfig,
    /// keyed by "caller\u{1}callee\u{1}operation"
    pub forests: BTreeMap<String, IsolationForest>,
    pub global_duration_mean: f64,
    pub global_duration_std: f64,
}

fn pair_key(inv: &Invocation) -> String {
    format!(
        "{}\u{1}{}\u{1}{}",
        inv.caller_instance, inv.callee_instance, inv.operation
    )
}

fn invocation_features(inv: &Invocation, cfg: &TraceDetectorConfig) -> Vec<f64> {
    let status_ok = if cfg.success_statuses.contains(&inv.status) {
        1.0
    } else {
        0.0
    };
    vec![inv.duration_ms as f64, status_ok]
}

/// Fits one forest per invocation-pair group found in the training spans.
pub fn fit_trace_detector<R: Rng>(
    training_spans: &[Span],
    cfg: TraceDetectorConfig,
    rng: &mut R,
) -> Result<IForestModel> {
    let invocations = resolve_invocations(training_spans);
    if invocations.is_empty() {
        return Err(Error::NoInvocationPairs);
    }
    let mut grouped: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut durations = Vec::new();
    for inv in &invocations {
        grouped
            .entry(pair_key(inv))
            .or_default()
            .push(invocation_features(inv, &cfg));
        durations.push(inv.duration_ms as f64);
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;

    let forests = grouped
        .into_iter()
        .map(|(key, points)| {
            let forest = IsolationForest::fit(&points, cfg.tree_count, cfg.subsample_size, rng);
            (key, forest)
        })
        .collect();
    Ok(IForestModel {
        config: cfg,
        forests,
        global_duration_mean: mean,
        global_duration_std: var.sqrt(),
    })
}

/// Detects trace alerts: abnormal status codes directly, performance
/// degradation ("PD") via the per-pair forest score, a global 3-sigma fallback
/// for unknown pairs. Deduplicated per (callee, caller, operation, abnormal).
/// Returns the alerts plus the pair keys that used the fallback.
pub fn detect_trace_alerts(
    window_spans: &[Span],
    model: &IForestModel,
) -> (Vec<Alert>, Vec<String>) {
    let mut seen: BTreeSet<(String, String, String, String)> = BTreeSet::new();
    let mut fallbacks: BTreeSet<String> = BTreeSet::new();
    for inv in resolve_invocations(window_spans) {
        let abnormal = if !model.config.success_statuses.contains(&inv.status) {
            Some(inv.status.clone())
        } else {
            match model.forests.get(&pair_key(&inv)) {
                Some(forest) => {
                    let score = forest.score(&invocation_features(&inv, &model.config));
                    (score > model.config.score_threshold).then(|| "PD".to_string())
                }
                None => {
                    fallbacks.insert(pair_key(&inv));
                    let sigma = model.global_duration_std.max(SIGMA_FLOOR);
                    let d = inv.duration_ms as f64;
                    (d > model.global_duration_mean + 3.0 * sigma
                        || d < model.global_duration_mean - 3.0 * sigma)
                        .then(|| "PD".to_string())
                }
            }
        };
        if let Some(abnormal) = abnormal {
            seen.insert((
                inv.callee_instance.clone(),
                inv.caller_instance.clone(),
                inv.operation.clone(),
                abnormal,
            ));
        }
    }
    let alerts = seen
        .into_iter()
        .map(|(callee, caller, operation, abnormal)| Alert {
            reporter_id: callee,
            modality: Modality::Trace,
            payload: AlertPayload::Trace {
                parent: caller,
                operation,
                abnormal,
            },
        })
        .collect();
    (alerts, fallbacks.into_iter().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogAlertConfig {
    pub error_keywords: BTreeSet<String>,
    /// fraction of lowest-frequency templates promoted to alerts (Rule 2)
    pub low_freq_fraction: f64,
}

impl Default for LogAlertConfig {
    fn default() -> Self {
        LogAlertConfig {
            error_keywords: [
                "ERROR", "Error", "error", "Exception", "exception", "fail", "failed", "FATAL",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            low_freq_fraction: 0.5,
        }
    }
}

/// The set of template ids that generate alerts at diagnosis time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogAlertSet {
    pub alert_keys: BTreeSet<usize>,
    pub config: LogAlertConfig,
}

/// Rule 1: templates whose source level was ERROR or whose text matches an
/// error keyword. Rule 2: the `ceil(k * |templates|)` lowest-count templates,
/// ties broken by template id ascending.
pub fn select_log_alert_keys(
    freq: &HashMap<usize, usize>,
    state: &DrainState,
    error_level_keys: &HashSet<usize>,
    config: LogAlertConfig,
) -> LogAlertSet {
    let mut alert_keys: BTreeSet<usize> = BTreeSet::new();
    for t in state.templates() {
        let text = t.text();
        if error_level_keys.contains(&t.template_id)
            || config.error_keywords.iter().any(|kw| text.contains(kw.as_str()))
        {
            alert_keys.insert(t.template_id);
        }
    }
    let total = state.templates().len();
    let take = ((config.low_freq_fraction * total as f64).ceil() as usize).min(total);
    let mut by_count: Vec<(usize, usize)> = state
        .templates()
        .iter()
        .map(|t| (t.template_id, *freq.get(&t.template_id).unwrap_or(&0)))
        .collect();
    by_count.sort_by_key(|&(id, count)| (count, id));
    alert_keys.extend(by_count.into_iter().take(take).map(|(id, _)| id));
    LogAlertSet { alert_keys, config }
}

/// One alert per distinct (instance, alert log key) in the window.
/// Unseen messages still create templates in a scratch copy of the tree, but
/// only pre-registered alert keys fire.
pub fn detect_log_alerts(
    window_logs: &[LogEntry],
    state: &DrainState,
    alert_set: &LogAlertSet,
) -> Vec<Alert> {
    let mut scratch = state.clone();
    let mut seen: BTreeSet<(String, usize)> = BTreeSet::new();
    for entry in window_logs {
        let key = scratch.parse(&entry.message);
        if alert_set.alert_keys.contains(&key) {
            seen.insert((entry.instance_id.clone(), key));
        }
    }
    seen.into_iter()
        .map(|(instance, log_key)| Alert {
            reporter_id: instance,
            modality: Modality::Log,
            payload: AlertPayload::Log { log_key },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logparse::DrainConfig;
    use crate::telemetry::LogLevel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn metric(instance: &str, name: &str, ts: i64, value: f64) -> MetricSample {
        MetricSample {
            instance_id: instance.into(),
            metric_name: name.into(),
            ts,
            value,
        }
    }

    #[test]
    fn two_point_baseline_arithmetic() {
        let baseline = fit_metric_baseline(&[
            metric("a", "cpu", 0, 2.0),
            metric("a", "cpu", 1, 4.0),
        ]);
        let stats = baseline.series.values().next().unwrap();
        assert_eq!(stats.mean, 3.0);
        assert_eq!(stats.std, 1.0);
    }

    #[test]
    fn constant_series_has_zero_std() {
        let baseline = fit_metric_baseline(&[
            metric("a", "cpu", 0, 5.0),
            metric("a", "cpu", 1, 5.0),
            metric("a", "cpu", 2, 5.0),
        ]);
        let stats = baseline.series.values().next().unwrap();
        assert_eq!(stats.mean, 5.0);
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn short_series_is_skipped_and_reported() {
        let baseline = fit_metric_baseline(&[metric("a", "cpu", 0, 1.0)]);
        assert!(baseline.series.is_empty());
        assert_eq!(baseline.skipped.len(), 1);
    }

    #[test]
    fn baseline_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..500).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let samples: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| metric("a", "cpu", i as i64, v))
            .collect();
        let baseline = fit_metric_baseline(&samples);
        let stats = baseline.series.values().next().unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / values.len() as f64)
            .sqrt();
        assert!((stats.mean - mean).abs() < 1e-9);
        assert!((stats.std - std).abs() < 1e-9);
    }

    fn fixed_baseline(mean: f64, std: f64) -> MetricBaseline {
        let mut b = MetricBaseline::default();
        b.series.insert(
            series_key("a", "cpu"),
            SeriesStats {
                mean,
                std,
                sample_count: 10,
            },
        );
        b
    }

    #[test]
    fn value_beyond_three_sigma_alerts_up() {
        let (alerts, _) =
            detect_metric_alerts(&[metric("a", "cpu", 0, 14.0)], &fixed_baseline(10.0, 1.0));
        assert_eq!(alerts.len(), 1);
        assert!(matches!(
            &alerts[0].payload,
            AlertPayload::Metric { direction: Direction::Up, .. }
        ));
    }

    #[test]
    fn values_within_band_stay_quiet() {
        let window: Vec<_> = (0..10).map(|i| metric("a", "cpu", i, 10.5)).collect();
        let (alerts, _) = detect_metric_alerts(&window, &fixed_baseline(10.0, 1.0));
        assert!(alerts.is_empty());
    }

    #[test]
    fn both_directions_dedupe_to_one_each() {
        let window = vec![
            metric("a", "cpu", 0, 14.0),
            metric("a", "cpu", 1, 15.0),
            metric("a", "cpu", 2, 5.0),
            metric("a", "cpu", 3, 4.0),
        ];
        let (alerts, _) = detect_metric_alerts(&window, &fixed_baseline(10.0, 1.0));
        let dirs: BTreeSet<_> = alerts
            .iter()
            .map(|a| match &a.payload {
                AlertPayload::Metric { direction, .. } => *direction,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(alerts.len(), 2);
        assert_eq!(dirs.len(), 2);
    }

    fn span(trace: &str, id: &str, parent: Option<&str>, instance: &str, op: &str, dur: i64, status: &str) -> Span {
        Span {
            trace_id: trace.into(),
            span_id: id.into(),
            parent_span_id: parent.map(|s| s.into()),
            service: instance.split('-').next().unwrap().into(),
            instance_id: instance.into(),
            operation: op.into(),
            start_ts: 0,
            duration_ms: dur,
            status: status.into(),
        }
    }

    fn training_spans(rng: &mut ChaCha8Rng) -> Vec<Span> {
        // log-normal durations: service latency has a long tail, and the
        // forest needs that tail to isolate genuinely extreme points
        let dist = rand_distr::LogNormal::new(100f64.ln(), 0.3).unwrap();
        let mut spans = Vec::new();
        for i in 0..200 {
            let t = format!("t{i}");
            spans.push(span(&t, "root", None, "frontend-0", "Root", 120, "200"));
            let dur = dist.sample(rng) as i64;
            spans.push(span(&t, "child", Some("root"), "product-1", "GetProduct", dur, "200"));
        }
        spans
    }

    #[test]
    fn abnormal_status_emits_status_alert() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model =
            fit_trace_detector(&training_spans(&mut rng), TraceDetectorConfig::default(), &mut rng)
                .unwrap();
        let window = vec![
            span("w1", "root", None, "frontend-0", "Root", 120, "200"),
            span("w1", "child", Some("root"), "product-1", "GetProduct", 100, "500"),
        ];
        let (alerts, _) = detect_trace_alerts(&window, &model);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].reporter_id, "product-1");
        assert_eq!(
            alerts[0].payload,
            AlertPayload::Trace {
                parent: "frontend-0".into(),
                operation: "GetProduct".into(),
                abnormal: "500".into(),
            }
        );
    }

    #[test]
    fn median_duration_is_quiet() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model =
            fit_trace_detector(&training_spans(&mut rng), TraceDetectorConfig::default(), &mut rng)
                .unwrap();
        let window = vec![
            span("w1", "root", None, "frontend-0", "Root", 120, "200"),
            span("w1", "child", Some("root"), "product-1", "GetProduct", 100, "200"),
        ];
        let (alerts, _) = detect_trace_alerts(&window, &model);
        assert!(alerts.is_empty(), "unexpected alerts: {alerts:?}");
    }

    #[test]
    fn extreme_latency_emits_pd_across_seeded_refits() {
        let mut hits = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = fit_trace_detector(
                &training_spans(&mut rng),
                TraceDetectorConfig::default(),
                &mut rng,
            )
            .unwrap();
            let window = vec![
                span("w1", "root", None, "frontend-0", "Root", 10_100, "200"),
                span("w1", "child", Some("root"), "product-1", "GetProduct", 10_000, "200"),
            ];
            let (alerts, _) = detect_trace_alerts(&window, &model);
            if alerts.iter().any(|a| {
                matches!(&a.payload, AlertPayload::Trace { abnormal, .. } if abnormal == "PD")
            }) {
                hits += 1;
            }
        }
        assert!(hits >= 48, "PD emitted in only {hits}/50 refits");
    }

    #[test]
    fn no_parented_spans_is_an_error() {
        let spans = vec![span("t", "root", None, "a-0", "Op", 10, "200")];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            fit_trace_detector(&spans, TraceDetectorConfig::default(), &mut rng),
            Err(Error::NoInvocationPairs)
        ));
    }

    fn drain_with(counts: &[(&str, usize)]) -> (DrainState, HashMap<usize, usize>, Vec<usize>) {
        let mut state = DrainState::new(DrainConfig::default());
        let mut order = Vec::new();
        for (msg, count) in counts {
            let mut tid = 0;
            for _ in 0..*count {
                tid = state.parse(msg);
            }
            order.push(tid);
        }
        let freq = state.frequency_table().unwrap();
        (state, freq, order)
    }

    #[test]
    fn rule2_selects_bottom_half_by_count() {
        let (state, freq, ids) = drain_with(&[
            ("request served quickly", 100),
            ("cache warmed for shard", 50),
            ("gc pause observed now", 2),
            ("socket closed by peer", 1),
        ]);
        let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig {
            error_keywords: BTreeSet::new(),
            low_freq_fraction: 0.5,
        });
        let expect: BTreeSet<usize> = [ids[2], ids[3]].into_iter().collect();
        assert_eq!(set.alert_keys, expect);
    }

    #[test]
    fn rule1_includes_error_template_regardless_of_frequency() {
        let (state, freq, ids) = drain_with(&[
            ("connection failed to upstream", 1_000_000),
            ("request served quickly", 3),
            ("cache warmed for shard", 2),
            ("gc pause observed now", 1),
        ]);
        let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig::default());
        assert!(set.alert_keys.contains(&ids[0]));
    }

    #[test]
    fn selection_equals_brute_force_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n_templates = rng.gen_range(3..15);
            let corpus: Vec<(String, usize)> = (0..n_templates)
                .map(|i| {
                    let is_err = rng.gen_bool(0.2);
                    let msg = if is_err {
                        format!("request kind{i} failed badly")
                    } else {
                        format!("request kind{i} served quickly")
                    };
                    (msg, rng.gen_range(1..100))
                })
                .collect();
            let refs: Vec<(&str, usize)> =
                corpus.iter().map(|(m, c)| (m.as_str(), *c)).collect();
            let (state, freq, _) = drain_with(&refs);
            let cfg = LogAlertConfig::default();
            let set = select_log_alert_keys(&freq, &state, &HashSet::new(), cfg.clone());

            // brute force: Rule 1 keyword scan union Rule 2 bottom-ceil(k*n)
            let mut expect: BTreeSet<usize> = state
                .templates()
                .iter()
                .filter(|t| cfg.error_keywords.iter().any(|kw| t.text().contains(kw.as_str())))
                .map(|t| t.template_id)
                .collect();
            let mut by_count: Vec<_> = state
                .templates()
                .iter()
                .map(|t| (freq[&t.template_id], t.template_id))
                .collect();
            by_count.sort();
            let take =
                (cfg.low_freq_fraction * state.templates().len() as f64).ceil() as usize;
            expect.extend(by_count.iter().take(take).map(|&(_, id)| id));
            assert_eq!(set.alert_keys, expect);
        }
    }

    #[test]
    fn rule2_size_exact_without_error_templates() {
        for n in 1..12usize {
            let corpus: Vec<(String, usize)> = (0..n)
                .map(|i| (format!("event kind{i} recorded normally"), i + 1))
                .collect();
            let refs: Vec<(&str, usize)> = corpus.iter().map(|(m, c)| (m.as_str(), *c)).collect();
            let (state, freq, _) = drain_with(&refs);
            let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig {
                error_keywords: BTreeSet::new(),
                low_freq_fraction: 0.5,
            });
            assert_eq!(set.alert_keys.len(), (0.5 * n as f64).ceil() as usize);
        }
    }

    #[test]
    fn repeated_log_key_dedupes_to_one_alert() {
        let (state, freq, ids) = drain_with(&[
            ("tcp timeout talking to backend", 1),
            ("request served quickly", 50),
        ]);
        let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig {
            error_keywords: BTreeSet::new(),
            low_freq_fraction: 0.5,
        });
        assert!(set.alert_keys.contains(&ids[0]));
        let window: Vec<LogEntry> = (0..7)
            .map(|i| LogEntry {
                instance_id: "product-1".into(),
                ts: i,
                level: LogLevel::Error,
                message: "tcp timeout talking to backend".into(),
            })
            .collect();
        let alerts = detect_log_alerts(&window, &state, &set);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].reporter_id, "product-1");
        assert_eq!(alerts[0].payload, AlertPayload::Log { log_key: ids[0] });
    }

    #[test]
    fn non_alert_keys_emit_nothing() {
        let (state, freq, ids) = drain_with(&[
            ("rare event observed here", 1),
            ("request served quickly", 50),
        ]);
        let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig {
            error_keywords: BTreeSet::new(),
            low_freq_fraction: 0.5,
        });
        assert!(!set.alert_keys.contains(&ids[1]));
        let window = vec![LogEntry {
            instance_id: "a-0".into(),
            ts: 0,
            level: LogLevel::Info,
            message: "request served quickly".into(),
        }];
        assert!(detect_log_alerts(&window, &state, &set).is_empty());
    }

    #[test]
    fn log_detection_matches_linear_scan() {
        let templates = [
            "rare event observed here",
            "request served quickly",
            "cache refreshed for tenant",
            "socket closed by peer",
        ];
        let (state, freq, ids) = drain_with(&[
            (templates[0], 1),
            (templates[1], 90),
            (templates[2], 40),
            (templates[3], 2),
        ]);
        let set = select_log_alert_keys(&freq, &state, &HashSet::new(), LogAlertConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let window: Vec<LogEntry> = (0..200)
            .map(|i| LogEntry {
                instance_id: format!("svc-{}", rng.gen_range(0..3)),
                ts: i,
                level: LogLevel::Info,
                message: templates[rng.gen_range(0..templates.len())].into(),
            })
            .collect();
        let got: BTreeSet<_> = detect_log_alerts(&window, &state, &set).into_iter().collect();
        let mut expect = BTreeSet::new();
        for entry in &window {
            for (t_idx, t_msg) in templates.iter().enumerate() {
                if entry.message == *t_msg && set.alert_keys.contains(&ids[t_idx]) {
                    expect.insert(Alert {
                        reporter_id: entry.instance_id.clone(),
                        modality: Modality::Log,
                        payload: AlertPayload::Log { log_key: ids[t_idx] },
                    });
                }
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn gaussian_series_false_alert_rate_is_bounded() {
        // acceptance-style check kept here at smaller scale: training window
        // re-detected against its own baseline
        let mut total_points = 0usize;
        let mut alert_series = 0usize;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<_> = (0..200)
                .map(|i| {
                    let v: f64 = rng.sample(rand_distr::StandardNormal);
                    metric("a", "cpu", i, v)
                })
                .collect();
            let baseline = fit_metric_baseline(&samples);
            let (alerts, _) = detect_metric_alerts(&samples, &baseline);
            total_points += samples.len();
            alert_series += alerts.len();
        }
        // 3-sigma two-tail expectation ~0.0027 per point, x4 slack; alerts are
        // deduplicated per direction so this bound is generous
        let bound = 4.0 * 0.0027 * total_points as f64;
        assert!(
            (alert_series as f64) < bound,
            "{alert_series} alerting series exceeds bound {bound}"
        );
    }

    #[test]
    fn alert_jsonl_shape_matches_interface() {
        let alert = Alert {
            reporter_id: "product-1".into(),
            modality: Modality::Trace,
            payload: AlertPayload::Trace {
                parent: "frontend-0".into(),
                operation: "GetProduct".into(),
                abnormal: "500".into(),
            },
        };
        let json = serde_json::to_value(&alert).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "reporter": "product-1",
                "modality": "trace",
                "parent": "frontend-0",
                "operation": "GetProduct",
                "abnormal": "500"
            })
        );
        assert_eq!(alert.token(), "T|frontend-0|GetProduct|500");
    }
}
