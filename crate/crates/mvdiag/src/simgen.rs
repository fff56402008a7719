//! Synthetic microservice telemetry with fault injection.
//!
//! Traces are call trees over a service DAG with lognormal latencies, metrics
//! are Gaussian series at a fixed cadence, and logs are drawn from a small
//! template inventory. Each fault perturbs its signature signals at the
//! target instance; latency faults propagate upward automatically because a
//! caller's span duration includes the durations of its downstream calls.
//! Propagation is scripted, not simulated: acceptance needs controllable
//! ground truth, not fidelity.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{
    save_jsonl, FailureRecord, LogEntry, LogLevel, MetricSample, Span, TimeWindow,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
    pub operation: String,
}

/// Service topology: a DAG of calls rooted at a designated frontend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// service name -> instance count
    pub services: BTreeMap<String, usize>,
    pub call_edges: Vec<CallEdge>,
    pub frontend: String,
}

impl Topology {
    /// 5 services x 2 instances in a 3-level DAG.
    pub fn desk_default() -> Self {
        let services = [
            ("frontend", 2),
            ("cart", 2),
            ("product", 2),
            ("payment", 2),
            ("inventory", 2),
        ]
        .iter()
        .map(|(s, n)| (s.to_string(), *n))
        .collect();
        let edge = |caller: &str, callee: &str, op: &str| CallEdge {
            caller: caller.into(),
            callee: callee.into(),
            operation: op.into(),
        };
        Topology {
            services,
            call_edges: vec![
                edge("frontend", "cart", "GetCart"),
                edge("frontend", "product", "GetProduct"),
                edge("cart", "payment", "Charge"),
                edge("product", "inventory", "CheckStock"),
            ],
            frontend: "frontend".into(),
        }
    }

    /// All instance ids, service-major: "frontend-0", "frontend-1", ...
    pub fn instances(&self) -> Vec<String> {
        self.services
            .iter()
            .flat_map(|(s, &n)| (0..n).map(move |i| format!("{s}-{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.services.contains_key(&self.frontend) {
            return Err(Error::Config(format!(
                "frontend service {} not in topology",
                self.frontend
            )));
        }
        for e in &self.call_edges {
            for s in [&e.caller, &e.callee] {
                if !self.services.contains_key(s) {
                    return Err(Error::Config(format!("edge references unknown service {s}")));
                }
            }
        }
        // acyclicity and reachability by DFS from the frontend
        let mut reached = std::collections::BTreeSet::new();
        let mut stack = vec![self.frontend.clone()];
        let mut path = std::collections::BTreeSet::new();
        fn dfs(
            topo: &Topology,
            service: &str,
            reached: &mut std::collections::BTreeSet<String>,
            path: &mut std::collections::BTreeSet<String>,
        ) -> Result<()> {
            if !path.insert(service.to_string()) {
                return Err(Error::Config(format!("call cycle through {service}")));
            }
            reached.insert(service.to_string());
            for e in topo.call_edges.iter().filter(|e| e.caller == service) {
                dfs(topo, &e.callee, reached, path)?;
            }
            path.remove(service);
            Ok(())
        }
        let _ = &mut stack;
        dfs(self, &self.frontend.clone(), &mut reached, &mut path)?;
        for s in self.services.keys() {
            if !reached.contains(s) {
                return Err(Error::Config(format!("service {s} unreachable from frontend")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultType {
    CpuHog,
    MemStress,
    NetDelay,
    PacketLoss,
    PacketCorruption,
    ProcessExit,
}

impl FaultType {
    pub const ALL: [FaultType; 6] = [
        FaultType::CpuHog,
        FaultType::MemStress,
        FaultType::NetDelay,
        FaultType::PacketLoss,
        FaultType::PacketCorruption,
        FaultType::ProcessExit,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FaultType::CpuHog => "cpu-hog",
            FaultType::MemStress => "mem-stress",
            FaultType::NetDelay => "net-delay",
            FaultType::PacketLoss => "packet-loss",
            FaultType::PacketCorruption => "packet-corruption",
            FaultType::ProcessExit => "process-exit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_type: FaultType,
    pub target_instance: String,
    pub start_ts: i64,
    pub duration_ms: i64,
    /// in (0, 1]; scales every perturbation
    pub severity: f64,
}

impl FaultSpec {
    pub fn window(&self) -> TimeWindow {
        TimeWindow {
            start_ts: self.start_ts,
            end_ts: self.start_ts + self.duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub workload_rps: f64,
    pub duration_ms: i64,
    pub metric_cadence_ms: i64,
    /// one operational log line per instance per interval
    pub log_interval_ms: i64,
    /// one fault log line per interval while a log-emitting fault is active
    pub fault_log_interval_ms: i64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            workload_rps: 2.0,
            duration_ms: 600_000,
            metric_cadence_ms: 15_000,
            log_interval_ms: 2_000,
            fault_log_interval_ms: 1_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub topology: Topology,
    pub config: GeneratorConfig,
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub metrics: Vec<MetricSample>,
    pub spans: Vec<Span>,
    pub logs: Vec<LogEntry>,
    pub labels: Vec<FailureRecord>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_jsonl(dir.join("metrics.jsonl"), &self.metrics)?;
        save_jsonl(dir.join("traces.jsonl"), &self.spans)?;
        save_jsonl(dir.join("logs.jsonl"), &self.logs)?;
        save_jsonl(dir.join("labels.jsonl"), &self.labels)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest)?;
        Ok(())
    }
}

pub const NORMAL_LOG_TEMPLATE_COUNT: usize = 10;

/// One operational log line from the 10-template inventory.
pub fn render_normal_log<R: Rng>(idx: usize, rng: &mut R) -> String {
    match idx % NORMAL_LOG_TEMPLATE_COUNT {
        0 => format!(
            "request {} handled in {} ms",
            rng.gen_range(1000..99999),
            rng.gen_range(5..400)
        ),
        1 => format!("cache hit ratio {:.2}", rng.gen_range(0.5..1.0)),
        2 => format!(
            "opened connection to 10.0.{}.{}:8080",
            rng.gen_range(0..255),
            rng.gen_range(1..255)
        ),
        3 => format!("heartbeat ok seq {}", rng.gen_range(1..1_000_000)),
        4 => format!("queue depth {}", rng.gen_range(0..50)),
        5 => format!("compacted {} segments", rng.gen_range(1..20)),
        6 => format!("served asset {}", rng.gen_range(100..9999)),
        7 => format!(
            "session {:08x}-{:04x}-{:04x}-{:04x}-{:012x} refreshed",
            rng.gen::<u32>(),
            rng.gen::<u16>(),
            rng.gen::<u16>(),
            rng.gen::<u16>(),
            rng.gen::<u64>() & 0xffff_ffff_ffff
        ),
        8 => format!(
            "worker {} polled {} jobs",
            rng.gen_range(1..16),
            rng.gen_range(0..100)
        ),
        _ => format!("flushed {} records to disk", rng.gen_range(1..5000)),
    }
}

/// The ERROR line a fault emits at its target, if any.
pub fn fault_log_message<R: Rng>(fault: FaultType, rng: &mut R) -> Option<String> {
    match fault {
        FaultType::MemStress => Some(format!(
            "gc pause exceeded {} ms",
            rng.gen_range(500..5000)
        )),
        FaultType::PacketLoss => Some(format!(
            "tcp i/o timeout after {} ms",
            rng.gen_range(1000..30000)
        )),
        FaultType::PacketCorruption => Some(format!(
            "checksum mismatch on segment {}",
            rng.gen_range(1..100_000)
        )),
        FaultType::ProcessExit => Some(format!(
            "process exited unexpectedly with code {}",
            rng.gen_range(1..140)
        )),
        FaultType::CpuHog | FaultType::NetDelay => None,
    }
}

struct MetricSpec {
    name: &'static str,
    mean: f64,
    std: f64,
}

const METRIC_SPECS: [MetricSpec; 6] = [
    MetricSpec { name: "cpu", mean: 40.0, std: 3.0 },
    MetricSpec { name: "memory", mean: 55.0, std: 2.0 },
    MetricSpec { name: "network_in", mean: 100.0, std: 8.0 },
    MetricSpec { name: "network_out", mean: 80.0, std: 6.0 },
    MetricSpec { name: "request_count", mean: 30.0, std: 2.5 },
    MetricSpec { name: "error_count", mean: 2.0, std: 0.4 },
];

fn metric_delta(fault: FaultType, metric: &str, severity: f64) -> f64 {
    match (fault, metric) {
        (FaultType::CpuHog, "cpu") => 30.0 + 30.0 * severity,
        (FaultType::MemStress, "memory") => 20.0 + 20.0 * severity,
        (FaultType::PacketLoss, "network_in") => -(40.0 + 30.0 * severity),
        (FaultType::PacketLoss, "network_out") => -(30.0 + 25.0 * severity),
        (FaultType::PacketCorruption, "network_in") => -(35.0 + 25.0 * severity),
        (FaultType::ProcessExit, "error_count") => 15.0 + 10.0 * severity,
        _ => 0.0,
    }
}

fn latency_multiplier(fault: FaultType, severity: f64) -> f64 {
    match fault {
        FaultType::CpuHog => 1.0 + 3.0 * severity,
        FaultType::NetDelay => 1.0 + 8.0 * severity,
        _ => 1.0,
    }
}

fn base_latency_ms(operation: &str) -> f64 {
    match operation {
        "HandleRequest" => 20.0,
        "GetCart" => 15.0,
        "GetProduct" => 18.0,
        "Charge" => 25.0,
        "CheckStock" => 12.0,
        _ => 16.0,
    }
}

struct ActiveFaults<'a> {
    faults: &'a [FaultSpec],
}

impl ActiveFaults<'_> {
    fn at<'s>(&'s self, instance: &'s str, ts: i64) -> impl Iterator<Item = &'s FaultSpec> {
        self.faults.iter().filter(move |f| {
            f.target_instance == instance && f.window().contains(ts)
        })
    }
}

/// Generates one labeled corpus. Deterministic for a fixed config seed.
pub fn generate(
    topology: &Topology,
    config: &GeneratorConfig,
    faults: &[FaultSpec],
) -> Result<Corpus> {
    topology.validate()?;
    let instances = topology.instances();
    for f in faults {
        if !instances.contains(&f.target_instance) {
            return Err(Error::FaultTargetUnknown(f.target_instance.clone()));
        }
        if f.start_ts < 0 || f.start_ts + f.duration_ms > config.duration_ms {
            return Err(Error::Config(format!(
                "fault window [{}, {}) outside corpus duration {}",
                f.start_ts,
                f.start_ts + f.duration_ms,
                config.duration_ms
            )));
        }
        if !(f.severity > 0.0 && f.severity <= 1.0) {
            return Err(Error::Config(format!(
                "severity {} outside (0, 1]",
                f.severity
            )));
        }
    }
    let active = ActiveFaults { faults };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // metrics
    let mut metrics = Vec::new();
    let mut ts = 0;
    while ts < config.duration_ms {
        for instance in &instances {
            for spec in &METRIC_SPECS {
                let noise = Normal::new(spec.mean, spec.std).unwrap();
                let mut value: f64 = noise.sample(&mut rng);
                for f in active.at(instance, ts) {
                    value += metric_delta(f.fault_type, spec.name, f.severity);
                }
                metrics.push(MetricSample {
                    instance_id: instance.clone(),
                    metric_name: spec.name.to_string(),
                    ts,
                    value: value.max(0.0),
                });
            }
        }
        ts += config.metric_cadence_ms;
    }

    // traces
    let mut spans = Vec::new();
    let interval = (1000.0 / config.workload_rps).round() as i64;
    let mut request_ts = 0;
    let mut request_id = 0usize;
    while request_ts < config.duration_ms {
        let trace_id = format!("r{request_id}");
        let mut span_counter = 0usize;
        serve(
            topology,
            &active,
            &mut rng,
            &mut spans,
            &trace_id,
            &mut span_counter,
            None,
            &topology.frontend,
            "HandleRequest",
            request_ts,
        );
        request_id += 1;
        request_ts += interval;
    }

    // logs
    let mut logs = Vec::new();
    for instance in &instances {
        let mut log_ts = 0;
        while log_ts < config.duration_ms {
            let idx = rng.gen_range(0..NORMAL_LOG_TEMPLATE_COUNT);
            logs.push(LogEntry {
                instance_id: instance.clone(),
                ts: log_ts,
                level: LogLevel::Info,
                message: render_normal_log(idx, &mut rng),
            });
            log_ts += config.log_interval_ms;
        }
    }
    for f in faults {
        let mut log_ts = f.start_ts;
        while log_ts < f.start_ts + f.duration_ms {
            if let Some(message) = fault_log_message(f.fault_type, &mut rng) {
                logs.push(LogEntry {
                    instance_id: f.target_instance.clone(),
                    ts: log_ts,
                    level: LogLevel::Error,
                    message,
                });
            }
            log_ts += config.fault_log_interval_ms;
        }
    }
    logs.sort_by(|a, b| (a.ts, &a.instance_id).cmp(&(b.ts, &b.instance_id)));

    let labels = faults
        .iter()
        .map(|f| FailureRecord {
            inject_ts: f.start_ts,
            root_cause_instance: f.target_instance.clone(),
            failure_type: f.fault_type.label().to_string(),
        })
        .collect();

    Ok(Corpus {
        metrics,
        spans,
        logs,
        labels,
        manifest: CorpusManifest {
            topology: topology.clone(),
            config: config.clone(),
            faults: faults.to_vec(),
        },
    })
}

/// Recursively serves one request at `service`, appending spans. Returns the
/// span duration: own processing (scaled by any active latency fault at the
/// serving instance) plus all downstream call durations, so latency faults
/// surface on every ancestor call path.
#[allow(clippy::too_many_arguments)]
fn serve(
    topology: &Topology,
    active: &ActiveFaults<'_>,
    rng: &mut ChaCha8Rng,
    spans: &mut Vec<Span>,
    trace_id: &str,
    span_counter: &mut usize,
    parent_span_id: Option<String>,
    service: &str,
    operation: &str,
    start_ts: i64,
) -> i64 {
    let instance_count = topology.services[service];
    let instance = format!("{service}-{}", rng.gen_range(0..instance_count));
    let span_id = format!("{trace_id}.{}", *span_counter);
    *span_counter += 1;

    let base = base_latency_ms(operation);
    let processing = LogNormal::new(base.ln(), 0.3).unwrap().sample(rng);
    let mut multiplier = 1.0;
    let mut status = "200".to_string();
    for f in active.at(&instance, start_ts) {
        multiplier *= latency_multiplier(f.fault_type, f.severity);
        if f.fault_type == FaultType::ProcessExit {
            status = "500".to_string();
        }
    }

    let mut child_total = 0i64;
    let slot = spans.len();
    spans.push(Span {
        trace_id: trace_id.to_string(),
        span_id: span_id.clone(),
        parent_span_id,
        service: service.to_string(),
        instance_id: instance,
        operation: operation.to_string(),
        start_ts,
        duration_ms: 0,
        status,
    });
    let outgoing: Vec<CallEdge> = topology
        .call_edges
        .iter()
        .filter(|e| e.caller == service)
        .cloned()
        .collect();
    for edge in outgoing {
        child_total += serve(
            topology,
            active,
            rng,
            spans,
            trace_id,
            span_counter,
            Some(span_id.clone()),
            &edge.callee,
            &edge.operation,
            start_ts + child_total + 1,
        );
    }
    let duration = (processing * multiplier) as i64 + child_total;
    spans[slot].duration_ms = duration;
    duration
}

/// The desk corpus layout: a clean training prefix, then evenly spaced fault
/// windows cycling through all six types.
#[derive(Debug, Clone, Copy)]
pub struct DeskLayout {
    pub clean_prefix_ms: i64,
    pub injections_per_type: usize,
    pub spacing_ms: i64,
    pub fault_duration_ms: i64,
}

impl Default for DeskLayout {
    fn default() -> Self {
        DeskLayout {
            clean_prefix_ms: 600_000,
            injections_per_type: 20,
            spacing_ms: 60_000,
            fault_duration_ms: 30_000,
        }
    }
}

/// Builds the fault schedule for a layout: types cycle per slot and targets
/// rotate over the instances, skipping frontend instances for net-delay
/// (a delay on the entry service is invisible to invocation-level detection).
pub fn desk_fault_schedule(
    topology: &Topology,
    layout: &DeskLayout,
    seed: u64,
) -> Vec<FaultSpec> {
    let instances = topology.instances();
    let non_frontend: Vec<&String> = instances
        .iter()
        .filter(|i| !i.starts_with(&format!("{}-", topology.frontend)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = layout.injections_per_type * FaultType::ALL.len();
    let mut faults = Vec::with_capacity(total);
    for slot in 0..total {
        let fault_type = FaultType::ALL[slot % FaultType::ALL.len()];
        let target = if fault_type == FaultType::NetDelay {
            non_frontend[slot / FaultType::ALL.len() % non_frontend.len()].clone()
        } else {
            instances[(slot * 7 + slot / FaultType::ALL.len()) % instances.len()].clone()
        };
        faults.push(FaultSpec {
            fault_type,
            target_instance: target,
            start_ts: layout.clean_prefix_ms + slot as i64 * layout.spacing_ms,
            duration_ms: layout.fault_duration_ms,
            severity: 0.6 + rng.gen_range(0.0..0.3),
        });
    }
    faults
}

/// The default acceptance corpus: desk topology, 6 types x 20 injections.
pub fn desk_corpus(seed: u64) -> Result<Corpus> {
    let topology = Topology::desk_default();
    let layout = DeskLayout::default();
    let faults = desk_fault_schedule(&topology, &layout, seed);
    let duration = layout.clean_prefix_ms + faults.len() as i64 * layout.spacing_ms;
    let config = GeneratorConfig {
        duration_ms: duration,
        seed,
        ..Default::default()
    };
    generate(&topology, &config, &faults)
}
