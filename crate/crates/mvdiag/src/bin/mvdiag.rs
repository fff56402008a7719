use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvdiag::alerts::{LogAlertConfig, TraceDetectorConfig};
use mvdiag::config::Config;
use mvdiag::dataset::Dataset;
use mvdiag::diagnose::{diagnose, extract_alerts, fit_extractors, Extractors};
use mvdiag::logparse::DrainConfig;
use mvdiag::pipeline::{
    build_dataset, diagnose_case, evaluate_bundle, summarize, test_labels, train_bundle, Bundle,
    CaseResult, CorpusData,
};
use mvdiag::simgen::{desk_fault_schedule, generate, DeskLayout, GeneratorConfig, Topology};
use mvdiag::telemetry::{slice, TimeWindow};

#[derive(Parser)]
#[command(
    name = "mvdiag",
    version,
    about = "Multimodal failure diagnosis for microservice systems"
)]
struct Cli {
    /// TOML config file (falls back to $MVDIAG_CONFIG, then defaults)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set tau=0.5 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus with injected faults
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// injections per fault type (6 types total)
        #[arg(long, default_value_t = 20)]
        injections_per_type: usize,
    },
    /// Fit the alert extractors; optionally extract one window's alerts
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        /// clean fitting window as START:END (ms)
        #[arg(long)]
        train_window: String,
        /// window to extract alerts for, as START:END
        #[arg(long)]
        alert_window: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the labeled dataset from corpus + extractors
    BuildDataset {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        extractors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on a dataset's training split
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// write the per-epoch loss trace here
        #[arg(long)]
        loss_out: Option<PathBuf>,
    },
    /// Diagnose one telemetry window
    Diagnose {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        extractors: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// window as START:END (ms)
        #[arg(long)]
        window: String,
        /// output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate on the dataset's test split, or on a prediction fixture
    Evaluate {
        #[arg(long, requires_all = ["extractors", "checkpoint", "dataset"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        extractors: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// JSON array of case results; bypasses the model
        #[arg(long, conflicts_with = "corpus")]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shapley modality attribution for one labeled case or window
    Explain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        extractors: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        window: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_window(text: &str) -> Result<TimeWindow, CliError> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CliError::Validation(format!("window {text} is not START:END")))?;
    let start: i64 = a.trim().parse().map_err(validation)?;
    let end: i64 = b.trim().parse().map_err(validation)?;
    TimeWindow::new(start, end).map_err(validation)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(runtime)?);
            Ok(())
        }
    }
}

fn load_corpus(dir: &Path) -> Result<CorpusData, CliError> {
    CorpusData::load(dir)
        .map_err(|e| CliError::Validation(format!("corpus {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::resolve(cli.config.as_deref(), &cli.overrides).map_err(validation)?;
    match cli.command {
        Command::Simulate { out, injections_per_type } => {
            let topology = Topology::desk_default();
            let layout = DeskLayout { injections_per_type, ..Default::default() };
            let faults = desk_fault_schedule(&topology, &layout, config.seed);
            let duration = layout.clean_prefix_ms + faults.len() as i64 * layout.spacing_ms;
            let gen_config = GeneratorConfig {
                duration_ms: duration,
                seed: config.seed,
                ..Default::default()
            };
            let corpus = generate(&topology, &gen_config, &faults).map_err(runtime)?;
            corpus.write(&out).map_err(runtime)?;
            eprintln!(
                "wrote corpus to {}: {} metric samples, {} spans, {} log lines, {} failures",
                out.display(),
                corpus.metrics.len(),
                corpus.spans.len(),
                corpus.logs.len(),
                corpus.labels.len()
            );
            Ok(())
        }
        Command::Extract { corpus, train_window, alert_window, out } => {
            let data = load_corpus(&corpus)?;
            let train = parse_window(&train_window)?;
            let extractors = fit_extractors(
                &slice(&data.metrics, train),
                &slice(&data.spans, train),
                &data.logs,
                TraceDetectorConfig::default(),
                LogAlertConfig {
                    low_freq_fraction: config.k,
                    ..Default::default()
                },
                DrainConfig::default(),
                mvdiag::config::substream(config.seed, "iforest"),
            )
            .map_err(runtime)?;
            std::fs::create_dir_all(&out).map_err(runtime)?;
            write_json(&out.join("extractors.json"), &extractors)?;
            if let Some(w) = alert_window {
                let w = parse_window(&w)?;
                let (metrics, spans, logs) = data.window(w);
                let (alerts, notes) = extract_alerts(&extractors, &metrics, &spans, &logs);
                mvdiag::telemetry::save_jsonl(out.join("alerts.jsonl"), &alerts)
                    .map_err(runtime)?;
                write_json(&out.join("extraction_notes.json"), &notes)?;
                eprintln!("extracted {} alerts", alerts.len());
            }
            Ok(())
        }
        Command::BuildDataset { corpus, extractors, out } => {
            let data = load_corpus(&corpus)?;
            let extractors: Extractors = read_json(&extractors)?;
            let dataset = build_dataset(&data, &extractors, &config).map_err(runtime)?;
            write_json(&out, &dataset)?;
            eprintln!(
                "built dataset: {} samples, {} classes, {} training",
                dataset.samples.len(),
                dataset.class_count(),
                dataset.train_split.iter().filter(|&&t| t).count()
            );
            Ok(())
        }
        Command::Train { dataset, out, loss_out } => {
            let dataset: Dataset = read_json(&dataset)?;
            let (bundle, report) = train_bundle(&dataset, &config).map_err(runtime)?;
            write_json(&out, &bundle)?;
            if let Some(loss_path) = loss_out {
                write_json(&loss_path, &report.loss_history)?;
            }
            eprintln!(
                "trained {} epochs, best loss {:.6}{}",
                report.loss_history.len(),
                report.best_loss,
                if report.stopped_early { " (early stop)" } else { "" }
            );
            Ok(())
        }
        Command::Diagnose { corpus, extractors, checkpoint, window, out } => {
            let data = load_corpus(&corpus)?;
            let extractors: Extractors = read_json(&extractors)?;
            let bundle: Bundle = read_json(&checkpoint)?;
            let model = bundle.model().map_err(validation)?;
            let w = parse_window(&window)?;
            let (metrics, spans, logs) = data.window(w);
            let report = diagnose(
                &model,
                &bundle.embedding,
                &extractors,
                &metrics,
                &spans,
                &logs,
                &bundle.failure_types,
            )
            .map_err(runtime)?;
            emit(out.as_deref(), &report)
        }
        Command::Evaluate { corpus, extractors, checkpoint, dataset, cases, out } => {
            if let Some(cases_path) = cases {
                let cases: Vec<CaseResult> = read_json(&cases_path)?;
                let mut names: Vec<String> =
                    cases.iter().map(|c| c.true_type.clone()).collect();
                names.sort();
                names.dedup();
                let summary = summarize(cases, &names).map_err(runtime)?;
                return emit(out.as_deref(), &summary);
            }
            let corpus = corpus.ok_or_else(|| {
                CliError::Validation("evaluate needs --corpus ... or --cases".into())
            })?;
            let data = load_corpus(&corpus)?;
            let extractors: Extractors = read_json(&extractors.unwrap())?;
            let bundle: Bundle = read_json(&checkpoint.unwrap())?;
            let dataset: Dataset = read_json(&dataset.unwrap())?;
            let holdout = test_labels(&data, &dataset);
            let summary =
                evaluate_bundle(&bundle, &extractors, &data, &holdout, &config).map_err(runtime)?;
            emit(out.as_deref(), &summary)
        }
        Command::Explain { corpus, extractors, checkpoint, window, out } => {
            let data = load_corpus(&corpus)?;
            let extractors: Extractors = read_json(&extractors)?;
            let bundle: Bundle = read_json(&checkpoint)?;
            let model = bundle.model().map_err(validation)?;
            let w = parse_window(&window)?;
            // reuse the per-case path when the window matches a label
            let report = if let Some(label) = data
                .labels
                .iter()
                .find(|l| l.inject_ts == w.start_ts)
                .cloned()
            {
                diagnose_case(&bundle, &model, &extractors, &data, &label, &config)
                    .map_err(runtime)?
                    .1
            } else {
                let (metrics, spans, logs) = data.window(w);
                diagnose(
                    &model,
                    &bundle.embedding,
                    &extractors,
                    &metrics,
                    &spans,
                    &logs,
                    &bundle.failure_types,
                )
                .map_err(runtime)?
            };
            let explanation = serde_json::json!({
                "predicted_type": report.predicted_type,
                "top_instance": report.ranking.first().map(|r| r.instance.clone()),
                "attribution": report.attribution,
                "modalities": ["metric", "trace", "log"],
            });
            emit(out.as_deref(), &explanation)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
