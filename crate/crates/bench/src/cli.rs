//! The `ecgid` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ecgid_core::detect::detect_r_peaks;
use ecgid_core::dsp::bandpass_zero_phase;
use ecgid_core::features::save_matrix;
use ecgid_core::ingest::{generate_cohort, load_manifest, load_record, CohortSpec, DatasetManifest};
use ecgid_core::select::{save_weights, select_features_with, SelectionMode};
use ecgid_core::Condition;

use crate::config::{FeatureStage, PipelineConfig, PREPROCESS_ORDER};
use crate::pipeline::{extract_cohort, featurize_all, run_on_features_owned, sweep_top_n, RunOptions};
use crate::protocol::Protocol;
use crate::report::{load_rows, merge_rows, render_report, render_rows, ReportFormat};
use crate::BenchError;

const GRAMMAR: &str = "\
ecgid gen --subjects N [--rest-s S] [--ex-s S] [--noise-off] [--no-exercise-shift] --seed N --out DIR
ecgid detect --record FILE [--config FILE] [--out FILE]
ecgid featurize --manifest PATH (--layout NAME | --config FILE) --out FILE
ecgid select --features FILE --lambda X (--top-n N | --threshold X) --out FILE
ecgid run --manifest PATH --config FILE --protocol P [--seed N] [--format csv|markdown] [--out FILE]
ecgid sweep --manifest PATH --config FILE --protocol P --top-n N,N,.. [--seed N] [--out FILE]
ecgid report FILE.. [--format csv|markdown] [--out FILE]
protocols: rest_rest, ex_first70, ex_last70, rest_ex";

#[derive(Debug, Parser)]
#[command(name = "ecgid", about = "ECG identification benchmark", after_help = GRAMMAR)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for cohort synthesis and the auxiliary split.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Flat key=value pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; standard output when absent (`gen` requires it).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a cohort into a manifest directory.
    Gen {
        #[arg(long, default_value_t = 45)]
        subjects: usize,
        #[arg(long, default_value_t = 300.0)]
        rest_s: f64,
        #[arg(long, default_value_t = 150.0)]
        ex_s: f64,
        #[arg(long)]
        noise_off: bool,
        #[arg(long)]
        no_exercise_shift: bool,
    },
    /// Print detected R-peak sample indices of one record, one per line.
    Detect {
        #[arg(long)]
        record: PathBuf,
    },
    /// Featurize every record of a manifest into a matrix file.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        /// Feature stage name, e.g. qrs30 or fused.
        #[arg(long)]
        layout: Option<String>,
    },
    /// Fit selection weights on a feature matrix.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        lambda: f64,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run one pipeline under one protocol.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Evaluate the selection stage over a list of top_n values.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        protocol: String,
        #[arg(long, value_delimiter = ',', required = true)]
        top_n: Vec<usize>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Merge CSV report files into one table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn usage(msg: impl Into<String>) -> BenchError {
    BenchError::Usage(format!("{}\n\n{GRAMMAR}", msg.into()))
}

fn load_manifest_at(path: &Path) -> Result<DatasetManifest, BenchError> {
    let file = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    Ok(load_manifest(&file)?)
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig, BenchError> {
    match &common.config {
        Some(p) => PipelineConfig::load(p),
        None => Err(usage("missing --config <path>")),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), BenchError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| BenchError::Io(dir.display().to_string(), e))?;
            }
            std::fs::write(p, text).map_err(|e| BenchError::Io(p.display().to_string(), e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| BenchError::Io("stdout".into(), e)),
    }
}

fn stage_from_name(name: &str) -> Result<FeatureStage, BenchError> {
    format!("feature={name}\n")
        .parse::<PipelineConfig>()
        .map(|c| c.feature)
        .map_err(|_| usage(format!("unknown --layout {name:?}")))
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let common = &cli.common;
    let out = common.out.as_deref();
    match cli.command {
        Command::Gen {
            subjects,
            rest_s,
            ex_s,
            noise_off,
            no_exercise_shift,
        } => {
            let dir = out.ok_or_else(|| usage("gen needs --out <dir>"))?;
            if subjects == 0 {
                return Err(usage("--subjects must be positive"));
            }
            let spec = CohortSpec {
                subjects,
                rest_s,
                ex_s,
                seed: common.seed,
                noise_on: !noise_off,
                exercise_shift: !no_exercise_shift,
            };
            let manifest = generate_cohort(&spec, dir)?;
            eprintln!("wrote {} records to {}", manifest.entries.len(), dir.display());
            Ok(())
        }
        Command::Detect { record } => {
            let cfg = match &common.config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::new(FeatureStage::Qrs30),
            };
            let rec = load_record(&record, "record", Condition::Rest)?;
            let fs = rec.sampling_rate_hz();
            let pre = bandpass_zero_phase(
                rec.samples(),
                PREPROCESS_ORDER,
                cfg.preprocess_lo_hz,
                cfg.preprocess_hi_hz,
                fs,
            )?;
            let det = detect_r_peaks(&pre, fs)?;
            let text: String = det.r_peaks.iter().map(|r| format!("{r}\n")).collect();
            emit(out, &text)
        }
        Command::Featurize { manifest, layout } => {
            let cfg = match (&layout, &common.config) {
                (Some(name), None) => PipelineConfig::new(stage_from_name(name)?),
                (None, Some(p)) => PipelineConfig::load(p)?,
                _ => return Err(usage("featurize needs exactly one of --layout and --config")),
            };
            let out = out.ok_or_else(|| usage("featurize needs --out <file>"))?;
            let manifest = load_manifest_at(&manifest)?;
            manifest.validate()?;
            let (m, skipped) = featurize_all(&manifest.load_records()?, &cfg)?;
            save_matrix(&m, out)?;
            eprintln!("{} rows of dimension {}, {skipped} beats skipped", m.len(), m.dim());
            Ok(())
        }
        Command::Select {
            features,
            lambda,
            top_n,
            threshold,
        } => {
            let mode = match (top_n, threshold) {
                (Some(n), None) => SelectionMode::TopN(n),
                (None, Some(t)) => SelectionMode::Threshold(t),
                (None, None) => SelectionMode::TopN(crate::config::DEFAULT_KL_TOP_N),
                _ => return Err(usage("select takes only one of --top-n and --threshold")),
            };
            let out = out.ok_or_else(|| usage("select needs --out <file>"))?;
            let m = ecgid_core::features::load_matrix(&features)?;
            let weights = select_features_with(&m, lambda, mode)?;
            save_weights(&weights, out)?;
            Ok(())
        }
        Command::Run {
            manifest,
            protocol,
            format,
        } => {
            let protocol: Protocol = protocol.parse().map_err(|e: BenchError| usage(e.to_string()))?;
            let format: ReportFormat = format.parse().map_err(|e: BenchError| usage(e.to_string()))?;
            let cfg = pipeline_config(common)?;
            let manifest = load_manifest_at(&manifest)?;
            let report = crate::pipeline::run_pipeline(&manifest, &cfg, protocol, common.seed)?;
            emit(out, &render_report(&[report], format))
        }
        Command::Sweep {
            manifest,
            protocol,
            top_n,
            format,
        } => {
            let protocol: Protocol = protocol.parse().map_err(|e: BenchError| usage(e.to_string()))?;
            let format: ReportFormat = format.parse().map_err(|e: BenchError| usage(e.to_string()))?;
            let cfg = pipeline_config(common)?;
            if !matches!(cfg.feature, FeatureStage::FusedKl { .. }) {
                return Err(usage("sweep needs a config with feature=fused_kl"));
            }
            let manifest = load_manifest_at(&manifest)?;
            manifest.validate()?;
            manifest.require_exercise()?;
            let features = extract_cohort(&manifest.load_records()?, &cfg, common.seed)?;
            let mut reports: Vec<_> = sweep_top_n(&features, &cfg, protocol, &top_n, RunOptions::default())?
                .into_iter()
                .map(|r| r.report)
                .collect();
            let baseline = PipelineConfig {
                feature: FeatureStage::Fused,
                ..cfg
            };
            reports.push(run_on_features_owned(features, &baseline, protocol, RunOptions::default())?.report);
            emit(out, &render_report(&reports, format))
        }
        Command::Report { files, format } => {
            let format: ReportFormat = format.parse().map_err(|e: BenchError| usage(e.to_string()))?;
            let groups = files.iter().map(|f| load_rows(f)).collect::<Result<Vec<_>, _>>()?;
            emit(out, &render_rows(&merge_rows(groups), format))
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
