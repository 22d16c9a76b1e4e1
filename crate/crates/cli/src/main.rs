//! `artaug`: dataset augmentation for artwork object detection.
//!
//! Exit codes: 0 success, 1 validation error, 2 backend failure after
//! retries, 64 usage error.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use artaug::mask::StrategyKind;
use artaug::pipeline::TrainingScheme;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const BACKEND_URL_ENV: &str = "ARTAUG_BACKEND_URL";

#[derive(Parser, Debug)]
#[command(name = "artaug", version, about = "Diffusion-backed augmentation for artwork detection datasets")]
pub struct Cli {
    /// JSON object of flag values (keys are long flag names); explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate an annotation document and its images; optionally split it.
    #[command(args_override_self = true)]
    Ingest(IngestArgs),
    /// Class histogram and balancing preview.
    #[command(args_override_self = true)]
    Stats(StatsArgs),
    /// Write a strategy's masks for inspection, without generating anything.
    #[command(args_override_self = true)]
    Mask(MaskArgs),
    /// Run one augmentation strategy over a dataset.
    #[command(args_override_self = true)]
    Augment(AugmentArgs),
    /// Generate the synthetic class-balancing set.
    #[command(args_override_self = true)]
    Balance(BalanceArgs),
    /// Emit a training-scheme manifest.
    #[command(args_override_self = true)]
    Manifest(ManifestArgs),
    /// COCO-style mAP@[.50:.95] of detections against ground truth.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Render entropy, saliency, edge or mask images.
    #[command(args_override_self = true)]
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// COCO-style annotation document.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    /// Directory the document's file names are relative to.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fail on unreadable image files instead of warning.
    #[arg(long)]
    pub strict: bool,
    /// Write a seeded train/val split with this validation share.
    #[arg(long, requires = "out")]
    pub val_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.json / val.json.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    /// Also write the balancing plan as CSV.
    #[arg(long, value_name = "FILE")]
    pub plan_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct StrategyArgs {
    #[arg(long, default_value_t = artaug::analysis::DEFAULT_ENTROPY_WINDOW)]
    pub entropy_window: usize,
    /// OPBG target share of the background.
    #[arg(long, default_value_t = 0.25)]
    pub coverage: f64,
    /// BORDER ring width as a fraction of the box side.
    #[arg(long, default_value_t = 0.1)]
    pub border_margin: f64,
    /// Fixed EDGE feather width in pixels (default: 5% of the shorter side).
    #[arg(long)]
    pub feather: Option<u32>,
    #[arg(long, default_value_t = artaug::backend::DEFAULT_STEPS)]
    pub steps: u32,
    #[arg(long, default_value_t = artaug::backend::DEFAULT_GUIDANCE)]
    pub guidance: f32,
    /// Positive prompt template; must contain {class_name}.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub negative_prompt: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Diffusion service base URL.
    #[arg(long, env = BACKEND_URL_ENV)]
    pub backend_url: Option<String>,
    #[arg(long, default_value_t = 120_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Simultaneous requests to the service.
    #[arg(long, default_value_t = 1)]
    pub max_in_flight: usize,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: StrategyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: StrategyArgs,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: StrategyKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub params: StrategyArgs,
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    /// Training-split annotation document.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Classes still below this after balancing are reported.
    #[arg(long, default_value_t = artaug::balance::BALANCE_TARGET)]
    pub min_target: u64,
    /// Square canvas side in pixels.
    #[arg(long, default_value_t = artaug::compositor::DEFAULT_CANVAS_SIZE.0)]
    pub canvas_size: u32,
    /// Crops placed per canvas.
    #[arg(long, default_value_t = 1)]
    pub per_canvas: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub params: StrategyArgs,
}

#[derive(Args, Debug)]
pub struct ManifestArgs {
    /// Real training annotation document.
    #[arg(long, value_name = "FILE")]
    pub real: PathBuf,
    /// Synthetic annotation document(s).
    #[arg(long = "synthetic", value_name = "FILE", required = true)]
    pub synthetic: Vec<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: TrainingScheme,
    /// Validation split recorded with the manifest.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth annotation document.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Detection results; repeat for mean ± std over runs.
    #[arg(long = "pred", value_name = "FILE", required = true)]
    pub pred: Vec<PathBuf>,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisualKind {
    Entropy,
    Saliency,
    Edges,
    Masks,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub what: VisualKind,
    /// Strategy for `--what masks`.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<StrategyKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: StrategyArgs,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: artaug::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<TrainingScheme, String> {
    s.parse().map_err(|e: artaug::Error| e.to_string())
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<artaug::Error> for Failure {
    fn from(e: artaug::Error) -> Self {
        let code = if e.is_backend() { EXIT_BACKEND } else { EXIT_VALIDATION };
        Failure { code, message: e.to_string() }
    }
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Failure { code: EXIT_BACKEND, message: message.into() }
    }
}

/// Splits `--config FILE` out of `argv` and splices the file's values in
/// right after the subcommand, so flags given on the command line (which
/// come later) override them.
fn apply_config(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = it.next().map(PathBuf::from);
            if config.is_none() {
                rest.push(a);
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let Some(sub_pos) = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        return Ok(rest);
    };
    let sub = rest[sub_pos].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sub_cmd) = cmd.find_subcommand(&sub) else { return Ok(rest) };
    let known: Vec<String> = sub_cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let extra = config_args(&path, &known)?;
    rest.splice(sub_pos + 1..sub_pos + 1, extra);
    Ok(rest)
}

fn config_args(path: &Path, known: &[String]) -> Result<Vec<OsString>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let obj = doc.as_object().ok_or_else(|| Failure::validation(format!("{}: expected a JSON object", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in obj {
        let flag = key.replace('_', "-");
        if !known.contains(&flag) {
            log::debug!("config key {key:?} does not apply to this command");
            continue;
        }
        let values = match value {
            serde_json::Value::Array(items) => items.clone(),
            v => vec![v.clone()],
        };
        for v in values {
            match v {
                serde_json::Value::Bool(true) => out.push(format!("--{flag}").into()),
                serde_json::Value::Bool(false) | serde_json::Value::Null => {}
                serde_json::Value::String(s) => out.push(format!("--{flag}={s}").into()),
                other => out.push(format!("--{flag}={other}").into()),
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let argv = match apply_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
