//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
//! Failures print `{"error": {"kind", "message", ...}}` on stderr.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, ErrorClass, Result};
use crate::metrics::Metric;
use crate::planner::{PlanMode, Rounding};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "prunekit",
    version,
    about = "Class-discriminative channel scoring, label hierarchies, pruning plans and DCA distillation"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON object of flag values; keys are long flag names without the
    /// leading dashes. Flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every channel of every layer in a run.
    Score(ScoreArgs),
    /// Learn a fine-to-coarse class mapping.
    Hierarchy(HierarchyArgs),
    /// Build a pruning plan from score reports.
    Plan(PlanArgs),
    /// Compute a DCA or PCA projection of one layer.
    Dca(DcaArgs),
    /// Evaluate the subspace and output distillation losses.
    DistillLoss(DistillArgs),
    /// Held-out accuracy of a linear probe on (projected) features.
    Probe(ProbeArgs),
    /// Generate a synthetic run with planted structure.
    Synth(SynthArgs),
    /// Check a run directory against the interchange conventions.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    #[value(name = "g-sd", alias = "sd")]
    GSd,
    #[value(name = "g-abssnr", alias = "abssnr")]
    GAbsSnr,
    #[value(name = "g-fdr", alias = "fdr")]
    GFdr,
    #[value(name = "g-ttest", alias = "ttest")]
    GTtest,
    Mmd,
    Di,
    Random,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::GSd => Metric::GSd,
            MetricArg::GAbsSnr => Metric::GAbsSnr,
            MetricArg::GFdr => Metric::GFdr,
            MetricArg::GTtest => Metric::GTtest,
            MetricArg::Mmd => Metric::Mmd,
            MetricArg::Di => Metric::Di,
            MetricArg::Random => Metric::Random,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run directory containing manifest.json.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// Output directory; one `<layer>.json` report per layer.
    #[arg(long)]
    pub out: PathBuf,
    /// Coarse mapping to score against; fine labels when absent.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Name recorded for the label scheme (default "fine" or "coarse").
    #[arg(long)]
    pub scheme_name: Option<String>,
    /// Restrict to these layers (comma-separated); default all.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_RHO)]
    pub rho: f64,
    /// Required for the random metric.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HierarchyMethod {
    Kmeans,
    Spectral,
}

#[derive(Debug, Args)]
pub struct HierarchyArgs {
    #[arg(long, value_enum)]
    pub method: HierarchyMethod,
    #[arg(long)]
    pub coarse_classes: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output mapping JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Run directory: k-means uses a layer's class centroids, spectral uses
    /// the run's logits.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Layer for centroids (default: last layer in the manifest).
    #[arg(long)]
    pub layer: Option<String>,
    /// Precomputed confusion matrix (rank-2 integer array) for spectral.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Cluster the coarse classes of this mapping instead of fine classes;
    /// the output maps fine classes straight to the new, coarser groups.
    #[arg(long)]
    pub from_mapping: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    AllFine,
    AllCoarse,
    FineCoarse,
    CoarseFine,
    ThreeLevel,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AllFine => PlanMode::AllFine,
            ModeArg::AllCoarse => PlanMode::AllCoarse,
            ModeArg::FineCoarse => PlanMode::FineCoarse,
            ModeArg::CoarseFine => PlanMode::CoarseFine,
            ModeArg::ThreeLevel => PlanMode::ThreeLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoundingArg {
    None,
    #[value(name = "multiple-of-8")]
    MultipleOf8,
}

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::None => Rounding::None,
            RoundingArg::MultipleOf8 => Rounding::MultipleOf8,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Run directory; its manifest fixes the layer order.
    #[arg(long)]
    pub run: PathBuf,
    /// Directory of fine-scheme reports (`<layer>.json`).
    #[arg(long)]
    pub fine: Option<PathBuf>,
    /// Directory of coarse-scheme reports.
    #[arg(long)]
    pub coarse: Option<PathBuf>,
    /// Directory of coarsest-scheme reports (three-level mode).
    #[arg(long)]
    pub coarsest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "coarse-fine")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = crate::planner::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// One ratio for every layer, or one per layer (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "0.45")]
    pub ratio: Vec<f64>,
    #[arg(long, value_enum, default_value = "none")]
    pub rounding: RoundingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Dca,
    Pca,
}

/// Where a command reads its activations from.
#[derive(Debug, Args)]
pub struct FeatureSource {
    /// Run directory (with `--layer`).
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<String>,
    /// Standalone activation array (rank ≥ 2, flattened per sample).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Labels for `--features`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Coarse mapping applied to the labels.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DcaArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    #[arg(long, value_enum, default_value = "dca")]
    pub kind: KindArg,
    /// Component count for PCA (default: the class count).
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long, default_value_t = crate::dca::DEFAULT_RIDGE)]
    pub rho: f64,
    /// Output prefix; writes `<prefix>.npy` and `<prefix>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Teacher activations (rank ≥ 2, flattened per sample).
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub student: PathBuf,
    /// Teacher projection prefix.
    #[arg(long)]
    pub teacher_proj: PathBuf,
    #[arg(long)]
    pub student_proj: PathBuf,
    #[arg(long)]
    pub teacher_logits: Option<PathBuf>,
    #[arg(long)]
    pub student_logits: Option<PathBuf>,
    /// Cross-entropy term to fold into the combined loss.
    #[arg(long, default_value_t = 0.0)]
    pub ce: f64,
    #[arg(long, default_value_t = crate::dca::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = crate::dca::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = crate::dca::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    /// Projection prefix applied before probing; raw features when absent.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::dca::DEFAULT_PROBE_REG)]
    pub reg: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 8)]
    pub fine_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub hw: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub run: PathBuf,
}

/// Folds `--config` JSON into the argument list. Keys become `--key`
/// flags appended unless the flag is already present; `true` becomes a
/// bare flag, arrays become comma-separated values.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args
        .iter()
        .position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let path = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => match args.get(pos + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(args),
        },
    };
    let text = std::fs::read_to_string(&path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::MalformedFile(format!("{}: config must be a JSON object", path.display())))?;
    let present = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let mut out = args.clone();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if present(&flag) {
            continue;
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            serde_json::Value::Bool(b) => Ok(b.to_string()),
            other => Err(Error::MalformedFile(format!(
                "config key {key:?}: unsupported value {other}"
            ))),
        };
        match v {
            serde_json::Value::Bool(true) => out.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
                out.push(flag.into());
                out.push(joined.into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

pub fn error_json(e: &Error) -> serde_json::Value {
    let mut obj = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Some(l) = e.layer() {
        obj["layer"] = json!(l);
    }
    if let Some(c) = e.channel() {
        obj["channel"] = json!(c);
    }
    json!({ "error": obj })
}

fn usage_error(message: String) -> i32 {
    eprintln!("{}", json!({ "error": { "kind": "UsageError", "message": message } }));
    EXIT_USAGE
}

/// Runs a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        // A second initialization (e.g. repeated in-process runs) keeps the
        // existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Score(a) => commands::score(&a),
        Command::Hierarchy(a) => commands::hierarchy(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Dca(a) => commands::dca(&a),
        Command::DistillLoss(a) => commands::distill_loss(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Validate(a) => commands::validate(&a),
    }
}

/// Full process behavior: config merge, parsing, execution and error
/// reporting. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            return exit_code(&e).max(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => return usage_error(e.to_string()),
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"alpha": 0.3, "ratio": [0.5, 0.4], "mode": "all-fine"}"#).unwrap();
        let args: Vec<OsString> = ["prunekit", "plan", "--mode", "fine-coarse", "--config"]
            .iter()
            .map(OsString::from)
            .chain([path.clone().into_os_string()])
            .collect();
        let merged = merge_config(args).unwrap();
        let s: Vec<String> = merged.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(s.windows(2).any(|w| w == ["--alpha", "0.3"]));
        assert!(s.windows(2).any(|w| w == ["--ratio", "0.5,0.4"]));
        assert_eq!(s.iter().filter(|a| *a == "--mode").count(), 1);
    }

    #[test]
    fn error_object_shape() {
        let e = Error::DegenerateClass {
            class: 2,
            reason: "x".into(),
        }
        .in_channel(4)
        .in_layer("conv1");
        let v = error_json(&e);
        assert_eq!(v["error"]["kind"], "DegenerateClass");
        assert_eq!(v["error"]["layer"], "conv1");
        assert_eq!(v["error"]["channel"], 4);
        assert_eq!(exit_code(&e), EXIT_DATA);
        assert_eq!(exit_code(&Error::InvalidAlpha(2.0)), EXIT_USAGE);
        assert_eq!(exit_code(&Error::LinearAlgebraFailure("x".into())), EXIT_NUMERICAL);
    }
}
