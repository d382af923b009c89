//! Command-line interface. Results go to stdout as JSON; logs go to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ini::Ini;
use log::{error, info};
use serde_json::json;

use crate::data::Task;
use crate::error::{Error, Result};
use crate::ingest::{generate_synthetic, Dataset, SignalPlan, Split, SyntheticConfig};
use crate::model::{checkpoint, ModelConfig, Variant};
use crate::selfcheck::run_selfcheck;
use crate::train::{evaluate, Evaluation, run_experiment, run_once, ExperimentConfig, ModelOverrides, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFCHECK: i32 = 3;

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const RECORD_FILE: &str = "record.json";
pub const DEFAULT_MAX_NOTE_TOKENS: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "notefusion", version, about = "Multimodal ICU outcome prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and run record.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Run gradient checks and metric oracles.
    Selfcheck(SelfcheckArgs),
    /// Train every task × variant × seed and print aggregated metrics.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` file with [model], [train] and [data] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set model.dropout=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub variant: VariantArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Must match the checkpoint's task when given.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, default_value_t = DEFAULT_MAX_NOTE_TOKENS)]
    pub max_note_tokens: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub patients: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "mixed")]
    pub signal: SignalPlan,
    #[arg(long, default_value_t = SyntheticConfig::default().feature_dim)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().embedding_dim)]
    pub embedding_dim: usize,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Fewer metric oracle instances.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "ihm,decomp,los")]
    pub tasks: Vec<Task>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,text_only,multimodal_avgwe,multimodal_cnn")]
    pub variants: Vec<VariantArg>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Also write every run record (JSON lines) here.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// clap-parsable wrapper around [`Variant`].
#[derive(Debug, Clone, Copy)]
pub struct VariantArg(pub Variant);

impl std::str::FromStr for VariantArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .map(VariantArg)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Validation(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Settings shared by `train` and `experiment`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub max_note_tokens: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            max_note_tokens: DEFAULT_MAX_NOTE_TOKENS,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("invalid value `{value}` for `{key}`")))
}

impl CliConfig {
    /// Applies one `section.key` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model.lstm_hidden" => m.lstm_hidden = Some(parse_value(key, value)?),
            "model.filters_per_width" => m.filters_per_width = Some(parse_value(key, value)?),
            "model.conv_widths" => {
                let widths = value
                    .split(',')
                    .map(|w| parse_value(key, w))
                    .collect::<Result<Vec<usize>>>()?;
                m.conv_widths = Some(widths);
            }
            "model.decay_lambda" => m.decay_lambda = Some(parse_value(key, value)?),
            "model.dropout" => m.dropout = Some(parse_value(key, value)?),
            "model.weight_decay" => m.weight_decay = Some(parse_value(key, value)?),
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.learning_rate" => t.learning_rate = parse_value(key, value)?,
            "train.clip_norm" => t.clip_norm = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "data.max_note_tokens" => self.max_note_tokens = parse_value(key, value)?,
            other => return Err(Error::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let key = match section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                };
                cfg.set(&key, v)?;
            }
        }
        Ok(cfg)
    }

    /// File (if any), then `--set` overrides in order; validated at the end.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::from_ini_str(&text)?
            }
            None => Self::default(),
        };
        for o in &args.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("override `{o}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.train.validate()?;
        cfg.model
            .apply(ModelConfig::for_task(Task::Ihm, Variant::MultimodalCnn, 1, 1))
            .validate()?;
        if cfg.max_note_tokens == 0 {
            return Err(Error::Validation("data.max_note_tokens must be positive".into()));
        }
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Dimension { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{value}").map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = CliConfig::resolve(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let dataset = Dataset::load(&args.data, cfg.max_note_tokens)?;
    let (model, record) = run_once(&dataset, args.task, args.variant.0, &cfg.model, &cfg.train)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    checkpoint::save(&model, &args.out.join(CHECKPOINT_FILE))?;
    let record_path = args.out.join(RECORD_FILE);
    fs::write(&record_path, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| Error::io(&record_path, e))?;
    info!("wrote {}", args.out.display());
    print_json(&metrics_json(&record.test, args.variant.0, Split::Test, &[("selected_epoch", json!(record.selected_epoch))]))
}

fn metrics_json(eval: &Evaluation, variant: Variant, split: Split, extra: &[(&str, serde_json::Value)]) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert("task".into(), json!(eval.task));
    obj.insert("variant".into(), json!(variant));
    obj.insert("split".into(), json!(split.to_string()));
    obj.insert("predictions".into(), json!(eval.predictions));
    for (name, v) in eval.metrics() {
        obj.insert(name.into(), json!(v));
    }
    for (k, v) in extra {
        obj.insert((*k).into(), v.clone());
    }
    serde_json::Value::Object(obj)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)?;
    let task = model.config().task;
    if let Some(t) = args.task {
        if t != task {
            return Err(Error::Validation(format!("--task {t} does not match checkpoint task {task}")));
        }
    }
    let dataset = Dataset::load(&args.data, args.max_note_tokens)?;
    let (episodes, _) = dataset.select(task, args.split);
    let eval = evaluate(&model, &episodes, &dataset.table)?;
    print_json(&metrics_json(&eval, model.config().variant, args.split, &[]))
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if is_nonempty_dir(&args.out) {
        if !args.force {
            return Err(Error::Validation(format!(
                "{} exists and is not empty (use --force to replace it)",
                args.out.display()
            )));
        }
        fs::remove_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    }
    let cfg = SyntheticConfig {
        patients: args.patients,
        feature_dim: args.feature_dim,
        embedding_dim: args.embedding_dim,
        signal_plan: args.signal,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let manifest = generate_synthetic(&cfg, &args.out)?;
    print_json(&json!({
        "out": args.out.display().to_string(),
        "patients": manifest.episodes.len(),
        "signal_plan": args.signal.as_str(),
        "seed": args.seed,
    }))
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> Result<bool> {
    let report = run_selfcheck(args.quick)?;
    let mut out = std::io::stdout().lock();
    for line in &report.lines {
        let status = if line.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {:<36} max error {:.3e} (limit {:.0e})", line.name, line.value, line.tolerance)
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    writeln!(out, "{} checks in {:.2}s", report.lines.len(), report.seconds).map_err(|e| Error::io("<stdout>", e))?;
    Ok(report.passed())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let cfg = CliConfig::resolve(&args.config)?;
    let dataset = Dataset::load(&args.data, cfg.max_note_tokens)?;
    let exp = ExperimentConfig {
        tasks: args.tasks.clone(),
        variants: args.variants.iter().map(|v| v.0).collect(),
        seeds: args.seeds.clone(),
        train: cfg.train,
        model: cfg.model,
    };
    let (rows, runs) = run_experiment(&dataset, &exp)?;
    if let Some(path) = &args.runs {
        let mut text = String::new();
        for r in &runs {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    for r in &rows {
        print_json(&json!({
            "task": r.task,
            "variant": r.variant,
            "row": r.variant.display_name(),
            "metric": r.metric,
            "seeds": r.seeds,
            "mean": r.mean,
            "std": r.std,
        }))?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Selfcheck(a) => match cmd_selfcheck(a) {
            Ok(true) => return EXIT_OK,
            Ok(false) => return EXIT_SELFCHECK,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_sections_and_overrides() {
        let cfg = CliConfig::from_ini_str("[model]\nlstm_hidden = 16\nconv_widths = 2,3\n[train]\nepochs = 4\n").unwrap();
        assert_eq!(cfg.model.lstm_hidden, Some(16));
        assert_eq!(cfg.model.conv_widths, Some(vec![2, 3]));
        assert_eq!(cfg.train.epochs, 4);
        assert!(CliConfig::from_ini_str("[model]\nhidden = 3\n").is_err());
        assert!(CliConfig::from_ini_str("[train]\nepochs = many\n").is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<VariantArg>().unwrap().0, v);
        }
        assert!("lstm".parse::<VariantArg>().is_err());
    }
}
