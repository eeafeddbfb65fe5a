//! Command-line entry points.

pub mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepcross::baselines::{lr_evaluate, zscore_rate, LrConfig, ZScoreModel};
use deepcross::checkpoint;
use deepcross::data::{
    build_schema, gen_synthetic_interaction, load_csv, normalize_all, split, wide_to_long, write_csv, EncodedSample,
    FieldKind, FieldSpec, IngestConfig, RawValue, SequencedSample, WideInput,
};
use deepcross::explain::{emit_reports, explain_sample, static_explanation};
use deepcross::train::{model_grad_check, trace_csv, train};
use deepcross::{evaluate, DeepCross64, Error, EvalReport};

pub use config::RunConfig;

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for runtime failures.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "deepcross", version, about = "Explainable feature-crossing network for sequential tabular rating")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert wide per-period CSV files into the long format.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint plus a loss trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data split.
    Eval(EvalArgs),
    /// Write static or per-entity explanations.
    Explain(ExplainArgs),
    /// Run a linear baseline.
    Baseline(BaselineArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Retrain across a hyperparameter axis and report test metrics.
    Sweep(SweepArgs),
    /// Generate the planted-interaction synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Wide input file as PERIOD=PATH; a bare PATH takes its position as period.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV; defaults to `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path; the loss trace goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Entity to explain.
    #[arg(long, conflicts_with = "static_", required_unless_present = "static_")]
    pub entity: Option<String>,
    /// Write the dataset-level pattern table instead.
    #[arg(long = "static")]
    pub static_: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Zscore,
    Lr,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub which: BaselineKind,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Rank,
    Timespan,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    #[arg(long, required = true, value_delimiter = ',')]
    pub values: Vec<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long = "time-span", default_value_t = 2)]
    pub time_span: usize,
    #[arg(long, default_value_t = 2)]
    pub noise: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "label")]
    pub label: String,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Runs one command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Explain(a) => cmd_explain(&a, out),
        Command::Baseline(a) => cmd_baseline(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

fn data_path(args: &DataArgs, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    args.data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| anyhow!(Error::Config { key: "data".into(), msg: "no dataset given by --data or config".into() }))
}

fn load_samples(path: &Path, fields: Vec<FieldSpec>, label: &str, time_span: usize) -> anyhow::Result<Vec<SequencedSample>> {
    let ingest = IngestConfig {
        fields,
        label_column: label.to_string(),
        time_span,
    };
    let outcome = load_csv(path, &ingest)?;
    for e in outcome.row_errors.iter().take(5) {
        warn!("line {}: {}", e.line, e.message);
    }
    if outcome.row_errors.len() > 5 {
        warn!("{} more row errors", outcome.row_errors.len() - 5);
    }
    info!(
        "loaded {} samples ({} entities dropped, {} missing cells)",
        outcome.samples.len(),
        outcome.dropped_entities,
        outcome.missing_cells
    );
    if outcome.samples.is_empty() {
        bail!("no usable samples in {}", path.display());
    }
    Ok(outcome.samples)
}

/// Train/test samples of the configured dataset, split by the run seed.
struct Prepared {
    train: Vec<SequencedSample>,
    test: Vec<SequencedSample>,
}

fn prepare(cfg: &RunConfig, path: &Path, time_span: usize, fields: Vec<FieldSpec>) -> anyhow::Result<Prepared> {
    let samples = load_samples(path, fields, &cfg.label, time_span)?;
    let s = split(&samples, cfg.train_ratio, cfg.seed)?;
    Ok(Prepared {
        train: s.train,
        test: s.test,
    })
}

fn require_fields(cfg: &RunConfig) -> anyhow::Result<Vec<FieldSpec>> {
    if cfg.fields.is_empty() {
        return Err(Error::Config {
            key: "fields".into(),
            msg: "no input fields configured".into(),
        }
        .into());
    }
    Ok(cfg.fields.clone())
}

fn train_on(cfg: &RunConfig, prep: &Prepared) -> anyhow::Result<(DeepCross64, Vec<EncodedSample>, String)> {
    let built = build_schema(&prep.train)?;
    if !built.dropped.is_empty() {
        warn!("dropped constant fields: {}", built.dropped.join(", "));
    }
    let train_set = normalize_all(&prep.train, &built.schema)?;
    let test_set = normalize_all(&prep.test, &built.schema)?;
    let outcome = train::<f64>(&train_set, &built.schema, &cfg.train_config()?)?;
    Ok((outcome.model, test_set, trace_csv(&outcome.trace)))
}

fn trace_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    ckpt.with_file_name(format!("{stem}.loss.csv"))
}

pub fn cmd_train(a: &TrainArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let path = data_path(&a.data, &cfg)?;
    let prep = prepare(&cfg, &path, cfg.time_span, require_fields(&cfg)?)?;
    let (model, _, trace) = train_on(&cfg, &prep)?;
    checkpoint::save(&model, &a.out)?;
    let tp = trace_path(&a.out);
    fs::write(&tp, trace).with_context(|| format!("writing {}", tp.display()))?;
    writeln!(out, "wrote {} and {}", a.out.display(), tp.display())?;
    Ok(())
}

/// Loads a checkpoint and the data it is applied to, refusing data whose
/// configured fields disagree with the model's.
fn load_for_model(
    data: &DataArgs,
    model_path: &Path,
    config: Option<&PathBuf>,
) -> anyhow::Result<(DeepCross64, RunConfig, Prepared)> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let model: DeepCross64 = checkpoint::load(model_path)?;
    if !cfg.fields.is_empty() {
        let names = model.schema.names();
        let kept: Vec<(String, FieldKind)> = cfg
            .fields
            .iter()
            .filter(|f| names.contains(&f.name.as_str()))
            .map(|f| (f.name.clone(), f.kind))
            .collect();
        checkpoint::check_schema(&model, &kept)?;
    }
    let path = data_path(data, &cfg)?;
    let fields = model.schema.fields.iter().map(|f| f.spec()).collect();
    let prep = prepare(&cfg, &path, model.config.time_span, fields)?;
    Ok((model, cfg, prep))
}

pub fn report_text(r: &EvalReport) -> String {
    format!("{r}\n\n{}\n{}\n", EvalReport::csv_header(), r.csv_row())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let (model, _, prep) = load_for_model(&a.data, &a.model, a.config.as_ref())?;
    let chosen: Vec<SequencedSample> = match a.split {
        SplitChoice::Train => prep.train,
        SplitChoice::Test => prep.test,
        SplitChoice::All => prep.train.into_iter().chain(prep.test).collect(),
    };
    let set = normalize_all(&chosen, &model.schema)?;
    let report = evaluate(&model, &set)?;
    write!(out, "{}", report_text(&report))?;
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let (model, cfg, prep) = load_for_model(&a.data, &a.model, a.config.as_ref())?;
    if a.static_ {
        let test = normalize_all(&prep.test, &model.schema)?;
        let patterns = static_explanation(&model, &test, cfg.epsilon)?;
        emit_reports(&a.out_dir, Some(&patterns), &[])?;
        writeln!(out, "wrote {} patterns to {}", patterns.len(), a.out_dir.join("patterns.csv").display())?;
        return Ok(());
    }
    let id = a.entity.as_deref().expect("clap requires --entity without --static");
    let sample = prep
        .train
        .iter()
        .chain(&prep.test)
        .find(|s| s.entity_id == id)
        .ok_or_else(|| anyhow!("unknown entity `{id}`"))?;
    let enc = normalize_all(std::slice::from_ref(sample), &model.schema)?;
    let explained = explain_sample(&model, &enc[0], cfg.top_k, cfg.epsilon)?;
    emit_reports(&a.out_dir, None, std::slice::from_ref(&explained))?;
    let mut text = format!("entity {id}: predicted class {}\n", explained.0.predicted_class);
    for e in &explained.0.entries {
        let _ = writeln!(text, "t={} channel={} [{}] {:.6}", e.time, e.channel, e.pattern.join(","), e.score);
    }
    write!(out, "{text}")?;
    Ok(())
}

fn zscore_inputs(sample: &SequencedSample, cols: &[String]) -> anyhow::Result<Vec<f64>> {
    let last = sample.steps.last().expect("samples have at least one step");
    cols.iter()
        .map(|c| {
            let i = sample.field_index(c).ok_or_else(|| anyhow!("missing field `{c}`"))?;
            match &last[i] {
                RawValue::Number(v) => Ok(v.unwrap_or(0.0)),
                _ => Err(anyhow!(Error::Config {
                    key: "zscore_fields".into(),
                    msg: format!("`{c}` is not numerical"),
                })),
            }
        })
        .collect()
}

pub fn cmd_baseline(a: &BaselineArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let path = data_path(&a.data, &cfg)?;
    let prep = prepare(&cfg, &path, cfg.time_span, require_fields(&cfg)?)?;
    let positive = cfg.classes - 1;
    let report = match a.which {
        BaselineKind::Zscore => {
            if cfg.zscore_fields.is_empty() {
                return Err(Error::Config {
                    key: "zscore_fields".into(),
                    msg: "the Z-Score baseline needs five indicator columns".into(),
                }
                .into());
            }
            let model = ZScoreModel::default();
            let mut predicted = Vec::new();
            let mut scores = Vec::new();
            for s in &prep.test {
                let (score, pos) = zscore_rate(&zscore_inputs(s, &cfg.zscore_fields)?, &model)?;
                scores.push(score);
                predicted.push(pos);
            }
            let actual: Vec<bool> = prep.test.iter().map(|s| s.label == positive).collect();
            EvalReport::from_predictions(&predicted, &actual, &scores)?
        }
        BaselineKind::Lr => {
            let built = build_schema(&prep.train)?;
            let train_set = normalize_all(&prep.train, &built.schema)?;
            let test_set = normalize_all(&prep.test, &built.schema)?;
            let lr_cfg = LrConfig {
                l1: cfg.lr_l1,
                lr: cfg.lr_rate,
                epochs: cfg.lr_epochs,
                seed: cfg.seed,
                ..LrConfig::default()
            };
            lr_evaluate(&train_set, &test_set, &built.schema, positive, &lr_cfg)?.1
        }
    };
    write!(out, "{}", report_text(&report))?;
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let n_raw = if cfg.fields.is_empty() { 3 } else { cfg.fields.len() };
    let samples = gen_synthetic_interaction(4, cfg.time_span, n_raw.saturating_sub(2), cfg.seed)?;
    let built = build_schema(&samples)?;
    let batch = normalize_all(&samples, &built.schema)?;
    let mut model = DeepCross64::new(built.schema, cfg.model_config(), cfg.seed)?;
    // attention weights start at zero; move every parameter off its initial
    // point so all paths carry gradient
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9c);
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let report = model_grad_check(&mut model, &batch[..2], cfg.q, cfg.lambda, a.step, a.tol)?;
    writeln!(
        out,
        "checked {} entries: max relative error {:.3e}, max absolute error {:.3e} (tolerance {:.1e})",
        report.entries_checked, report.max_rel_err, report.max_abs_err, report.tolerance
    )?;
    if let Some((name, i)) = &report.worst {
        writeln!(out, "worst entry: {name}[{i}]")?;
    }
    if !report.passed() {
        bail!("gradient check failed: {:.3e} > {:.1e}", report.max_rel_err, a.tol);
    }
    Ok(())
}

/// Rank widths for a model of rank `rank`: the configured widths, truncated or
/// extended by repeating the last one (or `d` when none are configured).
pub fn widths_for_rank(configured: &[usize], rank: usize, dim: usize) -> Vec<usize> {
    let fill = configured.last().copied().unwrap_or(dim);
    (0..rank.saturating_sub(1))
        .map(|i| configured.get(i).copied().unwrap_or(fill))
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let base = RunConfig::load(&a.config)?;
    let path = data_path(&a.data, &base)?;
    let fields = require_fields(&base)?;
    let axis = match a.axis {
        SweepAxis::Rank => "rank",
        SweepAxis::Timespan => "timespan",
    };
    let mut csv = format!("{axis},acc,auc\n");
    for &v in &a.values {
        let mut cfg = base.clone();
        match a.axis {
            SweepAxis::Rank => {
                if v == 0 {
                    return Err(Error::Config { key: "values".into(), msg: "rank must be at least 1".into() }.into());
                }
                cfg.rank_widths = widths_for_rank(&base.rank_widths, v, base.dim);
            }
            SweepAxis::Timespan => {
                cfg.time_span = v;
                if cfg.window.is_some_and(|s| s > v) {
                    cfg.window = None;
                }
            }
        }
        cfg.validate()?;
        let prep = prepare(&cfg, &path, cfg.time_span, fields.clone())?;
        let (model, test_set, _) = train_on(&cfg, &prep)?;
        let r = evaluate(&model, &test_set)?;
        info!("{axis} = {v}: acc {:.4}, auc {:.4}", r.acc, r.auc);
        let _ = writeln!(csv, "{v},{},{}", r.acc, r.auc);
    }
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => write!(out, "{csv}")?,
    }
    Ok(())
}

fn parse_wide_input(i: usize, s: &str) -> anyhow::Result<WideInput> {
    match s.split_once('=') {
        Some((period, path)) => Ok(WideInput {
            period: period.trim().parse().with_context(|| format!("bad period in `{s}`"))?,
            path: PathBuf::from(path),
        }),
        None => Ok(WideInput {
            period: i as i64,
            path: PathBuf::from(s),
        }),
    }
}

pub fn cmd_ingest(a: &IngestArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let fields: Vec<String> = require_fields(&cfg)?.into_iter().map(|f| f.name).collect();
    let inputs = a
        .inputs
        .iter()
        .enumerate()
        .map(|(i, s)| parse_wide_input(i, s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let rows = wide_to_long(&inputs, cfg.entity_column.as_deref(), &cfg.label, &fields, BufWriter::new(file))?;
    writeln!(out, "wrote {rows} rows to {}", a.out.display())?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let samples = gen_synthetic_interaction(a.samples, a.time_span, a.noise, a.seed)?;
    write_csv(&a.out, &samples, &a.label)?;
    writeln!(out, "wrote {} entities to {}", samples.len(), a.out.display())?;
    Ok(())
}
