//! `psgd`: dataset generation, decoding, evaluation and sweeps.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage or
//! configuration errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use psgd_core::decode::Scoring;
use psgd_core::harness::{
    self, evaluate, gen_dataset, mask_record_timing, read_json, read_jsonl, run_decoder, run_pt_sweep,
    run_ratio_sweep, to_jsonl, ConstraintSource, DecoderKind, GenConfig, HarnessError, SweepConfig, SweepOutput,
};
use psgd_core::lm::{ModelSpec, SeqModel};
use psgd_core::metrics::{csv_string, mask_timing_column, BenchRow};
use psgd_core::task::{ResultRecord, TsTask};

#[derive(Parser)]
#[command(name = "psgd", version, about = "Span suggestion under prefix and suffix constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task dataset and write the model spec next to it.
    Gen(GenArgs),
    /// Decode every task of a dataset with one decoder.
    Suggest(SuggestArgs),
    /// Score result records against their tasks.
    Eval(EvalArgs),
    /// Run PSGD over a grid of patience values.
    SweepPt(SweepArgs),
    /// Run several decoders and report per mask ratio.
    SweepRatio(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// GenConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Task JSONL output.
    #[arg(long)]
    out: PathBuf,
    /// Model spec output; defaults to `<out>.model.json`.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_tasks: Option<usize>,
    /// Comma-separated ratios in (0, 1).
    #[arg(long, value_delimiter = ',')]
    mask_ratio_list: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_constraint_source)]
    constraint_source: Option<ConstraintSource>,
}

/// Decoder settings shared by `suggest` and the sweeps. Flags override the
/// optional SweepConfig file.
#[derive(Args)]
struct DecodeArgs {
    /// SweepConfig JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_span_len: Option<usize>,
    /// `mean_logprob` or `paper_literal`.
    #[arg(long, value_parser = parse_scoring)]
    scoring: Option<Scoring>,
    #[arg(long)]
    include_eos_in_len: Option<bool>,
    #[arg(long)]
    dba_beam_width: Option<usize>,
    #[arg(long)]
    dba_max_len: Option<usize>,
    /// Run single-threaded so wall times are comparable.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Leave wall times out of the outputs.
    #[arg(long)]
    mask_timing: bool,
}

#[derive(Args)]
struct SuggestArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "psgd")]
    decoder: DecoderKind,
    /// Result JSONL output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    results: PathBuf,
    /// Metrics CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the wall-time column with `-`.
    #[arg(long)]
    mask_timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Metrics CSV output; falls back to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every result record here.
    #[arg(long)]
    results_out: Option<PathBuf>,
    /// Patience grid for `sweep-pt`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pt: Option<Vec<usize>>,
    /// Decoders for `sweep-ratio`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    decoders: Option<Vec<DecoderKind>>,
    #[command(flatten)]
    decode: DecodeArgs,
}

fn parse_constraint_source(s: &str) -> Result<ConstraintSource, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected gold_reference or machine_translation, got `{s}`"))
}

fn parse_scoring(s: &str) -> Result<Scoring, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("expected mean_logprob or paper_literal, got `{s}`"))
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Suggest(a) => cmd_suggest(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepPt(a) => cmd_sweep(a, true),
        Command::SweepRatio(a) => cmd_sweep(a, false),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config_err(format!("{what} file {} does not exist", path.display())))
    }
}

/// Reads an input that was already checked to exist; parse errors are
/// configuration errors.
fn load_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    require_file(path, what)?;
    read_json(path).map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("reading {what}"))))
}

fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, Failure> {
    require_file(path, what)?;
    read_jsonl(path).map_err(|e| Failure::Config(anyhow::Error::new(e).context(format!("reading {what}"))))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => harness::write_text(p, text).map_err(Failure::from),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .context("writing to stdout")
            .map_err(Failure::from),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let mut cfg: GenConfig = load_json(&a.config, "gen config")?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_tasks {
        cfg.n_tasks = v;
    }
    if let Some(v) = a.mask_ratio_list {
        cfg.mask_ratio_list = v;
    }
    if let Some(v) = a.constraint_source {
        cfg.constraint_source = v;
    }
    cfg.validate()?;
    let tasks = gen_dataset(&cfg)?;
    let model_out = a.model_out.unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".model.json");
        a.out.with_file_name(name)
    });
    harness::write_text(&a.out, &to_jsonl(&tasks))?;
    let spec = serde_json::to_string_pretty(&cfg.model).context("serializing model spec")?;
    harness::write_text(&model_out, &(spec + "\n"))?;
    eprintln!("wrote {} tasks to {} and the model spec to {}", tasks.len(), a.out.display(), model_out.display());
    Ok(())
}

fn sweep_config(d: &DecodeArgs) -> Result<SweepConfig, Failure> {
    let mut cfg: SweepConfig = match &d.config {
        Some(p) => load_json(p, "sweep config")?,
        None => SweepConfig::default(),
    };
    let p = &mut cfg.params;
    if let Some(v) = d.beam_width {
        p.psgd.beam_width = v;
    }
    if let Some(v) = d.patience {
        p.psgd.patience = v;
    }
    if let Some(v) = d.max_span_len {
        p.psgd.max_span_len = Some(v);
    }
    if let Some(v) = d.scoring {
        p.psgd.scoring = v;
    }
    if let Some(v) = d.include_eos_in_len {
        p.psgd.include_eos_in_len = v;
    }
    if let Some(v) = d.dba_beam_width {
        p.dba_beam_width = Some(v);
    }
    if let Some(v) = d.dba_max_len {
        p.dba_max_len = Some(v);
    }
    if d.timing {
        cfg.timing = true;
    }
    if let Some(v) = d.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = d.repetitions {
        cfg.repetitions = v;
    }
    if p.psgd.max_span_len == Some(0) {
        return Err(config_err("invalid config field `params.psgd.max_span_len`: must be >= 1"));
    }
    if p.dba_max_len == Some(0) {
        return Err(config_err("invalid config field `params.dba_max_len`: must be >= 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<Arc<dyn SeqModel>, Failure> {
    let spec: ModelSpec = load_json(path, "model spec")?;
    spec.build().map_err(|e| Failure::Config(anyhow::Error::new(e).context("building model")))
}

fn records_text(records: &[ResultRecord], mask_timing: bool) -> String {
    if mask_timing {
        to_jsonl(&mask_record_timing(records))
    } else {
        to_jsonl(records)
    }
}

fn csv_text(rows: &[BenchRow], mask_timing: bool) -> Result<String, Failure> {
    let text = csv_string(rows).context("formatting CSV")?;
    Ok(if mask_timing { mask_timing_column(&text) + "\n" } else { text })
}

fn cmd_suggest(a: SuggestArgs) -> Result<(), Failure> {
    require_file(&a.tasks, "tasks")?;
    let cfg = sweep_config(&a.decode)?;
    let model = load_model(&a.model)?;
    let tasks: Vec<TsTask> = load_jsonl(&a.tasks, "tasks")?;
    let records = run_decoder(model.as_ref(), &tasks, a.decoder, a.decoder.name(), &cfg.params, &cfg.run_options());
    let failed = records.iter().filter(|r| r.is_error()).count();
    emit(a.out.as_deref(), &records_text(&records, a.decode.mask_timing))?;
    eprintln!("decoded {} tasks with {} ({failed} failed)", records.len(), a.decoder.name());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    require_file(&a.tasks, "tasks")?;
    require_file(&a.results, "results")?;
    let tasks: Vec<TsTask> = load_jsonl(&a.tasks, "tasks")?;
    let records: Vec<ResultRecord> = load_jsonl(&a.results, "results")?;
    let rows = evaluate(&tasks, &records).map_err(|e| Failure::Runtime(e.into()))?;
    emit(a.out.as_deref(), &csv_text(&rows, a.mask_timing)?)
}

fn cmd_sweep(a: SweepArgs, pt_sweep: bool) -> Result<(), Failure> {
    require_file(&a.tasks, "tasks")?;
    let cfg = sweep_config(&a.decode)?;
    let model = load_model(&a.model)?;
    let tasks: Vec<TsTask> = load_jsonl(&a.tasks, "tasks")?;
    let opts = cfg.run_options();
    let out: SweepOutput = if pt_sweep {
        let pts = a.pt.clone().unwrap_or_else(|| cfg.pt_values.clone());
        if pts.is_empty() {
            return Err(config_err("invalid config field `pt_values`: give --pt or pt_values"));
        }
        run_pt_sweep(&tasks, model.as_ref(), &pts, &cfg.params, &opts)?
    } else {
        let decoders = a.decoders.clone().unwrap_or_else(|| cfg.decoders.clone());
        run_ratio_sweep(&tasks, model.as_ref(), &decoders, &cfg.params, &opts)?
    };
    if let Some(p) = &a.results_out {
        harness::write_text(p, &records_text(&out.records, a.decode.mask_timing))?;
    }
    let target = a.out.clone().or(cfg.output.clone());
    emit(target.as_deref(), &csv_text(&out.rows, a.decode.mask_timing)?)
}
