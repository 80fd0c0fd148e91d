//! Synthetic dataset generation and experiment sweeps.
//!
//! Datasets are built from a seeded model: a random source, a reference
//! target decoded by beam search, and one masked span per task. Sweeps run
//! decoders over a dataset and aggregate BLEU, forward passes and wall time
//! per `(decoder, mask ratio)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{beam_search, dba_suggest, psgd, psgd_two_pass, BeamParams, DecodeError, PsgdParams};
use crate::lm::{LmError, ModelKind, ModelSpec, SeqModel};
use crate::metrics::{aggregate, BenchRow, MetricsError, ScoredTask};
use crate::task::{validate_task, ResultRecord, Suggestion, TokenId, TsTask};

/// Attempts per task before giving up on a degenerate reference.
pub const MAX_RETRIES: usize = 100;

/// Share of rows re-drawn in the sibling model that produces machine
/// translation constraints.
pub const DEFAULT_PERTURB_RATE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("DegenerateTarget: task {task_index} at ratio {ratio} produced no reference of >= 2 tokens in {MAX_RETRIES} attempts")]
    DegenerateTarget { task_index: usize, ratio: f64 },
    #[error("UnknownTaskId: {0}")]
    UnknownTaskId(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
}

impl HarnessError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        HarnessError::Config { field: field.into(), message: message.into() }
    }

    /// Whether the failure comes from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. } | HarnessError::Lm(LmError::InvalidSpec(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    /// Mask the clean reference itself.
    GoldReference,
    /// Mask the output of a perturbed sibling model; only the full clean
    /// reference is kept as gold.
    MachineTranslation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LenRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub vocab_size: u32,
    /// Tasks per mask ratio.
    pub n_tasks: usize,
    pub source_len_range: LenRange,
    pub seed: u64,
    pub model: ModelSpec,
    pub mask_ratio_list: Vec<f64>,
    pub constraint_source: ConstraintSource,
    #[serde(default = "default_reference_beam")]
    pub reference_beam_width: usize,
    #[serde(default = "default_reference_max_len")]
    pub reference_max_len: usize,
    /// Seed of the sibling model in machine translation mode; defaults to a
    /// value derived from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_seed: Option<u64>,
    #[serde(default = "default_perturb_rate")]
    pub perturb_rate: f64,
}

fn default_reference_beam() -> usize {
    5
}

fn default_reference_max_len() -> usize {
    48
}

fn default_perturb_rate() -> f64 {
    DEFAULT_PERTURB_RATE
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.vocab_size < 3 {
            return Err(HarnessError::config("vocab_size", "needs at least one content token besides BOS and EOS"));
        }
        if self.model.vocab_size != self.vocab_size {
            return Err(HarnessError::config(
                "model.vocab_size",
                format!("{} does not match vocab_size {}", self.model.vocab_size, self.vocab_size),
            ));
        }
        if self.n_tasks == 0 {
            return Err(HarnessError::config("n_tasks", "must be >= 1"));
        }
        let r = self.source_len_range;
        if r.min < 1 || r.max < r.min {
            return Err(HarnessError::config("source_len_range", format!("need 1 <= min <= max, got {}..{}", r.min, r.max)));
        }
        if self.mask_ratio_list.is_empty() {
            return Err(HarnessError::config("mask_ratio_list", "must not be empty"));
        }
        if let Some(bad) = self.mask_ratio_list.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
            return Err(HarnessError::config("mask_ratio_list", format!("ratio {bad} outside (0, 1)")));
        }
        if self.reference_beam_width == 0 {
            return Err(HarnessError::config("reference_beam_width", "must be >= 1"));
        }
        if self.reference_max_len < 3 {
            return Err(HarnessError::config("reference_max_len", "must be >= 3"));
        }
        if !(0.0..=1.0).contains(&self.perturb_rate) {
            return Err(HarnessError::config("perturb_rate", "must lie in [0, 1]"));
        }
        if self.constraint_source == ConstraintSource::MachineTranslation && self.model.kind != ModelKind::NgramGen {
            return Err(HarnessError::config("constraint_source", "machine_translation needs an ngram_gen model"));
        }
        self.model.vocab()?;
        Ok(())
    }

    fn resolved_perturb_seed(&self) -> u64 {
        self.perturb_seed.unwrap_or(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5)
    }
}

/// `round(ratio * target_len)` clamped to `[1, target_len]`.
pub fn span_len_for(ratio: f64, target_len: usize) -> usize {
    ((ratio * target_len as f64).round() as usize).clamp(1, target_len.max(1))
}

/// Generates `n_tasks` tasks per mask ratio, ratios in config order. The
/// output depends only on the config: every task draws from its own ChaCha8
/// stream, so the thread count does not matter.
pub fn gen_dataset(cfg: &GenConfig) -> Result<Vec<TsTask>, HarnessError> {
    cfg.validate()?;
    let reference_model = cfg.model.build()?;
    let mt_model: Option<Arc<dyn SeqModel>> = match cfg.constraint_source {
        ConstraintSource::GoldReference => None,
        ConstraintSource::MachineTranslation => Some(Arc::new(
            cfg.model.build_ngram()?.perturbed_sibling(cfg.resolved_perturb_seed(), cfg.perturb_rate)?,
        )),
    };
    let jobs: Vec<(usize, f64, usize)> = cfg
        .mask_ratio_list
        .iter()
        .enumerate()
        .flat_map(|(ri, &r)| (0..cfg.n_tasks).map(move |i| (ri, r, i)))
        .collect();
    jobs.par_iter()
        .map(|&(ri, ratio, i)| gen_task(cfg, reference_model.as_ref(), mt_model.as_deref(), ri, ratio, i))
        .collect()
}

fn gen_task(
    cfg: &GenConfig,
    model: &dyn SeqModel,
    mt_model: Option<&dyn SeqModel>,
    ratio_index: usize,
    ratio: f64,
    index: usize,
) -> Result<TsTask, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((ratio_index as u64) << 32) | index as u64);
    let content: Vec<TokenId> = model.vocab().content_tokens().collect();
    let beam = BeamParams { beam_width: cfg.reference_beam_width, max_len: cfg.reference_max_len, length_norm: true };
    let decode = |m: &dyn SeqModel, src: &[TokenId]| -> Result<Option<Vec<TokenId>>, HarnessError> {
        let out = beam_search(m, src, beam)?;
        Ok((out.finished && out.tokens.len() >= 2).then_some(out.tokens))
    };
    for _ in 0..MAX_RETRIES {
        let src_len = rng.gen_range(cfg.source_len_range.min..=cfg.source_len_range.max);
        let source: Vec<TokenId> = (0..src_len).map(|_| content[rng.gen_range(0..content.len())]).collect();
        let Some(reference) = decode(model, &source)? else { continue };
        let masked = match mt_model {
            None => reference.clone(),
            Some(mt) => match decode(mt, &source)? {
                Some(t) => t,
                None => continue,
            },
        };
        let span_len = span_len_for(ratio, masked.len());
        let start = rng.gen_range(0..=masked.len() - span_len);
        let mut task = TsTask::new(
            format!("r{ratio:.2}-{index:05}"),
            source,
            masked[..start].to_vec(),
            masked[start + span_len..].to_vec(),
        );
        task.gold_full = Some(reference);
        if mt_model.is_none() {
            task.gold_span = Some(masked[start..start + span_len].to_vec());
        }
        task.mask_ratio = Some(ratio);
        return Ok(task);
    }
    Err(HarnessError::DegenerateTarget { task_index: index, ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Psgd,
    PsgdTwoPass,
    Dba,
}

impl DecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderKind::Psgd => "psgd",
            DecoderKind::PsgdTwoPass => "psgd_two_pass",
            DecoderKind::Dba => "dba",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "psgd" => Ok(DecoderKind::Psgd),
            "psgd_two_pass" => Ok(DecoderKind::PsgdTwoPass),
            "dba" => Ok(DecoderKind::Dba),
            other => Err(format!("unknown decoder `{other}` (expected psgd, psgd_two_pass or dba)")),
        }
    }
}

/// Parameters shared by every decoder in a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderParams {
    pub psgd: PsgdParams,
    /// DBA beam width; `None` uses the PSGD beam width.
    pub dba_beam_width: Option<usize>,
    pub dba_max_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Run on one thread so wall times are not skewed by contention.
    pub timing: bool,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    /// Decodes per task; wall time is averaged over them.
    pub repetitions: usize,
}

impl RunOptions {
    pub fn effective_threads(&self) -> usize {
        if self.timing {
            1
        } else {
            self.threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
                .max(1)
        }
    }
}

pub fn decode_one(
    model: &dyn SeqModel,
    task: &TsTask,
    decoder: DecoderKind,
    params: &DecoderParams,
) -> Result<Suggestion, DecodeError> {
    match decoder {
        DecoderKind::Psgd => psgd(model, task, &params.psgd),
        DecoderKind::PsgdTwoPass => psgd_two_pass(model, task, &params.psgd).map(|r| r.suggestion),
        DecoderKind::Dba => dba_suggest(
            model,
            task,
            params.dba_beam_width.unwrap_or(params.psgd.beam_width),
            params.dba_max_len,
        ),
    }
}

fn error_text(e: &DecodeError) -> String {
    let msg = e.to_string();
    let kind = e.kind();
    if msg.starts_with(kind) {
        msg
    } else {
        format!("{kind}: {msg}")
    }
}

/// Decodes every task, order preserved. Per-task failures become records
/// with an `error` field. `label` names the decoder in the records.
pub fn run_decoder(
    model: &dyn SeqModel,
    tasks: &[TsTask],
    decoder: DecoderKind,
    label: &str,
    params: &DecoderParams,
    opts: &RunOptions,
) -> Vec<ResultRecord> {
    let reps = opts.repetitions.max(1);
    let one = |task: &TsTask| {
        let mut first = match decode_one(model, task, decoder, params) {
            Ok(s) => s,
            Err(e) => return ResultRecord::failure(&task.task_id, label, error_text(&e)),
        };
        if reps > 1 {
            let mut total = first.stats.wall_time;
            for _ in 1..reps {
                if let Ok(s) = decode_one(model, task, decoder, params) {
                    total += s.stats.wall_time;
                }
            }
            first.stats.wall_time = total / reps as u32;
        }
        ResultRecord::success(&task.task_id, label, &first)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.effective_threads())
        .build()
        .expect("thread pool");
    pool.install(|| tasks.par_iter().map(one).collect())
}

/// Pairs each record with its task: span BLEU against `gold_span` when the
/// task has one, otherwise full-sequence BLEU of `prefix ++ span ++ suffix`
/// against `gold_full`.
pub fn score_records(tasks: &[TsTask], records: &[ResultRecord]) -> Result<Vec<ScoredTask>, HarnessError> {
    let by_id: HashMap<&str, &TsTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    records
        .iter()
        .map(|r| {
            let task = by_id.get(r.task_id.as_str()).ok_or_else(|| HarnessError::UnknownTaskId(r.task_id.clone()))?;
            let span = r.span.clone().unwrap_or_default();
            let (candidate, reference) = match (&task.gold_span, &task.gold_full) {
                (Some(gold), _) => (span, gold.clone()),
                (None, Some(full)) => (task.fill(&span), full.clone()),
                (None, None) => return Err(DecodeError::MissingGoldSpan(task.task_id.clone()).into()),
            };
            Ok(ScoredTask {
                decoder: r.decoder.clone(),
                mask_ratio: task.mask_ratio.unwrap_or(0.0),
                candidate,
                reference,
                forward_passes: r.forward_passes,
                emitted_steps: r.emitted_steps,
                wall_time: r.wall_time_us.map(Duration::from_micros),
            })
        })
        .collect()
}

pub fn evaluate(tasks: &[TsTask], records: &[ResultRecord]) -> Result<Vec<BenchRow>, HarnessError> {
    Ok(aggregate(&score_records(tasks, records)?)?)
}

/// Output of a sweep: every result record plus the aggregated rows.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<ResultRecord>,
    pub rows: Vec<BenchRow>,
}

/// Runs PSGD once per patience value. Decoders are labelled `psgd_pt{pt}`.
pub fn run_pt_sweep(
    tasks: &[TsTask],
    model: &dyn SeqModel,
    pt_values: &[usize],
    params: &DecoderParams,
    opts: &RunOptions,
) -> Result<SweepOutput, HarnessError> {
    if pt_values.is_empty() {
        return Err(HarnessError::config("pt_values", "must not be empty"));
    }
    if let Some(t) = tasks.iter().find(|t| t.gold_span.is_none()) {
        return Err(DecodeError::MissingGoldSpan(t.task_id.clone()).into());
    }
    let mut records = Vec::new();
    for &pt in pt_values {
        let mut p = *params;
        p.psgd.patience = pt;
        records.extend(run_decoder(model, tasks, DecoderKind::Psgd, &format!("psgd_pt{pt}"), &p, opts));
    }
    let rows = evaluate(tasks, &records)?;
    Ok(SweepOutput { records, rows })
}

/// Runs each decoder over the whole dataset; rows are split by the tasks'
/// mask ratios.
pub fn run_ratio_sweep(
    tasks: &[TsTask],
    model: &dyn SeqModel,
    decoders: &[DecoderKind],
    params: &DecoderParams,
    opts: &RunOptions,
) -> Result<SweepOutput, HarnessError> {
    if decoders.is_empty() {
        return Err(HarnessError::config("decoders", "must not be empty"));
    }
    let mut records = Vec::new();
    for &d in decoders {
        records.extend(run_decoder(model, tasks, d, d.name(), params, opts));
    }
    let rows = evaluate(tasks, &records)?;
    Ok(SweepOutput { records, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_decoders")]
    pub decoders: Vec<DecoderKind>,
    #[serde(default)]
    pub params: DecoderParams,
    /// Patience grid for the pt sweep.
    #[serde(default)]
    pub pt_values: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_decoders() -> Vec<DecoderKind> {
    vec![DecoderKind::Psgd, DecoderKind::Dba]
}

fn default_repetitions() -> usize {
    1
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            decoders: default_decoders(),
            params: DecoderParams::default(),
            pt_values: Vec::new(),
            repetitions: 1,
            timing: false,
            threads: None,
            output: None,
        }
    }
}

impl SweepConfig {
    pub fn run_options(&self) -> RunOptions {
        RunOptions { timing: self.timing, threads: self.threads, repetitions: self.repetitions }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.decoders.is_empty() {
            return Err(HarnessError::config("decoders", "must not be empty"));
        }
        if self.params.psgd.beam_width == 0 {
            return Err(HarnessError::config("params.psgd.beam_width", "must be >= 1"));
        }
        if self.params.dba_beam_width == Some(0) {
            return Err(HarnessError::config("params.dba_beam_width", "must be >= 1"));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::config("repetitions", "must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(HarnessError::config("threads", "must be >= 1"));
        }
        Ok(())
    }
}

/// Checks every task against the model's vocabulary.
pub fn validate_tasks(tasks: Vec<TsTask>, model: &dyn SeqModel) -> Result<Vec<TsTask>, DecodeError> {
    tasks.into_iter().map(|t| validate_task(t, model.vocab()).map_err(DecodeError::from)).collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|source| HarnessError::Json { path: path.to_path_buf(), line: i + 1, source })?;
        out.push(item);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable"));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(text.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| {
        let line = source.line();
        HarnessError::Json { path: path.to_path_buf(), line, source }
    })
}

/// Result records with the wall time removed, for run-to-run comparison.
pub fn mask_record_timing(records: &[ResultRecord]) -> Vec<ResultRecord> {
    records.iter().cloned().map(|r| ResultRecord { wall_time_us: None, ..r }).collect()
}
