//! Prefix-suffix guided span decoding.
//!
//! Only span tokens are generated. At step `n` every beam item is scored in
//! one forced pass over `prefix ++ span ++ suffix`: the pass yields both the
//! whole-sequence score (prefix, span and suffix terms plus EOS) and the
//! next-token distribution right after the span. The best `(item, step)`
//! seen so far is tracked globally and decoding stops once it has not
//! improved for `patience` consecutive steps.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::lm::{ForcedPass, SeqModel, StepDistribution};
use crate::task::{validate_task, DecodeStats, StopReason, Suggestion, TokenId, TsTask};

use super::score::{normalize_score, whole_sequence_score, ScoreConfig, Scoring};
use super::{default_max_span_len, rank_order, DecodeError, Hypothesis, DEFAULT_BEAM_WIDTH, DEFAULT_PATIENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsgdParams {
    pub beam_width: usize,
    pub patience: usize,
    /// `None` means `2 * (len(source) + 4)`.
    pub max_span_len: Option<usize>,
    pub scoring: Scoring,
    pub include_eos_in_len: bool,
}

impl Default for PsgdParams {
    fn default() -> Self {
        Self {
            beam_width: DEFAULT_BEAM_WIDTH,
            patience: DEFAULT_PATIENCE,
            max_span_len: None,
            scoring: Scoring::MeanLogprob,
            include_eos_in_len: false,
        }
    }
}

impl PsgdParams {
    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig { scoring: self.scoring, include_eos_in_len: self.include_eos_in_len }
    }

    pub fn resolved_max_span_len(&self, task: &TsTask) -> usize {
        self.max_span_len.unwrap_or_else(|| default_max_span_len(task.source.len()))
    }

    fn check(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 {
            return Err(DecodeError::InvalidParams("beam_width must be >= 1".into()));
        }
        if self.max_span_len == Some(0) {
            return Err(DecodeError::InvalidParams("max_span_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Best whole-sequence score seen over every beam item and step.
#[derive(Debug, Clone, PartialEq)]
pub struct BestRecord {
    pub best_score: f64,
    pub best_step: usize,
    pub best_span: Vec<TokenId>,
}

impl BestRecord {
    fn empty() -> Self {
        Self { best_score: f64::NEG_INFINITY, best_step: 0, best_span: Vec::new() }
    }

    /// Strict improvement, with the shorter-then-lexicographic tie-break.
    fn consider(&mut self, score: f64, span: &[TokenId], step: usize) -> bool {
        let improves = score > self.best_score
            || (score == self.best_score && rank_order(score, span, score, &self.best_span).is_lt());
        if improves {
            self.best_score = score;
            self.best_step = step;
            self.best_span = span.to_vec();
        }
        improves
    }
}

/// Everything a PSGD run produced, for callers that need more than the
/// suggestion.
#[derive(Debug, Clone, PartialEq)]
pub struct PsgdRun {
    pub suggestion: Suggestion,
    pub best: BestRecord,
    /// The last beam that was scored. With `beam_width = 1` its single item
    /// is the decoded path, every prefix of which was scored.
    pub final_beam: Vec<Hypothesis>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PassMode {
    /// Score and next-token distribution from the same pass.
    Shared,
    /// A second pass over `prefix ++ span` for the next-token distribution.
    Separate,
}

pub fn psgd<M: SeqModel + ?Sized>(model: &M, task: &TsTask, params: &PsgdParams) -> Result<Suggestion, DecodeError> {
    psgd_run(model, task, params).map(|run| run.suggestion)
}

pub fn psgd_run<M: SeqModel + ?Sized>(model: &M, task: &TsTask, params: &PsgdParams) -> Result<PsgdRun, DecodeError> {
    run(model, task, params, PassMode::Shared)
}

/// Reference variant that spends two forward passes per beam item and step.
/// Produces the same spans and scores as [`psgd`].
pub fn psgd_two_pass<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    params: &PsgdParams,
) -> Result<PsgdRun, DecodeError> {
    run(model, task, params, PassMode::Separate)
}

struct Expansion {
    parent: usize,
    token: TokenId,
    logprob: f64,
}

fn run<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    params: &PsgdParams,
    mode: PassMode,
) -> Result<PsgdRun, DecodeError> {
    let start = Instant::now();
    params.check()?;
    let vocab = model.vocab();
    let task = validate_task(task.clone(), vocab)?;
    let eos = vocab.eos();
    let cfg = params.score_config();
    let max_span = params.resolved_max_span_len(&task);
    let (t_p, t_s) = (task.prefix.len(), task.suffix.len());

    let mut stats = DecodeStats::new(StopReason::Patience);
    let mut best = BestRecord::empty();
    let mut beam = vec![Hypothesis::root()];
    let mut final_beam = Vec::new();
    let mut n = 0usize;

    loop {
        if n - best.best_step >= params.patience {
            stats.stop_reason = StopReason::Patience;
            break;
        }
        if n > max_span {
            stats.stop_reason = StopReason::MaxLen;
            break;
        }

        let mut expansions = Vec::new();
        for (parent, hyp) in beam.iter().enumerate() {
            let seq = task.fill(&hyp.span_tokens);
            let pass = model.forced_pass(&task.source, &seq)?;
            stats.forward_passes += 1;
            stats.positions_scored += pass.positions() as u64;

            let total = pass.sum_logprob(&seq, Some(eos));
            let score = normalize_score(total, t_p, n, t_s, cfg);
            best.consider(score, &hyp.span_tokens, n);

            let next = match mode {
                PassMode::Shared => next_after_span(&pass, t_p + n),
                PassMode::Separate => {
                    let head = model.forced_pass(&task.source, &seq[..t_p + n])?;
                    stats.forward_passes += 1;
                    stats.positions_scored += head.positions() as u64;
                    next_after_span(&head, t_p + n)
                }
            };
            if n < max_span {
                expansions.extend(vocab.content_tokens().map(|token| Expansion {
                    parent,
                    token,
                    logprob: hyp.span_logprob + next.log_prob(token),
                }));
            }
        }
        stats.emitted_steps += 1;

        let next_beam = select(&beam, expansions, params.beam_width);
        final_beam = std::mem::replace(&mut beam, next_beam);
        n += 1;
    }

    let whole_seq_score = if best.best_score.is_finite() {
        best.best_score
    } else {
        // Zero patience: nothing was scored, report the empty filling.
        let (score, pass) = whole_sequence_score(model, &task, &[], cfg)?;
        stats.forward_passes += 1;
        stats.positions_scored += pass.positions() as u64;
        best.best_score = score;
        score
    };
    stats.wall_time = start.elapsed();
    Ok(PsgdRun {
        suggestion: Suggestion { span: best.best_span.clone(), whole_seq_score, stats },
        best,
        final_beam,
    })
}

fn next_after_span(pass: &ForcedPass, position: usize) -> StepDistribution {
    pass.distributions[position].clone()
}

/// Keeps the `width` best expansions by span log-probability.
fn select(beam: &[Hypothesis], mut expansions: Vec<Expansion>, width: usize) -> Vec<Hypothesis> {
    expansions.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then_with(|| beam[a.parent].span_tokens.cmp(&beam[b.parent].span_tokens))
            .then_with(|| a.token.cmp(&b.token))
    });
    expansions
        .into_iter()
        .take(width)
        .map(|e| {
            let mut span_tokens = beam[e.parent].span_tokens.clone();
            span_tokens.push(e.token);
            Hypothesis { span_tokens, span_logprob: e.logprob, alive: true }
        })
        .collect()
}
