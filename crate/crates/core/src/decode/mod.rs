//! Decoders: unconstrained beam search, prefix-suffix guided span decoding
//! (PSGD) and dynamic beam allocation (DBA) for lexically constrained
//! decoding.

mod beam;
mod dba;
mod psgd;
mod score;

use std::cmp::Ordering;

use thiserror::Error;

use crate::lm::LmError;
use crate::task::{TaskError, TokenId, TsTask};

pub use beam::{beam_search, BeamOutput, BeamParams};
pub use dba::{dba_decode, dba_suggest, extract_span, DbaOutput, DbaParams};
pub use psgd::{psgd, psgd_run, psgd_two_pass, BestRecord, PsgdParams, PsgdRun};
pub use score::{length_norm_denominator, normalize_score, whole_sequence_score, ScoreConfig, Scoring};

/// Patience used when none is given.
pub const DEFAULT_PATIENCE: usize = 5;

/// Beam width used when none is given.
pub const DEFAULT_BEAM_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ConstraintsUnsatisfiable: no constraint-complete hypothesis finished within {max_len} steps")]
    ConstraintsUnsatisfiable { max_len: usize },
    #[error("MissingGoldSpan: task {0} has no gold span")]
    MissingGoldSpan(String),
    #[error("SearchSpaceTooLarge: {candidates} candidates exceed the limit of {limit}")]
    SearchSpaceTooLarge { candidates: f64, limit: f64 },
}

impl DecodeError {
    /// Short machine-readable name, used in result files.
    pub fn kind(&self) -> &'static str {
        match self {
            DecodeError::Task(TaskError::TokenOutOfRange { .. }) => "TokenOutOfRange",
            DecodeError::Task(TaskError::ReservedTokenInContent { .. }) => "ReservedTokenInContent",
            DecodeError::Task(_) => "InvalidTask",
            DecodeError::Lm(LmError::Token(TaskError::TokenOutOfRange { .. })) => "TokenOutOfRange",
            DecodeError::Lm(_) => "ModelError",
            DecodeError::InvalidParams(_) => "InvalidParams",
            DecodeError::ConstraintsUnsatisfiable { .. } => "ConstraintsUnsatisfiable",
            DecodeError::MissingGoldSpan(_) => "MissingGoldSpan",
            DecodeError::SearchSpaceTooLarge { .. } => "SearchSpaceTooLarge",
        }
    }
}

/// A span candidate under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub span_tokens: Vec<TokenId>,
    /// Sum of the log-probabilities of the span tokens given the prefix.
    pub span_logprob: f64,
    pub alive: bool,
}

impl Hypothesis {
    pub fn root() -> Self {
        Self { span_tokens: Vec::new(), span_logprob: 0.0, alive: true }
    }
}

/// Total order used for every tie: higher score first, then the shorter
/// sequence, then the lexicographically smaller one.
pub fn rank_order(a_score: f64, a: &[TokenId], b_score: f64, b: &[TokenId]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

/// `(t_r + pt, t_p + t_r + t_s)`: the decoding steps PSGD needs against a
/// decoder that generates the whole sequence.
pub fn count_theoretical_steps(task: &TsTask, patience: usize) -> Result<(usize, usize), DecodeError> {
    let span = task
        .gold_span
        .as_ref()
        .ok_or_else(|| DecodeError::MissingGoldSpan(task.task_id.clone()))?;
    let t_r = span.len();
    Ok((t_r + patience, task.prefix.len() + t_r + task.suffix.len()))
}

/// Default span cap: `2 * (len(source) + 4)`.
pub fn default_max_span_len(source_len: usize) -> usize {
    2 * (source_len + 4)
}
