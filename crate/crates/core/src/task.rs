//! Domain types shared by every decoder: vocabularies, suggestion tasks,
//! decoder answers and their statistics, plus the JSONL record layouts.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a model vocabulary.
pub type TokenId = u32;

/// Which sequence of a task a token belongs to. Used for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqRole {
    Source,
    Target,
    Prefix,
    Suffix,
    Span,
    GoldFull,
}

impl fmt::Display for SeqRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SeqRole::Source => "source",
            SeqRole::Target => "target",
            SeqRole::Prefix => "prefix",
            SeqRole::Suffix => "suffix",
            SeqRole::Span => "span",
            SeqRole::GoldFull => "gold_full",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("token {id} in {role} is out of range for vocabulary of size {size}")]
    TokenOutOfRange { role: SeqRole, id: TokenId, size: u32 },
    #[error("reserved token {id} (BOS/EOS) found in {role}")]
    ReservedTokenInContent { role: SeqRole, id: TokenId },
    #[error("gold_full does not equal prefix ++ gold_span ++ suffix")]
    InconsistentGold,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

/// Vocabulary description. Content tokens are every id other than BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: u32,
    bos: TokenId,
    eos: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    surfaces: Option<Vec<String>>,
}

impl Vocab {
    pub fn new(size: u32, bos: TokenId, eos: TokenId) -> Result<Self, TaskError> {
        if size < 3 {
            return Err(TaskError::InvalidVocab(format!("size {size} < 3")));
        }
        if bos == eos {
            return Err(TaskError::InvalidVocab("bos_id == eos_id".into()));
        }
        if bos >= size || eos >= size {
            return Err(TaskError::InvalidVocab("special id >= size".into()));
        }
        Ok(Self { size, bos, eos, surfaces: None })
    }

    /// Vocabulary with the conventional layout BOS = 0, EOS = 1.
    pub fn with_size(size: u32) -> Result<Self, TaskError> {
        Self::new(size, 0, 1)
    }

    pub fn with_surfaces(mut self, surfaces: Vec<String>) -> Result<Self, TaskError> {
        if surfaces.len() != self.size as usize {
            return Err(TaskError::InvalidVocab(format!(
                "{} surfaces for vocabulary of size {}",
                surfaces.len(),
                self.size
            )));
        }
        self.surfaces = Some(surfaces);
        Ok(self)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos
    }

    /// All content token ids in ascending order.
    pub fn content_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(move |&id| !self.is_reserved(id))
    }

    pub fn content_count(&self) -> usize {
        self.size as usize - 2
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.as_ref()?.get(id as usize).map(String::as_str)
    }

    /// Checks that `seq` only holds in-range content tokens.
    pub fn check_content(&self, role: SeqRole, seq: &[TokenId]) -> Result<(), TaskError> {
        for &id in seq {
            if id >= self.size {
                return Err(TaskError::TokenOutOfRange { role, id, size: self.size });
            }
            if self.is_reserved(id) {
                return Err(TaskError::ReservedTokenInContent { role, id });
            }
        }
        Ok(())
    }
}

/// One translation-suggestion problem: fill the gap between `prefix` and
/// `suffix` given `source`.
///
/// Sequences are content-only; BOS/EOS are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsTask {
    pub task_id: String,
    pub source: Vec<TokenId>,
    pub prefix: Vec<TokenId>,
    pub suffix: Vec<TokenId>,
    pub gold_span: Option<Vec<TokenId>>,
    pub gold_full: Option<Vec<TokenId>>,
    /// Fraction of the target that was masked when the task was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
}

impl TsTask {
    pub fn new(
        task_id: impl Into<String>,
        source: Vec<TokenId>,
        prefix: Vec<TokenId>,
        suffix: Vec<TokenId>,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            source,
            prefix,
            suffix,
            gold_span: None,
            gold_full: None,
            mask_ratio: None,
        }
    }

    pub fn with_gold_span(mut self, span: Vec<TokenId>) -> Self {
        let mut full = self.prefix.clone();
        full.extend_from_slice(&span);
        full.extend_from_slice(&self.suffix);
        self.gold_span = Some(span);
        self.gold_full = Some(full);
        self
    }

    /// `prefix ++ span ++ suffix`.
    pub fn fill(&self, span: &[TokenId]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.prefix.len() + span.len() + self.suffix.len());
        out.extend_from_slice(&self.prefix);
        out.extend_from_slice(span);
        out.extend_from_slice(&self.suffix);
        out
    }

    pub fn constraint_len(&self) -> usize {
        self.prefix.len() + self.suffix.len()
    }
}

/// Returns the task unchanged if every sequence is made of in-range content
/// tokens and the gold fields agree with each other.
pub fn validate_task(task: TsTask, vocab: &Vocab) -> Result<TsTask, TaskError> {
    vocab.check_content(SeqRole::Source, &task.source)?;
    vocab.check_content(SeqRole::Prefix, &task.prefix)?;
    vocab.check_content(SeqRole::Suffix, &task.suffix)?;
    if let Some(span) = &task.gold_span {
        vocab.check_content(SeqRole::Span, span)?;
    }
    if let Some(full) = &task.gold_full {
        vocab.check_content(SeqRole::GoldFull, full)?;
    }
    if let (Some(span), Some(full)) = (&task.gold_span, &task.gold_full) {
        if task.fill(span) != *full {
            return Err(TaskError::InconsistentGold);
        }
    }
    Ok(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxLen,
    EmptyBeam,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxLen => "max_len",
            StopReason::EmptyBeam => "empty_beam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStats {
    /// Model invocations (one per hypothesis per step).
    pub forward_passes: u64,
    /// Target positions evaluated across all invocations.
    pub positions_scored: u64,
    /// Decoding iterations executed.
    pub emitted_steps: u64,
    pub stop_reason: StopReason,
    pub wall_time: Duration,
}

impl DecodeStats {
    pub(crate) fn new(stop_reason: StopReason) -> Self {
        Self {
            forward_passes: 0,
            positions_scored: 0,
            emitted_steps: 0,
            stop_reason,
            wall_time: Duration::ZERO,
        }
    }
}

/// A decoder's answer to a [`TsTask`].
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub span: Vec<TokenId>,
    /// Log-domain score of `prefix ++ span ++ suffix` under the decoder's
    /// selection criterion.
    pub whole_seq_score: f64,
    pub stats: DecodeStats,
}

/// One line of a result JSONL file.
///
/// Successful decodes fill every optional field; failures carry only
/// `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub decoder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_passes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_scored: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitted_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn success(task_id: &str, decoder: &str, suggestion: &Suggestion) -> Self {
        let stats = &suggestion.stats;
        Self {
            task_id: task_id.to_string(),
            decoder: decoder.to_string(),
            span: Some(suggestion.span.clone()),
            score: Some(suggestion.whole_seq_score),
            forward_passes: Some(stats.forward_passes),
            positions_scored: Some(stats.positions_scored),
            emitted_steps: Some(stats.emitted_steps),
            stop_reason: Some(stats.stop_reason),
            wall_time_us: Some(stats.wall_time.as_micros() as u64),
            error: None,
        }
    }

    pub fn failure(task_id: &str, decoder: &str, error: impl Into<String>) -> Self {
        Self {
            task_id: task_id.to_string(),
            decoder: decoder.to_string(),
            span: None,
            score: None,
            forward_passes: None,
            positions_scored: None,
            emitted_steps: None,
            stop_reason: None,
            wall_time_us: None,
            error: Some(error.into()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}
