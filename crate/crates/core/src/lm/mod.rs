//! Conditional autoregressive sequence models.
//!
//! A model maps `(source, target history)` to a distribution over the next
//! target token. [`SeqModel::forced_pass`] scores a whole target sequence in a
//! single call, returning one distribution per position plus the one after the
//! last token; decoders count these calls as forward passes.

mod ngram;
mod spec;
mod table;
mod uniform;

use std::sync::Arc;

use thiserror::Error;

use crate::task::{SeqRole, TaskError, TokenId, Vocab};

pub use ngram::{NgramGenModel, Perturbation};
pub use spec::{ModelKind, ModelSpec};
pub use table::{ContextKey, TableModel};
pub use uniform::UniformModel;

/// Minimum probability of every non-BOS entry of a [`StepDistribution`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on row sums.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error(transparent)]
    Token(#[from] TaskError),
    #[error("probability row for {key} sums to {sum}")]
    UnnormalizedRow { key: String, sum: f64 },
    #[error("invalid probability row for {key}: {reason}")]
    InvalidRow { key: String, reason: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

/// Normalized next-token distribution at one target position.
///
/// BOS always has probability exactly zero; every other entry is at least
/// [`PROB_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    probs: Arc<[f64]>,
}

impl StepDistribution {
    /// Builds a distribution from non-negative weights: zeroes BOS,
    /// normalizes, then applies the probability floor.
    ///
    /// An all-zero weight vector yields the uniform-over-non-BOS row.
    pub fn from_weights(mut weights: Vec<f64>, bos: TokenId) -> Self {
        weights[bos as usize] = 0.0;
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            let n = weights.len() - 1;
            for (i, w) in weights.iter_mut().enumerate() {
                *w = if i == bos as usize { 0.0 } else { 1.0 / n as f64 };
            }
        } else {
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        apply_floor(&mut weights, bos);
        Self { probs: weights.into() }
    }

    /// Wraps an already-normalized row without touching it. Callers
    /// guarantee the invariants.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self { probs: probs.into() }
    }

    /// Applies only the floor to a row that is already normalized.
    pub(crate) fn floored(mut probs: Vec<f64>, bos: TokenId) -> Self {
        apply_floor(&mut probs, bos);
        Self { probs: probs.into() }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id as usize]
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.probs[id as usize].ln()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable content token; ties go to the smaller id.
    pub fn argmax_content(&self, vocab: &Vocab) -> TokenId {
        let mut best = None::<(TokenId, f64)>;
        for id in vocab.content_tokens() {
            let p = self.probs[id as usize];
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((id, p));
            }
        }
        best.expect("vocabulary has at least one content token").0
    }
}

/// Raises non-BOS entries below the floor and takes the mass from the rest.
/// Rows already above the floor are left bit-identical.
fn apply_floor(row: &mut [f64], bos: TokenId) {
    let bos = bos as usize;
    let low = row
        .iter()
        .enumerate()
        .filter(|&(i, &p)| i != bos && p < PROB_FLOOR)
        .count();
    if low == 0 {
        return;
    }
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, &p)| i != bos && p >= PROB_FLOOR)
        .map(|(_, &p)| p)
        .sum();
    let scale = (1.0 - low as f64 * PROB_FLOOR) / rest;
    for (i, p) in row.iter_mut().enumerate() {
        if i == bos {
            continue;
        }
        if *p < PROB_FLOOR {
            *p = PROB_FLOOR;
        } else {
            *p *= scale;
        }
    }
}

/// Distributions produced by scoring one target sequence.
///
/// Entry `t` is the next-token distribution given BOS and the first `t`
/// target tokens, so there are `target.len() + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedPass {
    pub distributions: Vec<StepDistribution>,
}

impl ForcedPass {
    /// `Σ_t log P(target_t | target_<t)`, plus the EOS term if requested.
    pub fn sum_logprob(&self, target: &[TokenId], eos: Option<TokenId>) -> f64 {
        debug_assert_eq!(self.distributions.len(), target.len() + 1);
        let mut total = 0.0;
        for (dist, &tok) in self.distributions.iter().zip(target) {
            total += dist.log_prob(tok);
        }
        if let Some(eos) = eos {
            total += self.distributions[target.len()].log_prob(eos);
        }
        total
    }

    pub fn positions(&self) -> usize {
        self.distributions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub name: String,
    pub vocab: Vocab,
    pub context_order: usize,
    pub seed: u64,
}

/// Conditional autoregressive model over a fixed vocabulary.
///
/// Implementations must be pure: the distribution for a history depends only
/// on `source` and that history.
pub trait SeqModel: Send + Sync {
    fn descriptor(&self) -> ModelDescriptor;

    fn vocab(&self) -> &Vocab;

    /// Next-token distribution after BOS followed by `history`. Inputs are
    /// assumed valid; use [`SeqModel::forced_pass`] for checked access.
    fn next_distribution(&self, source: &[TokenId], history: &[TokenId]) -> StepDistribution;

    fn forced_pass(&self, source: &[TokenId], target: &[TokenId]) -> Result<ForcedPass, LmError> {
        let vocab = self.vocab();
        vocab.check_content(SeqRole::Source, source)?;
        vocab.check_content(SeqRole::Target, target)?;
        let distributions = (0..=target.len())
            .map(|t| self.next_distribution(source, &target[..t]))
            .collect();
        Ok(ForcedPass { distributions })
    }
}

impl<M: SeqModel + ?Sized> SeqModel for Arc<M> {
    fn descriptor(&self) -> ModelDescriptor {
        (**self).descriptor()
    }

    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_distribution(&self, source: &[TokenId], history: &[TokenId]) -> StepDistribution {
        (**self).next_distribution(source, history)
    }

    fn forced_pass(&self, source: &[TokenId], target: &[TokenId]) -> Result<ForcedPass, LmError> {
        (**self).forced_pass(source, target)
    }
}

/// Log-probability of `target` given `source` in one forced pass.
pub fn seq_logprob<M: SeqModel + ?Sized>(
    model: &M,
    source: &[TokenId],
    target: &[TokenId],
    include_eos: bool,
) -> Result<f64, LmError> {
    let pass = model.forced_pass(source, target)?;
    let eos = include_eos.then(|| model.vocab().eos());
    Ok(pass.sum_logprob(target, eos))
}

/// The conditioning window of an order-`order` model: the last `order`
/// tokens of `BOS ++ history`.
pub fn context_window(bos: TokenId, history: &[TokenId], order: usize) -> Vec<TokenId> {
    if history.len() >= order {
        history[history.len() - order..].to_vec()
    } else {
        let mut ctx = Vec::with_capacity(history.len() + 1);
        ctx.push(bos);
        ctx.extend_from_slice(history);
        ctx
    }
}
