//! Exhaustive reference searches for the span objective.
//!
//! Both functions score candidates through
//! [`whole_sequence_score`](crate::decode::whole_sequence_score), the same
//! code path PSGD uses.

use crate::decode::{whole_sequence_score, DecodeError, ScoreConfig};
use crate::lm::SeqModel;
use crate::task::{validate_task, TokenId, TsTask};

/// Upper bound on the number of spans of the longest length enumerated.
pub const MAX_CANDIDATES: f64 = 1e6;

/// Upper bound on the path length accepted by [`exhaustive_best_prefix`].
pub const MAX_PATH_LEN: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_span: Vec<TokenId>,
    pub best_score: f64,
    pub candidates_evaluated: u64,
}

/// Scores every content span of length `0..=max_len` and returns the best.
///
/// Enumeration runs by length, then lexicographically, and only strict
/// improvements replace the incumbent, so ties resolve to the shorter and
/// then the lexicographically smaller span.
pub fn exhaustive_best_span<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    max_len: usize,
    cfg: ScoreConfig,
) -> Result<OracleResult, DecodeError> {
    let vocab = model.vocab();
    let task = validate_task(task.clone(), vocab)?;
    let content: Vec<TokenId> = vocab.content_tokens().collect();
    let space = (content.len() as f64).powi(max_len as i32);
    if space > MAX_CANDIDATES {
        return Err(DecodeError::SearchSpaceTooLarge { candidates: space, limit: MAX_CANDIDATES });
    }

    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut evaluated = 0u64;
    for len in 0..=max_len {
        let mut digits = vec![0usize; len];
        loop {
            let span: Vec<TokenId> = digits.iter().map(|&d| content[d]).collect();
            let (score, _) = whole_sequence_score(model, &task, &span, cfg)?;
            evaluated += 1;
            if best.as_ref().is_none_or(|(_, b)| score > *b) {
                best = Some((span, score));
            }
            if !increment(&mut digits, content.len()) {
                break;
            }
        }
    }
    let (best_span, best_score) = best.expect("the empty span is always evaluated");
    Ok(OracleResult { best_span, best_score, candidates_evaluated: evaluated })
}

/// Odometer step; returns `false` after the last combination.
fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Best cut point of a decoded path: `argmax_n score(prefix ++ path[..n] ++
/// suffix)` over `n = 0..=len(path)`, smaller `n` winning ties.
pub fn exhaustive_best_prefix<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    path: &[TokenId],
    cfg: ScoreConfig,
) -> Result<(usize, f64), DecodeError> {
    if path.len() > MAX_PATH_LEN {
        return Err(DecodeError::InvalidParams(format!("path longer than {MAX_PATH_LEN}")));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for n in 0..=path.len() {
        let (score, _) = whole_sequence_score(model, task, &path[..n], cfg)?;
        if n == 0 || score > best.1 {
            best = (n, score);
        }
    }
    Ok(best)
}
