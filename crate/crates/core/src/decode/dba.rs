//! Lexically constrained beam search with dynamic beam allocation.
//!
//! Hypotheses track, per constraint phrase, whether it has been produced,
//! plus at most one phrase in progress. Candidates at each step are the
//! global top-k expansions, each hypothesis' best expansion and every
//! expansion that advances a constraint. Candidates are grouped into banks by
//! the number of constraint tokens met and the beam is split across non-empty
//! banks. EOS is only allowed once every constraint is met, and on the last
//! step every hypothesis that has met them all is closed with EOS.

use std::collections::HashSet;
use std::time::Instant;

use crate::lm::SeqModel;
use crate::task::{validate_task, DecodeStats, SeqRole, StopReason, Suggestion, TokenId, TsTask};

use super::beam::final_score;
use super::{default_max_span_len, rank_order, DecodeError};

#[derive(Debug, Clone, PartialEq)]
pub struct DbaParams {
    pub beam_width: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub constraints: Vec<Vec<TokenId>>,
    /// Select finished hypotheses by `logprob / (len + 1)`.
    pub length_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbaOutput {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub score: f64,
    pub stats: DecodeStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ConstraintState {
    met: Vec<bool>,
    /// `(constraint, tokens matched so far)` of the phrase being produced.
    progress: Option<(usize, usize)>,
}

impl ConstraintState {
    fn new(n: usize) -> Self {
        Self { met: vec![false; n], progress: None }
    }

    fn all_met(&self) -> bool {
        self.progress.is_none() && self.met.iter().all(|&m| m)
    }

    fn met_tokens(&self, constraints: &[Vec<TokenId>]) -> usize {
        let done: usize = constraints.iter().zip(&self.met).filter(|(_, &m)| m).map(|(c, _)| c.len()).sum();
        done + self.progress.map_or(0, |(_, j)| j)
    }

    fn advance(&self, token: TokenId, constraints: &[Vec<TokenId>]) -> Self {
        let mut next = self.clone();
        if let Some((c, j)) = self.progress {
            if constraints[c][j] == token {
                if j + 1 == constraints[c].len() {
                    next.met[c] = true;
                    next.progress = None;
                } else {
                    next.progress = Some((c, j + 1));
                }
                return next;
            }
            // Phrase broken off; its partial tokens no longer count.
            next.progress = None;
        }
        if let Some(c) = (0..constraints.len()).find(|&c| !next.met[c] && constraints[c][0] == token) {
            if constraints[c].len() == 1 {
                next.met[c] = true;
            } else {
                next.progress = Some((c, 1));
            }
        }
        next
    }

    /// Tokens that would make progress on some constraint.
    fn wanted(&self, constraints: &[Vec<TokenId>]) -> Vec<TokenId> {
        match self.progress {
            Some((c, j)) => vec![constraints[c][j]],
            None => {
                let mut out: Vec<TokenId> = constraints
                    .iter()
                    .zip(&self.met)
                    .filter(|(_, &m)| !m)
                    .map(|(c, _)| c[0])
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logprob: f64,
    state: ConstraintState,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    logprob: f64,
    bank: usize,
}

pub fn dba_decode<M: SeqModel + ?Sized>(
    model: &M,
    source: &[TokenId],
    params: &DbaParams,
) -> Result<DbaOutput, DecodeError> {
    let start = Instant::now();
    if params.beam_width == 0 || params.max_len == 0 {
        return Err(DecodeError::InvalidParams("beam_width and max_len must be >= 1".into()));
    }
    if params.constraints.iter().any(Vec::is_empty) {
        return Err(DecodeError::InvalidParams("constraint phrases must be non-empty".into()));
    }
    let vocab = model.vocab();
    vocab.check_content(SeqRole::Source, source)?;
    for c in &params.constraints {
        vocab.check_content(SeqRole::Target, c)?;
    }
    let (bos, eos) = (vocab.bos(), vocab.eos());
    let constraints = &params.constraints;
    let k = params.beam_width;

    let mut stats = DecodeStats::new(StopReason::MaxLen);
    let mut alive = vec![Hyp { tokens: Vec::new(), logprob: 0.0, state: ConstraintState::new(constraints.len()) }];
    let mut finished: Vec<Hyp> = Vec::new();

    for step in 0..params.max_len {
        if alive.is_empty() {
            stats.stop_reason = StopReason::EmptyBeam;
            break;
        }
        if !params.length_norm {
            let best_alive = alive.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if finished.iter().any(|f| f.logprob >= best_alive) {
                stats.stop_reason = StopReason::EmptyBeam;
                break;
            }
        }

        let dists: Vec<_> = alive
            .iter()
            .map(|h| {
                stats.forward_passes += 1;
                stats.positions_scored += 1;
                model.next_distribution(source, &h.tokens)
            })
            .collect();

        // Last step with constraints: hypotheses that met them all are
        // closed with EOS, nothing else can still finish.
        if step + 1 == params.max_len && !constraints.is_empty() {
            for (hyp, dist) in alive.iter().zip(&dists).filter(|(h, _)| h.state.all_met()) {
                finished.push(Hyp { logprob: hyp.logprob + dist.log_prob(eos), ..hyp.clone() });
            }
            stats.emitted_steps += 1;
            break;
        }

        let allowed = |parent: usize, token: TokenId| token != bos && (token != eos || alive[parent].state.all_met());
        let order = |a: &(usize, TokenId, f64), b: &(usize, TokenId, f64)| {
            b.2.total_cmp(&a.2)
                .then_with(|| alive[a.0].tokens.cmp(&alive[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        };

        let mut all: Vec<(usize, TokenId, f64)> = Vec::new();
        for (parent, hyp) in alive.iter().enumerate() {
            for token in (0..vocab.size()).filter(|&t| allowed(parent, t)) {
                all.push((parent, token, hyp.logprob + dists[parent].log_prob(token)));
            }
        }
        all.sort_by(order);

        let mut picked: HashSet<(usize, TokenId)> = HashSet::new();
        let mut pool: Vec<(usize, TokenId, f64)> = Vec::new();
        let mut add = |c: (usize, TokenId, f64)| {
            if picked.insert((c.0, c.1)) {
                pool.push(c);
            }
        };
        // Global top-k.
        for &c in all.iter().take(k) {
            add(c);
        }
        // Best expansion of every hypothesis.
        for parent in 0..alive.len() {
            if let Some(&c) = all.iter().find(|c| c.0 == parent) {
                add(c);
            }
        }
        // Constraint-advancing expansions.
        for (parent, hyp) in alive.iter().enumerate() {
            for token in hyp.state.wanted(constraints) {
                add((parent, token, hyp.logprob + dists[parent].log_prob(token)));
            }
        }

        let mut candidates: Vec<Candidate> = pool
            .into_iter()
            .map(|(parent, token, logprob)| {
                let bank = if token == eos {
                    alive[parent].state.met_tokens(constraints)
                } else {
                    alive[parent].state.advance(token, constraints).met_tokens(constraints)
                };
                Candidate { parent, token, logprob, bank }
            })
            .collect();
        candidates.sort_by(|a, b| order(&(a.parent, a.token, a.logprob), &(b.parent, b.token, b.logprob)));

        let selected = allocate(&candidates, k);
        let mut next = Vec::with_capacity(k);
        for cand in candidates.iter().zip(selected).filter(|(_, s)| *s).map(|(c, _)| c) {
            let parent = &alive[cand.parent];
            if cand.token == eos {
                finished.push(Hyp { tokens: parent.tokens.clone(), logprob: cand.logprob, state: parent.state.clone() });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(cand.token);
                next.push(Hyp { tokens, logprob: cand.logprob, state: parent.state.advance(cand.token, constraints) });
            }
        }
        alive = next;
        stats.emitted_steps += 1;
    }
    if alive.is_empty() {
        stats.stop_reason = StopReason::EmptyBeam;
    }
    stats.wall_time = start.elapsed();

    let best = finished
        .iter()
        .filter(|h| h.state.all_met())
        .min_by(|a, b| {
            let sa = final_score(a.logprob, a.tokens.len(), params.length_norm);
            let sb = final_score(b.logprob, b.tokens.len(), params.length_norm);
            rank_order(sa, &a.tokens, sb, &b.tokens)
        })
        .ok_or(DecodeError::ConstraintsUnsatisfiable { max_len: params.max_len })?;
    Ok(DbaOutput {
        score: final_score(best.logprob, best.tokens.len(), params.length_norm),
        tokens: best.tokens.clone(),
        logprob: best.logprob,
        stats,
    })
}

/// Marks which of the (score-sorted) candidates enter the beam.
///
/// Slots are split evenly over non-empty banks, remainders going to the
/// banks with more constraint tokens met; slots a bank cannot fill are handed
/// to other banks, highest first.
fn allocate(candidates: &[Candidate], k: usize) -> Vec<bool> {
    let n_banks = candidates.iter().map(|c| c.bank).max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_banks];
    for c in candidates {
        sizes[c.bank] += 1;
    }
    let banks: Vec<usize> = (0..n_banks).filter(|&b| sizes[b] > 0).collect();
    let mut quota = vec![0usize; n_banks];
    if !banks.is_empty() {
        let base = k / banks.len();
        let rem = k % banks.len();
        for (i, &b) in banks.iter().enumerate() {
            quota[b] = base + usize::from(i >= banks.len() - rem);
        }
    }
    let mut spare: usize = banks.iter().map(|&b| quota[b].saturating_sub(sizes[b])).sum();
    for &b in &banks {
        quota[b] = quota[b].min(sizes[b]);
    }
    while spare > 0 {
        let mut moved = false;
        for &b in banks.iter().rev() {
            if spare > 0 && quota[b] < sizes[b] {
                quota[b] += 1;
                spare -= 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let mut taken = vec![0usize; n_banks];
    candidates
        .iter()
        .map(|c| {
            let keep = taken[c.bank] < quota[c.bank];
            if keep {
                taken[c.bank] += 1;
            }
            keep
        })
        .collect()
}

fn find_first(haystack: &[TokenId], needle: &[TokenId]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn find_last(haystack: &[TokenId], needle: &[TokenId]) -> Option<usize> {
    haystack.windows(needle.len()).rposition(|w| w == needle)
}

/// Recovers the span from a full constrained output: the tokens between the
/// end of the first prefix occurrence and the start of the last suffix
/// occurrence. If those overlap or are out of order, the matched constraint
/// tokens are removed and the remainder returned.
pub fn extract_span(output: &[TokenId], prefix: &[TokenId], suffix: &[TokenId]) -> Vec<TokenId> {
    let prefix_at = if prefix.is_empty() { Some(0) } else { find_first(output, prefix) };
    let suffix_at = if suffix.is_empty() { Some(output.len()) } else { find_last(output, suffix) };
    if let (Some(p), Some(s)) = (prefix_at, suffix_at) {
        let end = p + prefix.len();
        if end <= s {
            return output[end..s].to_vec();
        }
    }
    let mut drop = vec![false; output.len()];
    if let Some(p) = prefix_at.filter(|_| !prefix.is_empty()) {
        drop[p..p + prefix.len()].iter_mut().for_each(|d| *d = true);
    }
    if let Some(s) = suffix_at.filter(|_| !suffix.is_empty()) {
        drop[s..s + suffix.len()].iter_mut().for_each(|d| *d = true);
    }
    output.iter().zip(drop).filter(|(_, d)| !d).map(|(&t, _)| t).collect()
}

/// Runs DBA with the task's prefix and suffix as phrase constraints and
/// extracts the span from its output.
///
/// `max_len = None` allows `t_p + t_s + 2 * (len(source) + 4) + 1` tokens.
pub fn dba_suggest<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    beam_width: usize,
    max_len: Option<usize>,
) -> Result<Suggestion, DecodeError> {
    let start = Instant::now();
    let task = validate_task(task.clone(), model.vocab())?;
    let constraints: Vec<Vec<TokenId>> =
        [&task.prefix, &task.suffix].into_iter().filter(|c| !c.is_empty()).cloned().collect();
    let max_len =
        max_len.unwrap_or_else(|| task.constraint_len() + default_max_span_len(task.source.len()) + 1);
    let params = DbaParams { beam_width, max_len, constraints, length_norm: true };
    let out = dba_decode(model, &task.source, &params)?;
    let span = extract_span(&out.tokens, &task.prefix, &task.suffix);
    let mut stats = out.stats;
    stats.wall_time = start.elapsed();
    Ok(Suggestion { span, whole_seq_score: out.score, stats })
}
