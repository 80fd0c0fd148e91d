use std::time::Instant;

use crate::lm::SeqModel;
use crate::task::{DecodeStats, SeqRole, StopReason, TokenId};

use super::{rank_order, DecodeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamParams {
    pub beam_width: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    /// Select the final hypothesis by `logprob / (len + 1)` instead of the
    /// raw log-probability.
    pub length_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// Content tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    /// The selection score (length-normalized when requested).
    pub score: f64,
    /// `false` when no hypothesis produced EOS within `max_len` and the best
    /// unfinished one was returned instead.
    pub finished: bool,
    pub stats: DecodeStats,
}

pub(crate) fn final_score(logprob: f64, content_len: usize, length_norm: bool) -> f64 {
    if length_norm {
        logprob / (content_len + 1) as f64
    } else {
        logprob
    }
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logprob: f64,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    logprob: f64,
}

/// Standard left-to-right beam search from BOS.
///
/// Each round expands every live hypothesis by every non-BOS token and keeps
/// the `beam_width` best expansions; selected EOS expansions finish. Without
/// length normalization the search stops as soon as the best finished
/// hypothesis outscores every live one.
pub fn beam_search<M: SeqModel + ?Sized>(
    model: &M,
    source: &[TokenId],
    params: BeamParams,
) -> Result<BeamOutput, DecodeError> {
    let start = Instant::now();
    if params.beam_width == 0 || params.max_len == 0 {
        return Err(DecodeError::InvalidParams("beam_width and max_len must be >= 1".into()));
    }
    let vocab = model.vocab();
    vocab.check_content(SeqRole::Source, source)?;
    let (bos, eos) = (vocab.bos(), vocab.eos());

    let mut stats = DecodeStats::new(StopReason::MaxLen);
    let mut alive = vec![Hyp { tokens: Vec::new(), logprob: 0.0 }];
    let mut finished: Vec<Hyp> = Vec::new();

    for _ in 0..params.max_len {
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
        let mut candidates = Vec::with_capacity(alive.len() * vocab.size() as usize);
        for (parent, hyp) in alive.iter().enumerate() {
            let dist = model.next_distribution(source, &hyp.tokens);
            stats.forward_passes += 1;
            stats.positions_scored += 1;
            for token in (0..vocab.size()).filter(|&t| t != bos) {
                candidates.push(Candidate { parent, token, logprob: hyp.logprob + dist.log_prob(token) });
            }
        }
        candidates.sort_by(|a, b| {
            b.logprob
                .total_cmp(&a.logprob)
                .then_with(|| alive[a.parent].tokens.cmp(&alive[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(params.beam_width);
        for cand in candidates.into_iter().take(params.beam_width) {
            let parent = &alive[cand.parent];
            if cand.token == eos {
                finished.push(Hyp { tokens: parent.tokens.clone(), logprob: cand.logprob });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(cand.token);
                next.push(Hyp { tokens, logprob: cand.logprob });
            }
        }
        alive = next;
        stats.emitted_steps += 1;
    }
    if alive.is_empty() {
        stats.stop_reason = StopReason::EmptyBeam;
    }

    let pick = |pool: &[Hyp]| {
        pool.iter()
            .min_by(|a, b| {
                let sa = final_score(a.logprob, a.tokens.len(), params.length_norm);
                let sb = final_score(b.logprob, b.tokens.len(), params.length_norm);
                rank_order(sa, &a.tokens, sb, &b.tokens)
            })
            .cloned()
    };
    let (best, was_finished) = match pick(&finished) {
        Some(h) => (h, true),
        None => (pick(&alive).expect("beam never empties without finishing"), false),
    };
    stats.wall_time = start.elapsed();
    Ok(BeamOutput {
        score: final_score(best.logprob, best.tokens.len(), params.length_norm),
        tokens: best.tokens,
        logprob: best.logprob,
        finished: was_finished,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lm::{seq_logprob, UniformModel};
    use crate::task::Vocab;

    /// Every sequence with at most `max_len - 1` content tokens, scored with
    /// its EOS term.
    fn enumerate_best(model: &dyn SeqModel, source: &[TokenId], max_len: usize, norm: bool) -> (Vec<TokenId>, f64) {
        let content: Vec<TokenId> = model.vocab().content_tokens().collect();
        let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
        let mut all = vec![vec![]];
        for _ in 1..max_len {
            let mut grown = Vec::new();
            for seq in &frontier {
                for &t in &content {
                    let mut s = seq.clone();
                    s.push(t);
                    grown.push(s);
                }
            }
            all.extend(grown.iter().cloned());
            frontier = grown;
        }
        all.into_iter()
            .map(|s| {
                let lp = seq_logprob(model, source, &s, true).unwrap();
                let sc = final_score(lp, s.len(), norm);
                (s, sc)
            })
            .min_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0))
            .unwrap()
    }

    #[test]
    fn m1_matches_enumeration() {
        let m = fixtures::m1();
        for norm in [false, true] {
            let out = beam_search(&m, &[2], BeamParams { beam_width: 4, max_len: 3, length_norm: norm }).unwrap();
            let (best, score) = enumerate_best(&m, &[2], 3, norm);
            assert!(out.finished);
            assert_eq!(out.tokens, best, "norm={norm}");
            assert!((out.score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn m1_pinned() {
        // a -> b -> EOS: 0.7 * 0.6 * 0.6 = 0.252 beats a -> EOS (0.14) and EOS (0.1).
        let m = fixtures::m1();
        let out = beam_search(&m, &[2], BeamParams { beam_width: 4, max_len: 3, length_norm: false }).unwrap();
        assert_eq!(out.tokens, vec![2, 3]);
        assert!((out.logprob - 0.252f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_tie_break_is_deterministic() {
        let m = UniformModel::new(Vocab::with_size(6).unwrap());
        let a = beam_search(&m, &[2], BeamParams { beam_width: 3, max_len: 5, length_norm: false }).unwrap();
        assert_eq!(a.tokens, Vec::<TokenId>::new());
        let b = beam_search(&m, &[2], BeamParams { beam_width: 3, max_len: 5, length_norm: true }).unwrap();
        let c = beam_search(&m, &[2], BeamParams { beam_width: 3, max_len: 5, length_norm: true }).unwrap();
        assert_eq!(b.tokens, c.tokens);
        // All candidates tie under normalization; the shortest wins.
        assert_eq!(b.tokens, Vec::<TokenId>::new());
    }

    #[test]
    fn width_one_is_greedy() {
        let m = fixtures::random_ngram(17, 9, 2, 0.3);
        for src in [[2u32, 3], [4, 5], [6, 7]] {
            let out = beam_search(&m, &src, BeamParams { beam_width: 1, max_len: 30, length_norm: false }).unwrap();
            let vocab = m.vocab();
            let mut greedy = Vec::new();
            loop {
                let d = m.next_distribution(&src, &greedy);
                let mut best = vocab.eos();
                for t in vocab.content_tokens() {
                    if d.prob(t) > d.prob(best) {
                        best = t;
                    }
                }
                if best == vocab.eos() || greedy.len() == 29 {
                    break;
                }
                greedy.push(best);
            }
            if out.finished {
                assert_eq!(out.tokens, greedy);
            }
        }
    }

    #[test]
    fn unfinished_hypothesis_is_flagged() {
        let m = fixtures::m1();
        // One step is not enough unless EOS wins immediately; it does not.
        let out = beam_search(&m, &[2], BeamParams { beam_width: 1, max_len: 1, length_norm: false }).unwrap();
        assert!(!out.finished);
        assert_eq!(out.tokens, vec![2]);
    }

    #[test]
    fn rejects_zero_width() {
        let m = fixtures::m1();
        assert!(beam_search(&m, &[2], BeamParams { beam_width: 0, max_len: 3, length_norm: false }).is_err());
    }
}
