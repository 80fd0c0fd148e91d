//! Whole-sequence scoring used both by PSGD's stopping rule and by the
//! exhaustive oracle.

use serde::{Deserialize, Serialize};

use crate::lm::{ForcedPass, SeqModel};
use crate::task::{TokenId, TsTask};

use super::DecodeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// `Σ log f / L`.
    #[default]
    MeanLogprob,
    /// `log(Π f / L) = Σ log f − log L`.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub scoring: Scoring,
    /// Count the EOS position in the length denominator.
    pub include_eos_in_len: bool,
}

/// `L = t_p + n + t_s (+1)`, never below one so that an entirely empty
/// sequence still has a finite score.
pub fn length_norm_denominator(t_p: usize, n: usize, t_s: usize, include_eos: bool) -> usize {
    (t_p + n + t_s + usize::from(include_eos)).max(1)
}

/// Turns the summed log-probability (EOS term included) of
/// `prefix ++ span ++ suffix` into the stopping-criterion score.
pub fn normalize_score(total_logprob: f64, t_p: usize, n: usize, t_s: usize, cfg: ScoreConfig) -> f64 {
    let len = length_norm_denominator(t_p, n, t_s, cfg.include_eos_in_len) as f64;
    match cfg.scoring {
        Scoring::MeanLogprob => total_logprob / len,
        Scoring::PaperLiteral => total_logprob - len.ln(),
    }
}

/// Scores `prefix ++ span ++ suffix` with one forced pass and returns the
/// pass as well.
pub fn whole_sequence_score<M: SeqModel + ?Sized>(
    model: &M,
    task: &TsTask,
    span: &[TokenId],
    cfg: ScoreConfig,
) -> Result<(f64, ForcedPass), DecodeError> {
    let seq = task.fill(span);
    let pass = model.forced_pass(&task.source, &seq)?;
    let total = pass.sum_logprob(&seq, Some(model.vocab().eos()));
    let score = normalize_score(total, task.prefix.len(), span.len(), task.suffix.len(), cfg);
    Ok((score, pass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denominators() {
        assert_eq!(length_norm_denominator(2, 1, 3, false), 6);
        assert_eq!(length_norm_denominator(2, 1, 3, true), 7);
        assert_eq!(length_norm_denominator(0, 0, 0, false), 1);
    }

    #[test]
    fn variants() {
        let mean = ScoreConfig::default();
        let lit = ScoreConfig { scoring: Scoring::PaperLiteral, include_eos_in_len: false };
        assert!((normalize_score(-6.0, 1, 1, 1, mean) + 2.0).abs() < 1e-15);
        assert!((normalize_score(-6.0, 1, 1, 1, lit) - (-6.0 - 3f64.ln())).abs() < 1e-15);
    }
}
