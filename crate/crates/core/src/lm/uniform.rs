use crate::task::{TokenId, Vocab};

use super::{ModelDescriptor, SeqModel, StepDistribution};

/// Every position predicts the uniform distribution over non-BOS ids.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocab,
    row: StepDistribution,
}

impl UniformModel {
    pub fn new(vocab: Vocab) -> Self {
        let n = vocab.size() as usize;
        let p = 1.0 / (n - 1) as f64;
        let mut probs = vec![p; n];
        probs[vocab.bos() as usize] = 0.0;
        let row = StepDistribution::from_normalized(probs);
        Self { vocab, row }
    }
}

impl SeqModel for UniformModel {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            name: "uniform".into(),
            vocab: self.vocab.clone(),
            context_order: 1,
            seed: 0,
        }
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_distribution(&self, _source: &[TokenId], _history: &[TokenId]) -> StepDistribution {
        self.row.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::seq_logprob;

    #[test]
    fn five_token_vocab() {
        let m = UniformModel::new(Vocab::with_size(5).unwrap());
        let pass = m.forced_pass(&[2], &[2, 3, 4]).unwrap();
        assert_eq!(pass.positions(), 4);
        for d in &pass.distributions {
            assert_eq!(d.probs(), &[0.0, 0.25, 0.25, 0.25, 0.25]);
        }
        let lp = seq_logprob(&m, &[2], &[2, 3, 4], true).unwrap();
        assert!((lp - 4.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn minimal_vocab() {
        let m = UniformModel::new(Vocab::with_size(3).unwrap());
        let d = m.next_distribution(&[], &[]);
        assert_eq!(d.probs(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn empty_target() {
        let m = UniformModel::new(Vocab::with_size(5).unwrap());
        assert_eq!(m.forced_pass(&[3], &[]).unwrap().positions(), 1);
        assert_eq!(seq_logprob(&m, &[3], &[], false).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_tokens() {
        let m = UniformModel::new(Vocab::with_size(5).unwrap());
        assert!(m.forced_pass(&[5], &[]).is_err());
        assert!(m.forced_pass(&[2], &[1]).is_err());
    }
}
