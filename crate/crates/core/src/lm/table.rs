use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::task::{TokenId, Vocab};

use super::{context_window, LmError, ModelDescriptor, SeqModel, StepDistribution, NORM_TOLERANCE};
use super::UniformModel;

/// Lookup key of a table row: the full source and the conditioning window.
///
/// Textual form is `src:2,3|ctx:0,2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey {
    pub source: Vec<TokenId>,
    pub context: Vec<TokenId>,
}

impl ContextKey {
    pub fn new(source: Vec<TokenId>, context: Vec<TokenId>) -> Self {
        Self { source, context }
    }
}

fn join(ids: &[TokenId]) -> String {
    ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<TokenId>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<TokenId>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "src:{}|ctx:{}", join(&self.source), join(&self.context))
    }
}

impl FromStr for ContextKey {
    type Err = LmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: String| LmError::InvalidSpec(format!("table key {s:?}: {why}"));
        let (src, ctx) = s.split_once('|').ok_or_else(|| bad("missing '|'".into()))?;
        let src = src.strip_prefix("src:").ok_or_else(|| bad("missing 'src:'".into()))?;
        let ctx = ctx.strip_prefix("ctx:").ok_or_else(|| bad("missing 'ctx:'".into()))?;
        Ok(Self { source: split(src).map_err(bad)?, context: split(ctx).map_err(bad)? })
    }
}

/// Explicit lookup-table model conditioned on the full source and the last
/// `order` target tokens. Missing rows fall back to the uniform model.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocab,
    order: usize,
    rows: HashMap<ContextKey, StepDistribution>,
    fallback: UniformModel,
}

impl TableModel {
    pub fn new(
        vocab: Vocab,
        order: usize,
        table: impl IntoIterator<Item = (ContextKey, Vec<f64>)>,
    ) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::InvalidSpec("order must be >= 1".into()));
        }
        let size = vocab.size() as usize;
        let mut rows = HashMap::new();
        for (key, row) in table {
            let invalid = |reason: String| LmError::InvalidRow { key: key.to_string(), reason };
            if row.len() != size {
                return Err(invalid(format!("length {} != vocab size {size}", row.len())));
            }
            if key.context.is_empty() || key.context.len() > order {
                return Err(invalid(format!("context length must be in 1..={order}")));
            }
            if key.context.iter().chain(&key.source).any(|&t| t >= vocab.size()) {
                return Err(invalid("token out of range".into()));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(invalid("negative or non-finite entry".into()));
            }
            if row[vocab.bos() as usize] != 0.0 {
                return Err(invalid("BOS must have probability 0".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORM_TOLERANCE {
                return Err(LmError::UnnormalizedRow { key: key.to_string(), sum });
            }
            let dist = StepDistribution::floored(row, vocab.bos());
            rows.insert(key, dist);
        }
        let fallback = UniformModel::new(vocab.clone());
        Ok(Self { vocab, order, rows, fallback })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> impl Iterator<Item = (&ContextKey, &StepDistribution)> {
        self.rows.iter()
    }

    pub fn row(&self, key: &ContextKey) -> Option<&StepDistribution> {
        self.rows.get(key)
    }
}

impl SeqModel for TableModel {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            name: "table".into(),
            vocab: self.vocab.clone(),
            context_order: self.order,
            seed: 0,
        }
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_distribution(&self, source: &[TokenId], history: &[TokenId]) -> StepDistribution {
        let key = ContextKey {
            source: source.to_vec(),
            context: context_window(self.vocab.bos(), history, self.order),
        };
        match self.rows.get(&key) {
            Some(row) => row.clone(),
            None => self.fallback.next_distribution(source, history),
        }
    }
}
