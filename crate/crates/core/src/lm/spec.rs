use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::task::Vocab;

use super::{ContextKey, LmError, NgramGenModel, Perturbation, SeqModel, TableModel, UniformModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Uniform,
    Table,
    NgramGen,
}

/// JSON model description. BOS and EOS are always ids 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub vocab_size: u32,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    #[serde(default)]
    pub table: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_rate: Option<f64>,
}

fn default_order() -> usize {
    1
}

fn default_concentration() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn ngram_gen(vocab_size: u32, order: usize, seed: u64, concentration: f64) -> Self {
        Self {
            kind: ModelKind::NgramGen,
            vocab_size,
            order,
            seed,
            concentration,
            table: None,
            perturb_seed: None,
            perturb_rate: None,
        }
    }

    pub fn uniform(vocab_size: u32) -> Self {
        Self {
            kind: ModelKind::Uniform,
            vocab_size,
            order: 1,
            seed: 0,
            concentration: 1.0,
            table: None,
            perturb_seed: None,
            perturb_rate: None,
        }
    }

    pub fn from_table(model: &TableModel) -> Self {
        let table = model
            .rows()
            .map(|(k, row)| (k.to_string(), row.probs().to_vec()))
            .collect();
        Self {
            kind: ModelKind::Table,
            vocab_size: model.vocab().size(),
            order: model.order(),
            seed: 0,
            concentration: 1.0,
            table: Some(table),
            perturb_seed: None,
            perturb_rate: None,
        }
    }

    pub fn vocab(&self) -> Result<Vocab, LmError> {
        Vocab::with_size(self.vocab_size).map_err(|e| LmError::InvalidSpec(e.to_string()))
    }

    pub fn build(&self) -> Result<Arc<dyn SeqModel>, LmError> {
        let vocab = self.vocab()?;
        Ok(match self.kind {
            ModelKind::Uniform => Arc::new(UniformModel::new(vocab)),
            ModelKind::Table => {
                let table = self
                    .table
                    .as_ref()
                    .ok_or_else(|| LmError::InvalidSpec("table model without table".into()))?;
                let rows = table
                    .iter()
                    .map(|(k, row)| Ok((k.parse::<ContextKey>()?, row.clone())))
                    .collect::<Result<Vec<_>, LmError>>()?;
                Arc::new(TableModel::new(vocab, self.order, rows)?)
            }
            ModelKind::NgramGen => Arc::new(self.build_ngram()?),
        })
    }

    /// Builds the generator model directly (needed for perturbed siblings).
    pub fn build_ngram(&self) -> Result<NgramGenModel, LmError> {
        if self.kind != ModelKind::NgramGen {
            return Err(LmError::InvalidSpec("not an ngram_gen spec".into()));
        }
        let model = NgramGenModel::new(self.vocab()?, self.order, self.seed, self.concentration)?;
        match (self.perturb_seed, self.perturb_rate) {
            (Some(seed), Some(rate)) => model.with_perturbation(Perturbation { seed, rate }),
            (None, None) => Ok(model),
            _ => Err(LmError::InvalidSpec("perturb_seed and perturb_rate go together".into())),
        }
    }
}
