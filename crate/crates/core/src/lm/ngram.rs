//! Seeded synthetic n-gram model.
//!
//! Each `(source, context)` row is a draw from a symmetric Dirichlet over the
//! non-BOS ids. The draw is a pure function of `(seed, source, context)`:
//!
//! 1. `key_hash` folds the seed, both sequence lengths and every token id
//!    through the SplitMix64 finalizer.
//! 2. The hash seeds a ChaCha8 stream; uniforms are the top 53 bits of each
//!    `u64` scaled to `[0, 1)`.
//! 3. Every weight is a Gamma(concentration, 1) sample by Marsaglia–Tsang,
//!    with Box–Muller normals, boosted via `U^(1/a)` when the shape is below
//!    one. Weights are visited in ascending id order.
//! 4. Weights are normalized and floored like every other row.
//!
//! Rows are memoized; concurrent inserts are idempotent since every thread
//! computes the same row.

use std::collections::HashMap;
use std::sync::RwLock;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::task::{TokenId, Vocab};

use super::{context_window, LmError, ModelDescriptor, SeqModel, StepDistribution};

/// Re-draws a fraction of rows with a second seed. Used to build a
/// plausible-but-different sibling of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub seed: u64,
    pub rate: f64,
}

type RowKey = (Vec<TokenId>, Vec<TokenId>);

#[derive(Debug)]
pub struct NgramGenModel {
    vocab: Vocab,
    order: usize,
    seed: u64,
    concentration: f64,
    perturbation: Option<Perturbation>,
    cache: RwLock<HashMap<RowKey, StepDistribution>>,
}

const PERTURB_TAG: u64 = 0x7065_7274_7572_6221;

impl NgramGenModel {
    pub fn new(vocab: Vocab, order: usize, seed: u64, concentration: f64) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::InvalidSpec("order must be >= 1".into()));
        }
        if !(concentration.is_finite() && concentration > 0.0) {
            return Err(LmError::InvalidSpec(format!("concentration {concentration} must be > 0")));
        }
        Ok(Self {
            vocab,
            order,
            seed,
            concentration,
            perturbation: None,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Result<Self, LmError> {
        if !(0.0..=1.0).contains(&perturbation.rate) {
            return Err(LmError::InvalidSpec(format!(
                "perturbation rate {} outside [0, 1]",
                perturbation.rate
            )));
        }
        self.perturbation = Some(perturbation);
        Ok(self)
    }

    /// A sibling model sharing this one's seed family with a fraction
    /// `rate` of its rows re-drawn.
    pub fn perturbed_sibling(&self, perturb_seed: u64, rate: f64) -> Result<Self, LmError> {
        Self::new(self.vocab.clone(), self.order, self.seed, self.concentration)?
            .with_perturbation(Perturbation { seed: perturb_seed, rate })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn perturbation(&self) -> Option<Perturbation> {
        self.perturbation
    }

    pub fn cached_rows(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    fn row_seed(&self, source: &[TokenId], context: &[TokenId]) -> u64 {
        if let Some(p) = self.perturbation {
            let coin = unit_f64(key_hash(p.seed ^ PERTURB_TAG, source, context));
            if coin < p.rate {
                return key_hash(splitmix64(self.seed ^ splitmix64(p.seed)), source, context);
            }
        }
        key_hash(self.seed, source, context)
    }

    fn generate(&self, source: &[TokenId], context: &[TokenId]) -> StepDistribution {
        let mut rng = ChaCha8Rng::seed_from_u64(self.row_seed(source, context));
        let bos = self.vocab.bos();
        let weights = (0..self.vocab.size())
            .map(|id| if id == bos { 0.0 } else { sample_gamma(&mut rng, self.concentration) })
            .collect();
        StepDistribution::from_weights(weights, bos)
    }
}

impl SeqModel for NgramGenModel {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            name: "ngram_gen".into(),
            vocab: self.vocab.clone(),
            context_order: self.order,
            seed: self.seed,
        }
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_distribution(&self, source: &[TokenId], history: &[TokenId]) -> StepDistribution {
        let context = context_window(self.vocab.bos(), history, self.order);
        let key = (source.to_vec(), context);
        if let Some(row) = self.cache.read().expect("cache lock").get(&key) {
            return row.clone();
        }
        let row = self.generate(&key.0, &key.1);
        self.cache.write().expect("cache lock").entry(key).or_insert(row).clone()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_hash(seed: u64, source: &[TokenId], context: &[TokenId]) -> u64 {
    let mut h = splitmix64(seed);
    for part in [source, context] {
        h = splitmix64(h ^ part.len() as u64);
        for &t in part {
            h = splitmix64(h ^ u64::from(t));
        }
    }
    h
}

fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    unit_f64(rng.next_u64())
}

/// Uniform on `(0, 1]`, safe for logarithms.
fn uniform_open<R: RngCore>(rng: &mut R) -> f64 {
    1.0 - uniform(rng)
}

fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Marsaglia–Tsang gamma sampler with unit scale.
pub(crate) fn sample_gamma<R: RngCore>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let boost = uniform_open(rng).powf(1.0 / shape);
        return sample_gamma(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform_open(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}
