//! Small deterministic models and tasks for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lm::{ContextKey, NgramGenModel, TableModel};
use crate::task::{TokenId, TsTask, Vocab};

/// `|V| = 4` (BOS = 0, EOS = 1, a = 2, b = 3), order 1, source `[2]`:
///
/// | context | BOS | EOS | a   | b   |
/// |---------|-----|-----|-----|-----|
/// | BOS     | 0   | 0.1 | 0.7 | 0.2 |
/// | a       | 0   | 0.2 | 0.2 | 0.6 |
/// | b       | 0   | 0.6 | 0.3 | 0.1 |
pub fn m1() -> TableModel {
    let vocab = Vocab::with_size(4).expect("valid vocab");
    let rows = [
        (vec![0], vec![0.0, 0.1, 0.7, 0.2]),
        (vec![2], vec![0.0, 0.2, 0.2, 0.6]),
        (vec![3], vec![0.0, 0.6, 0.3, 0.1]),
    ];
    TableModel::new(
        vocab,
        1,
        rows.into_iter().map(|(ctx, row)| (ContextKey::new(vec![2], ctx), row)),
    )
    .expect("valid fixture")
}

/// A table model under which `prefix ++ suffix` with nothing in between is
/// the best filling: `a -> b -> EOS` is the only likely path, and the task is
/// prefix `[a]`, suffix `[b]`.
pub fn empty_span_optimum() -> (TableModel, TsTask) {
    let vocab = Vocab::with_size(4).expect("valid vocab");
    let rows = [
        (vec![0], vec![0.0, 0.05, 0.9, 0.05]),
        (vec![2], vec![0.0, 0.05, 0.05, 0.9]),
        (vec![3], vec![0.0, 0.9, 0.05, 0.05]),
    ];
    let model = TableModel::new(
        vocab,
        1,
        rows.into_iter().map(|(ctx, row)| (ContextKey::new(vec![2], ctx), row)),
    )
    .expect("valid fixture");
    (model, TsTask::new("empty-optimum", vec![2], vec![2], vec![3]))
}

/// Every conditioning window an order-`order` model can see.
pub fn all_contexts(vocab: &Vocab, order: usize) -> Vec<Vec<TokenId>> {
    let content: Vec<TokenId> = vocab.content_tokens().collect();
    let mut tails: Vec<Vec<TokenId>> = vec![vec![]];
    let mut out = Vec::new();
    for len in 0..=order {
        if len < order {
            out.extend(tails.iter().map(|t| {
                let mut c = vec![vocab.bos()];
                c.extend_from_slice(t);
                c
            }));
        } else {
            out.extend(tails.iter().cloned());
        }
        if len < order {
            tails = tails
                .iter()
                .flat_map(|t| {
                    content.iter().map(move |&x| {
                        let mut n = t.clone();
                        n.push(x);
                        n
                    })
                })
                .collect();
        }
    }
    out
}

/// Table model with a random, fully specified row for every context of each
/// given source. Rows are peaked by cubing uniform weights.
pub fn random_table_model(seed: u64, vocab_size: u32, order: usize, sources: &[Vec<TokenId>]) -> TableModel {
    let vocab = Vocab::with_size(vocab_size).expect("valid vocab");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for src in sources {
        for ctx in all_contexts(&vocab, order) {
            let mut w: Vec<f64> = (0..vocab_size)
                .map(|id| if id == vocab.bos() { 0.0 } else { rng.gen_range(0.01f64..1.0).powi(3) })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            // Push any rounding residue into the largest entry.
            let residue = 1.0 - w.iter().sum::<f64>();
            let top = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            w[top] += residue;
            rows.push((ContextKey::new(src.clone(), ctx), w));
        }
    }
    TableModel::new(vocab, order, rows).expect("valid random table")
}

/// A random table model together with a task over it: source of length 1–2,
/// prefix of length `0..=max_prefix`, suffix of length `0..=max_suffix`.
pub fn random_table_task(
    seed: u64,
    vocab_size: u32,
    order: usize,
    max_prefix: usize,
    max_suffix: usize,
) -> (TableModel, TsTask) {
    let vocab = Vocab::with_size(vocab_size).expect("valid vocab");
    let content: Vec<TokenId> = vocab.content_tokens().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a5c);
    let src_len = rng.gen_range(1..=2);
    let source: Vec<TokenId> = (0..src_len).map(|_| *content.choose(&mut rng).unwrap()).collect();
    let tp = rng.gen_range(0..=max_prefix);
    let ts = rng.gen_range(0..=max_suffix);
    let prefix = (0..tp).map(|_| *content.choose(&mut rng).unwrap()).collect();
    let suffix = (0..ts).map(|_| *content.choose(&mut rng).unwrap()).collect();
    let model = random_table_model(seed, vocab_size, order, std::slice::from_ref(&source));
    (model, TsTask::new(format!("rand-{seed}"), source, prefix, suffix))
}

pub fn random_ngram(seed: u64, vocab_size: u32, order: usize, concentration: f64) -> NgramGenModel {
    NgramGenModel::new(Vocab::with_size(vocab_size).expect("valid vocab"), order, seed, concentration)
        .expect("valid params")
}
