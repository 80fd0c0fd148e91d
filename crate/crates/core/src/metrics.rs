//! Token-id BLEU and per-group aggregation of decode results.
//!
//! Corpus BLEU pools clipped n-gram counts (n = 1..4) over all pairs, takes
//! the geometric mean of the four precisions and applies the brevity penalty
//! `exp(1 - r/c)` when `c < r`. It is unsmoothed, so any zero precision gives
//! a score of 0. Empty candidates are ordinary length-0 entries; a corpus
//! whose candidates are all empty has `c = 0` and a brevity penalty of 0.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::task::TokenId;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("EmptyCorpus: nothing to score")]
    EmptyCorpus,
    #[error("LengthMismatch: {candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

/// Sufficient statistics of one or more candidate/reference pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    cand_len: u64,
    ref_len: u64,
}

impl Counts {
    fn of(candidate: &[TokenId], reference: &[TokenId]) -> Self {
        let mut c = Counts { cand_len: candidate.len() as u64, ref_len: reference.len() as u64, ..Default::default() };
        for n in 1..=MAX_ORDER {
            let ref_grams = ngram_counts(reference, n);
            let cand_grams = ngram_counts(candidate, n);
            c.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
            c.matches[n - 1] = cand_grams
                .iter()
                .map(|(g, &k)| k.min(ref_grams.get(g).copied().unwrap_or(0)))
                .sum();
        }
        c
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..MAX_ORDER {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
        self
    }
}

fn ngram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut out = HashMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

fn brevity_penalty(cand_len: u64, ref_len: u64) -> f64 {
    if cand_len >= ref_len {
        1.0
    } else if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

fn finish(precisions: [f64; MAX_ORDER], cand_len: u64, ref_len: u64) -> BleuScore {
    let bp = brevity_penalty(cand_len, ref_len);
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        bp * mean_log.exp() * 100.0
    } else {
        0.0
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        candidate_len: cand_len as usize,
        reference_len: ref_len as usize,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unsmoothed corpus BLEU, one reference per candidate.
pub fn corpus_bleu(candidates: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> Result<BleuScore, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let total = candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| Counts::of(c, r))
        .reduce(Counts::default, Counts::merge);
    let precisions = std::array::from_fn(|i| ratio(total.matches[i], total.totals[i]));
    Ok(finish(precisions, total.cand_len, total.ref_len))
}

/// Sentence BLEU with add-one smoothing on the n >= 2 precisions. Meant for
/// per-task diagnostics; reported numbers use [`corpus_bleu`].
pub fn sentence_bleu(candidate: &[TokenId], reference: &[TokenId]) -> BleuScore {
    let c = Counts::of(candidate, reference);
    let precisions = std::array::from_fn(|i| {
        if i == 0 {
            ratio(c.matches[0], c.totals[0])
        } else {
            (c.matches[i] + 1) as f64 / (c.totals[i] + 1) as f64
        }
    });
    finish(precisions, c.cand_len, c.ref_len)
}

/// One decoded task as seen by [`aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTask {
    pub decoder: String,
    pub mask_ratio: f64,
    /// Empty for failed decodes.
    pub candidate: Vec<TokenId>,
    pub reference: Vec<TokenId>,
    /// `None` for failed decodes, which are left out of the means.
    pub forward_passes: Option<u64>,
    pub emitted_steps: Option<u64>,
    pub wall_time: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub decoder: String,
    pub mask_ratio: f64,
    pub bleu: BleuScore,
    pub mean_forward_passes: f64,
    /// Not part of the CSV.
    pub mean_emitted_steps: f64,
    pub mean_wall_time: Duration,
    pub n_tasks: usize,
    pub n_failed: usize,
}

/// Ratios are bucketed at four decimals, the CSV precision.
fn ratio_bucket(r: f64) -> i64 {
    (r * 1e4).round() as i64
}

/// Groups by `(decoder, mask ratio)` and scores each group. Rows come out
/// sorted by decoder, then ratio.
pub fn aggregate(results: &[ScoredTask]) -> Result<Vec<BenchRow>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut groups: BTreeMap<(&str, i64), Vec<&ScoredTask>> = BTreeMap::new();
    for r in results {
        groups.entry((r.decoder.as_str(), ratio_bucket(r.mask_ratio))).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((decoder, bucket), items)| {
            let cands: Vec<Vec<TokenId>> = items.iter().map(|t| t.candidate.clone()).collect();
            let refs: Vec<Vec<TokenId>> = items.iter().map(|t| t.reference.clone()).collect();
            let bleu = corpus_bleu(&cands, &refs)?;
            let ok: Vec<&&ScoredTask> = items.iter().filter(|t| t.forward_passes.is_some()).collect();
            let mean = |f: &dyn Fn(&ScoredTask) -> f64| {
                if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|t| f(t)).sum::<f64>() / ok.len() as f64
                }
            };
            Ok(BenchRow {
                decoder: decoder.to_string(),
                mask_ratio: bucket as f64 / 1e4,
                mean_forward_passes: mean(&|t| t.forward_passes.unwrap_or(0) as f64),
                mean_emitted_steps: mean(&|t| t.emitted_steps.unwrap_or(0) as f64),
                mean_wall_time: Duration::from_secs_f64(mean(&|t| t.wall_time.unwrap_or_default().as_secs_f64())),
                n_tasks: items.len(),
                n_failed: items.len() - ok.len(),
                bleu,
            })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 11] = [
    "decoder",
    "mask_ratio",
    "bleu",
    "bp",
    "p1",
    "p2",
    "p3",
    "p4",
    "mean_forward_passes",
    "mean_wall_time_us",
    "n_tasks",
];

/// Column index of the wall-time column, the only one that varies between
/// identical runs.
pub const TIMING_COLUMN: usize = 9;

/// Writes rows in CSV form; the caller is expected to pass them sorted, as
/// [`aggregate`] returns them.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let f = |x: f64| format!("{x:.4}");
    for r in rows {
        let b = &r.bleu;
        w.write_record([
            r.decoder.clone(),
            f(r.mask_ratio),
            f(b.score),
            f(b.brevity_penalty),
            f(b.precisions[0]),
            f(b.precisions[1]),
            f(b.precisions[2]),
            f(b.precisions[3]),
            f(r.mean_forward_passes),
            f(r.mean_wall_time.as_secs_f64() * 1e6),
            r.n_tasks.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn csv_string(rows: &[BenchRow]) -> Result<String, MetricsError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Replaces the timing column with `-` so two runs can be compared.
pub fn mask_timing_column(csv_text: &str) -> String {
    csv_text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return line.to_string();
            }
            let mut cols: Vec<&str> = line.split(',').collect();
            if cols.len() > TIMING_COLUMN {
                cols[TIMING_COLUMN] = "-";
            }
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
