//! Span suggestion under prefix and suffix constraints.
//!
//! The crate bundles the sequence-model interface and synthetic models
//! ([`lm`]), the decoders ([`decode`]), an exhaustive reference search
//! ([`oracle`]), BLEU scoring ([`metrics`]) and dataset generation plus
//! experiment sweeps ([`harness`]).

pub mod decode;
pub mod fixtures;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod oracle;
pub mod task;

pub use decode::{
    beam_search, dba_decode, dba_suggest, psgd, psgd_two_pass, BeamParams, DbaParams, DecodeError, PsgdParams,
    ScoreConfig, Scoring,
};
pub use harness::{gen_dataset, run_pt_sweep, run_ratio_sweep, ConstraintSource, DecoderKind, GenConfig, SweepConfig};
pub use lm::{ModelSpec, SeqModel};
pub use metrics::{corpus_bleu, BenchRow, BleuScore};
pub use task::{DecodeStats, ResultRecord, StopReason, Suggestion, TokenId, TsTask, Vocab};
