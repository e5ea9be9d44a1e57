//! Beam-search transcription and error-rate scoring.

mod beam;
mod metrics;


pub use beam::{beam_search, greedy_decode, BeamOutput, Hypothesis, Seq2SeqScorer, StepScorer};
pub use metrics::{cer, levenshtein, split_symbols, wer, write_nbest, ErrorCounts, EvalError};
