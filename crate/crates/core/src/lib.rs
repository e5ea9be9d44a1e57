//! Raw-waveform-to-text speech recognition with an attention encoder-decoder
//! and a feature-transfer pretraining stage for the convolutional front end.

#[cfg(test)]
extern crate self as wav2text_under_test;

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decode_eval;
pub mod diffcore;
pub mod dsp;
pub mod rawenc;
pub mod model;
pub mod pretrain;
pub mod seq2seq;
pub mod train;

#[cfg(test)]
#[path = "../tests/common/gradcheck.rs"]
pub(crate) mod gradcheck;

#[cfg(test)]
#[path = "../tests/common/dsp_reference.rs"]
pub(crate) mod dsp_reference;

#[cfg(test)]
#[path = "../tests/common/op_suite.rs"]
pub(crate) mod op_suite;
