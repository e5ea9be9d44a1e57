//! Bi-LSTM upper encoder with time subsampling, attention, and the
//! character decoder with context input feedback.
//!
//! ```text
//! encoder.lstm{l}.{fwd,bwd}.{w_ih,w_hh,bias}   [4H, in], [4H, H], [4H]
//! attention.w                                  mlp: [A, M+N]   bilinear: [M, N]
//! attention.v                                  mlp: [1, A]
//! decoder.embed                                [32, E]
//! decoder.lstm.{w_ih,w_hh,bias}                [4N, E+M], [4N, N], [4N]
//! decoder.out.{weight,bias}                    [32, N+M], [32]
//! ```

mod attention;
mod decoder;
mod lstm;
mod vocab;


use serde::{Deserialize, Serialize};

use crate::diffcore::{init::glorot_uniform, ParameterSet, Tensor, TensorError};

pub use attention::{attend, attention_score, prepare_attention, Attention};
pub use decoder::{decoder_step, teacher_forced_loss, DecoderState, StepOutput};
pub use lstm::{bilstm_encode, lstm_cell, subsampled_len, LstmParams};
pub use vocab::{
    VocabError, Vocabulary, APOSTROPHE, DASH, EOS, EOS_TOKEN, NOISE, NOISE_TOKEN, PERIOD, SPACE, VOCAB_SIZE,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Seq2SeqError {
    #[error("utterance too short after subsampling: {frames} frames, need at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("unknown symbol index {0}")]
    UnknownSymbol(usize),
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("target sequence must end with eos")]
    MissingEos,
    #[error("{variant} attention dimension mismatch: encoder {enc}, decoder {dec}")]
    AttentionDims { variant: &'static str, enc: usize, dec: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoreVariant {
    Dot,
    Bilinear,
    #[default]
    Mlp,
}

impl ScoreVariant {
    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Dot => "dot",
            ScoreVariant::Bilinear => "bilinear",
            ScoreVariant::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Units per direction.
    pub hidden: usize,
    /// Each layer halves the time axis.
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: 256, layers: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub variant: ScoreVariant,
    /// Hidden width of the mlp score.
    pub hidden: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { variant: ScoreVariant::Mlp, hidden: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { embed_dim: 128, hidden: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seq2SeqConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
}

impl Seq2SeqConfig {
    /// Width of encoder states (both directions).
    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder.hidden
    }

    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let c = self;
        if c.encoder.hidden == 0 || c.encoder.layers == 0 || c.decoder.hidden == 0 || c.decoder.embed_dim == 0 {
            return Err(TensorError::InvalidArgument("seq2seq widths and layer count must be positive".into()).into());
        }
        match c.attention.variant {
            ScoreVariant::Dot if c.encoder_dim() != c.decoder.hidden => Err(Seq2SeqError::AttentionDims {
                variant: "dot",
                enc: c.encoder_dim(),
                dec: c.decoder.hidden,
            }),
            ScoreVariant::Mlp if c.attention.hidden == 0 => {
                Err(TensorError::InvalidArgument("mlp attention width must be positive".into()).into())
            }
            _ => Ok(()),
        }
    }

    /// Minimum input length that survives every subsampling layer.
    pub fn min_frames(&self) -> usize {
        1 << self.encoder.layers
    }

    pub fn paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.encoder.layers {
            for dir in ["fwd", "bwd"] {
                for w in ["w_ih", "w_hh", "bias"] {
                    out.push(format!("encoder.lstm{l}.{dir}.{w}"));
                }
            }
        }
        match self.attention.variant {
            ScoreVariant::Dot => {}
            ScoreVariant::Bilinear => out.push("attention.w".into()),
            ScoreVariant::Mlp => out.extend(["attention.w".into(), "attention.v".into()]),
        }
        for p in ["embed", "lstm.w_ih", "lstm.w_hh", "lstm.bias", "out.weight", "out.bias"] {
            out.push(format!("decoder.{p}"));
        }
        out
    }
}

fn insert_lstm(ps: &mut ParameterSet, prefix: &str, input: usize, hidden: usize, seed: u64) {
    let w_ih = format!("{prefix}.w_ih");
    let w_hh = format!("{prefix}.w_hh");
    ps.insert(w_ih.clone(), glorot_uniform(vec![4 * hidden, input], input, 4 * hidden, seed, &w_ih));
    ps.insert(w_hh.clone(), glorot_uniform(vec![4 * hidden, hidden], hidden, 4 * hidden, seed, &w_hh));
    let mut bias = vec![0.0; 4 * hidden];
    bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
    ps.insert(format!("{prefix}.bias"), Tensor::from_vec(bias));
}

/// Initializes every seq2seq parameter for encoder inputs of width `input_dim`.
pub fn init_seq2seq(cfg: &Seq2SeqConfig, input_dim: usize, seed: u64, ps: &mut ParameterSet) -> Result<(), Seq2SeqError> {
    cfg.validate()?;
    let h = cfg.encoder.hidden;
    let m = cfg.encoder_dim();
    let n = cfg.decoder.hidden;
    let e = cfg.decoder.embed_dim;
    let mut input = input_dim;
    for l in 0..cfg.encoder.layers {
        for dir in ["fwd", "bwd"] {
            insert_lstm(ps, &format!("encoder.lstm{l}.{dir}"), input, h, seed);
        }
        input = m;
    }
    let a = cfg.attention.hidden;
    match cfg.attention.variant {
        ScoreVariant::Dot => {}
        ScoreVariant::Bilinear => {
            ps.insert("attention.w", glorot_uniform(vec![m, n], n, m, seed, "attention.w"));
        }
        ScoreVariant::Mlp => {
            ps.insert("attention.w", glorot_uniform(vec![a, m + n], m + n, a, seed, "attention.w"));
            ps.insert("attention.v", glorot_uniform(vec![1, a], a, 1, seed, "attention.v"));
        }
    }
    ps.insert("decoder.embed", glorot_uniform(vec![VOCAB_SIZE, e], VOCAB_SIZE, e, seed, "decoder.embed"));
    insert_lstm(ps, "decoder.lstm", e + m, n, seed);
    ps.insert(
        "decoder.out.weight",
        glorot_uniform(vec![VOCAB_SIZE, n + m], n + m, VOCAB_SIZE, seed, "decoder.out.weight"),
    );
    ps.insert("decoder.out.bias", Tensor::zeros(vec![VOCAB_SIZE]));
    Ok(())
}
