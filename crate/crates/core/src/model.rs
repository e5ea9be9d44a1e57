//! The joint recognizer: raw-frame trunk, Bi-LSTM encoder, attention decoder.

use serde::{Deserialize, Serialize};

use crate::decode_eval::{beam_search, BeamOutput, Seq2SeqScorer};
use crate::diffcore::{BindMode, Bound, Graph, ParameterSet, Var};
use crate::dsp::FrameMatrix;
use crate::rawenc::{encode_utterance, init_trunk, RawEncoderConfig};
use crate::seq2seq::{
    init_seq2seq, prepare_attention, teacher_forced_loss, AttentionConfig, Attention, DecoderConfig, EncoderConfig,
    Seq2SeqConfig, Seq2SeqError,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub trunk: RawEncoderConfig,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn seq2seq(&self) -> Seq2SeqConfig {
        Seq2SeqConfig {
            encoder: self.encoder.clone(),
            attention: self.attention.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        self.trunk.validate()?;
        self.seq2seq().validate()
    }

    /// Every parameter path of the recognizer (no regression heads).
    pub fn paths(&self) -> Vec<String> {
        let mut out = self.trunk.trunk_paths();
        out.extend(self.seq2seq().paths());
        out
    }
}

pub fn init_model(cfg: &ModelConfig, seed: u64, ps: &mut ParameterSet) -> Result<(), Seq2SeqError> {
    cfg.validate()?;
    init_trunk(&cfg.trunk, seed, ps);
    init_seq2seq(&cfg.seq2seq(), cfg.trunk.output_channels(), seed, ps)
}

/// Runs trunk and Bi-LSTM over an utterance and prepares attention over the result.
pub fn encode(g: &mut Graph, p: &Bound, cfg: &ModelConfig, fm: &FrameMatrix) -> Result<Attention, Seq2SeqError> {
    let frames = encode_utterance(g, p, &cfg.trunk, fm)?;
    let s2s = cfg.seq2seq();
    let states = crate::seq2seq::bilstm_encode(g, p, &s2s, frames)?;
    prepare_attention(g, p, cfg.attention.variant, states, cfg.decoder.hidden)
}

/// Teacher-forced mean NLL of `target` (ending in eos) for one utterance.
pub fn utterance_loss(g: &mut Graph, p: &Bound, cfg: &ModelConfig, fm: &FrameMatrix, target: &[usize]) -> Result<Var, Seq2SeqError> {
    let att = encode(g, p, cfg, fm)?;
    teacher_forced_loss(g, p, &att, target)
}

/// Output length cap when none is configured: `2·S' + 10` symbols.
pub fn default_max_len(encoded_len: usize) -> usize {
    2 * encoded_len + 10
}

/// Beam search over one utterance with frozen parameters.
pub fn decode_utterance(params: &ParameterSet, cfg: &ModelConfig, fm: &FrameMatrix, beam_size: usize, max_len: Option<usize>) -> Result<BeamOutput, Seq2SeqError> {
    let mut g = Graph::new();
    let p = g.bind(params, BindMode::All)?;
    let attention = encode(&mut g, &p, cfg, fm)?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(attention.len(&g)));
    let mut scorer = Seq2SeqScorer { graph: &mut g, params: &p, attention, hidden: cfg.decoder.hidden };
    beam_search(&mut scorer, beam_size, max_len)
}
