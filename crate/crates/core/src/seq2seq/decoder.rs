use super::{attend, lstm_cell, Attention, LstmParams, Seq2SeqError, EOS, VOCAB_SIZE};
use crate::diffcore::{Bound, Graph, Var};

/// Decoder recurrence plus the context fed back into the next input.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub context: Var,
}

impl DecoderState {
    /// All-zero state for the start of a sequence.
    pub fn zeros(g: &mut Graph, hidden: usize, context_dim: usize) -> Result<Self, Seq2SeqError> {
        Ok(Self {
            h: g.leaf(vec![hidden], vec![0.0; hidden], false)?,
            c: g.leaf(vec![hidden], vec![0.0; hidden], false)?,
            context: g.leaf(vec![context_dim], vec![0.0; context_dim], false)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `[32]` unnormalized scores.
    pub logits: Var,
    pub state: DecoderState,
    /// `[S']` attention weights.
    pub weights: Var,
}

/// One decoder step. The LSTM consumes `[embed(prev), c_{t-1}]`, attention uses the
/// new hidden state, and the output layer reads `[h_t, c_t]`.
pub fn decoder_step(g: &mut Graph, p: &Bound, att: &Attention, prev_symbol: usize, state: &DecoderState) -> Result<StepOutput, Seq2SeqError> {
    if prev_symbol >= VOCAB_SIZE {
        return Err(Seq2SeqError::UnknownSymbol(prev_symbol));
    }
    let emb = g.embedding(p.get("decoder.embed")?, prev_symbol)?;
    let x = g.concat(&[emb, state.context])?;
    let lstm = LstmParams::bind(p, "decoder.lstm")?;
    let (h, c) = lstm_cell(g, &lstm, x, state.h, state.c)?;
    let (context, weights) = attend(g, att, h)?;
    let joined = g.concat(&[h, context])?;
    let proj = g.matmul_bt(joined, p.get("decoder.out.weight")?)?;
    let logits = g.add(proj, p.get("decoder.out.bias")?)?;
    Ok(StepOutput { logits, state: DecoderState { h, c, context }, weights })
}

/// Mean negative log-likelihood of `target` under teacher forcing; the first
/// previous symbol is eos.
pub fn teacher_forced_loss(g: &mut Graph, p: &Bound, att: &Attention, target: &[usize]) -> Result<Var, Seq2SeqError> {
    match target.last() {
        None => return Err(Seq2SeqError::EmptyTarget),
        Some(&EOS) => {}
        Some(_) => return Err(Seq2SeqError::MissingEos),
    }
    if let Some(&bad) = target.iter().find(|&&y| y >= VOCAB_SIZE) {
        return Err(Seq2SeqError::UnknownSymbol(bad));
    }
    let hidden = g.shape(p.get("decoder.lstm.w_hh")?)[1];
    let mut state = DecoderState::zeros(g, hidden, att.dim(g))?;
    let mut prev = EOS;
    let mut logits = Vec::with_capacity(target.len());
    for &y in target {
        let out = decoder_step(g, p, att, prev, &state)?;
        logits.push(out.logits);
        state = out.state;
        prev = y;
    }
    let stacked = g.stack(&logits)?;
    Ok(g.cross_entropy(stacked, target)?)
}
