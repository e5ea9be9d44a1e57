use std::cmp::Ordering;

use crate::diffcore::{log_softmax, Bound, Graph};
use crate::seq2seq::{decoder_step, Attention, DecoderState, Seq2SeqError, EOS, VOCAB_SIZE};

/// Anything that yields next-symbol log-probabilities from a recurrent state.
pub trait StepScorer {
    type State: Clone;
    type Error;

    fn start(&mut self) -> Result<Self::State, Self::Error>;
    /// Log-probabilities over the vocabulary after `prev`, and the advanced state.
    fn step(&mut self, prev: usize, state: &Self::State) -> Result<(Vec<f64>, Self::State), Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub symbols: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per emitted symbol, eos included.
    pub fn normalized_score(&self) -> f64 {
        if self.symbols.is_empty() {
            self.log_prob
        } else {
            self.log_prob / self.symbols.len() as f64
        }
    }

    /// Symbols with the trailing eos removed.
    pub fn transcript_symbols(&self) -> &[usize] {
        match self.symbols.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.symbols,
        }
    }

    /// Higher normalized score first, then shorter, then lexicographically smaller.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .normalized_score()
            .total_cmp(&self.normalized_score())
            .then(self.symbols.len().cmp(&other.symbols.len()))
            .then_with(|| self.symbols.cmp(&other.symbols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// Finished hypotheses (or the live beam if none finished), best first.
    pub nbest: Vec<Hypothesis>,
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Beam search with a shrinking beam: each step keeps the `beam_size − finished`
/// best expansions by raw log-probability, moving those that end in eos to the
/// finished pool. Stops when nothing is live or `max_len` symbols were emitted.
pub fn beam_search<M: StepScorer>(model: &mut M, beam_size: usize, max_len: usize) -> Result<BeamOutput, M::Error> {
    let beam_size = beam_size.max(1);
    let mut live = vec![Live {
        hyp: Hypothesis { symbols: Vec::new(), log_prob: 0.0, finished: false },
        state: model.start()?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len.max(1) {
        let width = beam_size - finished.len();
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * VOCAB_SIZE);
        let mut next_states = Vec::with_capacity(live.len());
        for (i, h) in live.iter().enumerate() {
            let prev = h.hyp.symbols.last().copied().unwrap_or(EOS);
            let (logp, st) = model.step(prev, &h.state)?;
            next_states.push(st);
            cands.extend(logp.iter().enumerate().map(|(y, lp)| (h.hyp.log_prob + lp, i, y)));
        }
        // Parents are already in lexicographic order, so (parent, symbol) orders the sequences.
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        cands.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (lp, i, y) in cands {
            let mut symbols = live[i].hyp.symbols.clone();
            symbols.push(y);
            if y == EOS {
                finished.push(Hypothesis { symbols, log_prob: lp, finished: true });
            } else {
                next.push(Live { hyp: Hypothesis { symbols, log_prob: lp, finished: false }, state: next_states[i].clone() });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let mut pool = if finished.is_empty() { live.into_iter().map(|l| l.hyp).collect() } else { finished };
    pool.sort_by(Hypothesis::rank_cmp);
    Ok(BeamOutput { best: pool[0].clone(), nbest: pool })
}

/// Argmax at every step (lowest index on ties) until eos or `max_len`.
pub fn greedy_decode<M: StepScorer>(model: &mut M, max_len: usize) -> Result<Hypothesis, M::Error> {
    let mut state = model.start()?;
    let mut hyp = Hypothesis { symbols: Vec::new(), log_prob: 0.0, finished: false };
    let mut prev = EOS;
    for _ in 0..max_len.max(1) {
        let (logp, st) = model.step(prev, &state)?;
        let (y, lp) = logp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        hyp.symbols.push(y);
        hyp.log_prob += lp;
        state = st;
        prev = y;
        if y == EOS {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Decoder over encoded utterance states, recording onto an inference graph.
pub struct Seq2SeqScorer<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a Bound,
    pub attention: Attention,
    pub hidden: usize,
}

impl StepScorer for Seq2SeqScorer<'_> {
    type State = DecoderState;
    type Error = Seq2SeqError;

    fn start(&mut self) -> Result<DecoderState, Seq2SeqError> {
        let dim = self.attention.dim(self.graph);
        DecoderState::zeros(self.graph, self.hidden, dim)
    }

    fn step(&mut self, prev: usize, state: &DecoderState) -> Result<(Vec<f64>, DecoderState), Seq2SeqError> {
        let out = decoder_step(self.graph, self.params, &self.attention, prev, state)?;
        Ok((log_softmax(self.graph.value(out.logits)), out.state))
    }
}
