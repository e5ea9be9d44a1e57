use std::io::Write;

use super::Hypothesis;
use crate::seq2seq::{Vocabulary, EOS_TOKEN, NOISE_TOKEN};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("empty reference")]
    EmptyReference,
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character symbols of a transcript, with `<noise>` as one symbol and `<eos>` dropped.
pub fn split_symbols(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        let n = if rest.starts_with(NOISE_TOKEN) {
            NOISE_TOKEN.len()
        } else if rest.starts_with(EOS_TOKEN) {
            rest = &rest[EOS_TOKEN.len()..];
            continue;
        } else {
            c.len_utf8()
        };
        out.push(&rest[..n]);
        rest = &rest[n..];
    }
    out
}

fn words(text: &str) -> Vec<String> {
    text.replace(EOS_TOKEN, "").split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// Accumulated edits over reference length; corpus rates are micro-averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub edits: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn chars(hyp: &str, reference: &str) -> Self {
        let r = split_symbols(reference);
        Self { edits: levenshtein(&split_symbols(hyp), &r), ref_len: r.len() }
    }

    pub fn words(hyp: &str, reference: &str) -> Self {
        let r = words(reference);
        Self { edits: levenshtein(&words(hyp), &r), ref_len: r.len() }
    }

    pub fn add(&mut self, other: ErrorCounts) {
        self.edits += other.edits;
        self.ref_len += other.ref_len;
    }

    pub fn rate(&self) -> Result<f64, EvalError> {
        if self.ref_len == 0 {
            return Err(EvalError::EmptyReference);
        }
        Ok(self.edits as f64 / self.ref_len as f64)
    }
}

pub fn cer(hyp: &str, reference: &str) -> Result<f64, EvalError> {
    ErrorCounts::chars(hyp, reference).rate()
}

pub fn wer(hyp: &str, reference: &str) -> Result<f64, EvalError> {
    ErrorCounts::words(hyp, reference).rate()
}

/// One line per hypothesis: rank, normalized score, log-probability, transcript.
pub fn write_nbest<W: Write>(mut out: W, nbest: &[Hypothesis]) -> std::io::Result<()> {
    let vocab = Vocabulary;
    for (rank, h) in nbest.iter().enumerate() {
        let text = vocab.transcript(&h.symbols).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        writeln!(out, "{}\t{:.6}\t{:.6}\t{}", rank + 1, h.normalized_score(), h.log_prob, text)?;
    }
    Ok(())
}
