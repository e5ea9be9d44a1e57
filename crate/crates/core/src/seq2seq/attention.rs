use super::{ScoreVariant, Seq2SeqError};
use crate::diffcore::{Bound, Graph, Var};

/// Encoder states plus whatever score terms depend only on them.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub variant: ScoreVariant,
    /// `[S', M]`
    pub states: Var,
    /// mlp only: `H_e · W_encᵀ`, `[S', A]`.
    keys: Option<Var>,
    /// mlp: decoder block of `W_s` `[A, N]`; bilinear: `W` `[M, N]`.
    w_dec: Option<Var>,
    v: Option<Var>,
}

impl Attention {
    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.states)[0]
    }

    pub fn is_empty(&self, g: &Graph) -> bool {
        self.len(g) == 0
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.states)[1]
    }
}

fn check_dims(g: &Graph, variant: ScoreVariant, p: &Bound, m: usize, n: usize) -> Result<(), Seq2SeqError> {
    let bad = |_| Seq2SeqError::AttentionDims { variant: variant.name(), enc: m, dec: n };
    let ok = match variant {
        ScoreVariant::Dot => m == n,
        ScoreVariant::Bilinear => g.shape(p.get("attention.w")?) == [m, n],
        ScoreVariant::Mlp => {
            let w = g.shape(p.get("attention.w")?).to_vec();
            let v = g.shape(p.get("attention.v")?).to_vec();
            w.len() == 2 && w[1] == m + n && v == [1, w[0]]
        }
    };
    if ok {
        Ok(())
    } else {
        Err(bad(()))
    }
}

/// Precomputes the encoder-side score terms for a decode over `states`.
pub fn prepare_attention(g: &mut Graph, p: &Bound, variant: ScoreVariant, states: Var, decoder_dim: usize) -> Result<Attention, Seq2SeqError> {
    let m = g.shape(states)[1];
    check_dims(g, variant, p, m, decoder_dim)?;
    let mut att = Attention { variant, states, keys: None, w_dec: None, v: None };
    match variant {
        ScoreVariant::Dot => {}
        ScoreVariant::Bilinear => att.w_dec = Some(p.get("attention.w")?),
        ScoreVariant::Mlp => {
            let w = p.get("attention.w")?;
            let w_enc = g.slice(w, 0, m)?;
            att.w_dec = Some(g.slice(w, m, decoder_dim)?);
            att.keys = Some(g.matmul_bt(states, w_enc)?);
            att.v = Some(p.get("attention.v")?);
        }
    }
    Ok(att)
}

/// Scores of every encoder state against `h_d`, `[S']`.
fn scores(g: &mut Graph, att: &Attention, h_d: Var) -> Result<Var, Seq2SeqError> {
    let s = att.len(g);
    let n = g.value(h_d).len();
    let m = att.dim(g);
    let col = match att.variant {
        ScoreVariant::Dot => {
            if m != n {
                return Err(Seq2SeqError::AttentionDims { variant: "dot", enc: m, dec: n });
            }
            g.matmul_bt(att.states, h_d)?
        }
        ScoreVariant::Bilinear => {
            let q = g.matmul_bt(h_d, att.w_dec.expect("bilinear weight"))?;
            g.matmul_bt(att.states, q)?
        }
        ScoreVariant::Mlp => {
            let q = g.matmul_bt(h_d, att.w_dec.expect("mlp weight"))?;
            let pre = g.add_row(att.keys.expect("mlp keys"), q)?;
            let act = g.tanh(pre)?;
            g.matmul_bt(act, att.v.expect("mlp v"))?
        }
    };
    Ok(g.reshape(col, vec![s])?)
}

/// Context `c_t = Σ_s a_t(s) h^e_s` and the weights `a_t`.
pub fn attend(g: &mut Graph, att: &Attention, h_d: Var) -> Result<(Var, Var), Seq2SeqError> {
    let e = scores(g, att, h_d)?;
    let a = g.softmax(e)?;
    let c = g.matmul(a, att.states)?;
    Ok((c, a))
}

/// Score of a single encoder/decoder state pair, `[1]`.
pub fn attention_score(g: &mut Graph, p: &Bound, variant: ScoreVariant, h_e: Var, h_d: Var) -> Result<Var, Seq2SeqError> {
    let m = g.value(h_e).len();
    let n = g.value(h_d).len();
    check_dims(g, variant, p, m, n)?;
    Ok(match variant {
        ScoreVariant::Dot => g.matmul_bt(h_e, h_d)?,
        ScoreVariant::Bilinear => {
            let q = g.matmul_bt(h_d, p.get("attention.w")?)?;
            g.matmul_bt(h_e, q)?
        }
        ScoreVariant::Mlp => {
            let x = g.concat(&[h_e, h_d])?;
            let pre = g.matmul_bt(x, p.get("attention.w")?)?;
            let act = g.tanh(pre)?;
            g.matmul_bt(act, p.get("attention.v")?)?
        }
    })
}
