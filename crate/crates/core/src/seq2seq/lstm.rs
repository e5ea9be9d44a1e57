use super::{Seq2SeqConfig, Seq2SeqError};
use crate::diffcore::{Bound, Graph, TensorError, Var};

/// Bound weights of one LSTM; gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmParams {
    pub fn bind(p: &Bound, prefix: &str) -> Result<Self, TensorError> {
        Ok(Self {
            w_ih: p.get(&format!("{prefix}.w_ih"))?,
            w_hh: p.get(&format!("{prefix}.w_hh"))?,
            bias: p.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn hidden(&self, g: &Graph) -> usize {
        g.shape(self.w_hh)[1]
    }
}

/// Gate update from a precomputed input projection `W_ih x + b`.
fn cell_from_projection(g: &mut Graph, w_hh: Var, pre: Var, h: Var, c: Var, n: usize) -> Result<(Var, Var), TensorError> {
    let rec = g.matmul_bt(h, w_hh)?;
    let z = g.add(pre, rec)?;
    let zi = g.slice(z, 0, n)?;
    let zf = g.slice(z, n, n)?;
    let zg = g.slice(z, 2 * n, n)?;
    let zo = g.slice(z, 3 * n, n)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let cand = g.tanh(zg)?;
    let o = g.sigmoid(zo)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new)?;
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// One LSTM step on input `x`; returns `(h, c)`.
pub fn lstm_cell(g: &mut Graph, p: &LstmParams, x: Var, h: Var, c: Var) -> Result<(Var, Var), TensorError> {
    let n = p.hidden(g);
    let proj = g.matmul_bt(x, p.w_ih)?;
    let pre = g.add(proj, p.bias)?;
    cell_from_projection(g, p.w_hh, pre, h, c, n)
}

/// Runs one direction over `[S, in]`; outputs `[S, H]` in time order.
fn run_direction(g: &mut Graph, p: &LstmParams, x: Var, reverse: bool) -> Result<Var, TensorError> {
    let n = p.hidden(g);
    let s = g.shape(x)[0];
    let proj = g.matmul_bt(x, p.w_ih)?;
    let pre_all = g.add_row(proj, p.bias)?;
    let mut h = g.leaf(vec![n], vec![0.0; n], false)?;
    let mut c = g.leaf(vec![n], vec![0.0; n], false)?;
    let mut outs = vec![h; s];
    let order: Vec<usize> = if reverse { (0..s).rev().collect() } else { (0..s).collect() };
    for t in order {
        let pre = g.index(pre_all, t)?;
        (h, c) = cell_from_projection(g, p.w_hh, pre, h, c, n)?;
        outs[t] = h;
    }
    g.stack(&outs)
}

/// Length after `layers` halvings, each dropping an unpaired trailing step.
pub fn subsampled_len(frames: usize, layers: usize) -> usize {
    (0..layers).fold(frames, |s, _| s / 2)
}

/// Stacked Bi-LSTM over `[S, in]` features. After each layer only even-indexed
/// steps of complete pairs are kept, so the output is `[S', 2H]` with `S'` the
/// repeated floor-halving of `S`.
pub fn bilstm_encode(g: &mut Graph, p: &Bound, cfg: &Seq2SeqConfig, features: Var) -> Result<Var, Seq2SeqError> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::InvalidArgument(format!("bilstm_encode expects [S, D], got {shape:?}")).into());
    }
    let needed = cfg.min_frames();
    if shape[0] < needed {
        return Err(Seq2SeqError::TooShort { frames: shape[0], needed });
    }
    let mut x = features;
    for l in 0..cfg.encoder.layers {
        let fwd = LstmParams::bind(p, &format!("encoder.lstm{l}.fwd"))?;
        let bwd = LstmParams::bind(p, &format!("encoder.lstm{l}.bwd"))?;
        let hf = run_direction(g, &fwd, x, false)?;
        let hb = run_direction(g, &bwd, x, true)?;
        let both = g.concat(&[hf, hb])?;
        let s = g.shape(both)[0];
        let keep: Vec<usize> = (0..s / 2).map(|k| 2 * k).collect();
        x = g.select_rows(both, &keep)?;
    }
    Ok(x)
}
