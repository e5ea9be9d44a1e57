//! Transfer pretraining: regress standardized log-Mel and/or MFCC frames from
//! raw frames through the trunk plus per-kind heads, then export the trunk.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError, RngState};
use crate::config::{PretrainTarget, RunConfig};
use crate::corpus::PreparedUtterance;
use crate::diffcore::{clip_grad_norm, BindMode, Bound, Graph, OptimizerState, ParameterSet, TensorError, Var};
use crate::dsp::{DspError, FeatureKind, FrameMatrix, SpectralFeatures, Standardizer};
use crate::rawenc::{init_head, init_trunk, predict_features, utterance_maps, RawEncoderConfig};

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("utterance {id}: {frames} frames but {targets} target rows")]
    FrameMismatch { id: String, frames: usize, targets: usize },
    #[error("missing {0} targets")]
    MissingTarget(&'static str),
    #[error("{0} pretraining called with the wrong target kind")]
    WrongTarget(&'static str),
    #[error("no utterances to pretrain on")]
    EmptyCorpus,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("image: {0}")]
    Image(String),
}

pub fn target_kinds(target: PretrainTarget) -> &'static [FeatureKind] {
    match target {
        PretrainTarget::Fbank => &[FeatureKind::LogMel],
        PretrainTarget::Mfcc => &[FeatureKind::Mfcc],
        PretrainTarget::Multi => &[FeatureKind::LogMel, FeatureKind::Mfcc],
    }
}

/// Standardized regression targets of one utterance.
#[derive(Debug, Clone)]
pub struct PretrainExample {
    pub id: String,
    pub frames: FrameMatrix,
    pub logmel: Option<SpectralFeatures>,
    pub mfcc: Option<SpectralFeatures>,
}

impl PretrainExample {
    pub fn target(&self, kind: FeatureKind) -> Result<&SpectralFeatures, PretrainError> {
        match kind {
            FeatureKind::LogMel => self.logmel.as_ref(),
            FeatureKind::Mfcc => self.mfcc.as_ref(),
        }
        .ok_or(PretrainError::MissingTarget(kind.name()))
    }
}

/// Per-dimension statistics of both target kinds, pooled over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetStats {
    pub logmel: Standardizer,
    pub mfcc: Standardizer,
}

impl TargetStats {
    pub fn fit(utts: &[PreparedUtterance]) -> Result<Self, PretrainError> {
        if utts.is_empty() {
            return Err(PretrainError::EmptyCorpus);
        }
        let lm: Vec<&SpectralFeatures> = utts.iter().map(|u| &u.logmel).collect();
        let mf: Vec<&SpectralFeatures> = utts.iter().map(|u| &u.mfcc).collect();
        Ok(Self { logmel: Standardizer::fit(&lm)?, mfcc: Standardizer::fit(&mf)? })
    }

    pub fn get(&self, kind: FeatureKind) -> &Standardizer {
        match kind {
            FeatureKind::LogMel => &self.logmel,
            FeatureKind::Mfcc => &self.mfcc,
        }
    }

    pub fn store(&self, ck: &mut Checkpoint) {
        for kind in [FeatureKind::LogMel, FeatureKind::Mfcc] {
            let s = self.get(kind);
            ck.extras.insert(format!("stats.{}.mean", kind.name()), s.mean.clone());
            ck.extras.insert(format!("stats.{}.std", kind.name()), s.std.clone());
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Option<Self> {
        let get = |kind: FeatureKind| {
            Some(Standardizer {
                mean: ck.extras.get(&format!("stats.{}.mean", kind.name()))?.clone(),
                std: ck.extras.get(&format!("stats.{}.std", kind.name()))?.clone(),
            })
        };
        Some(Self { logmel: get(FeatureKind::LogMel)?, mfcc: get(FeatureKind::Mfcc)? })
    }

    pub fn examples(&self, utts: &[PreparedUtterance], target: PretrainTarget) -> Result<Vec<PretrainExample>, PretrainError> {
        let kinds = target_kinds(target);
        utts.iter()
            .map(|u| {
                let lm = kinds.contains(&FeatureKind::LogMel).then(|| self.logmel.apply(&u.logmel)).transpose()?;
                let mf = kinds.contains(&FeatureKind::Mfcc).then(|| self.mfcc.apply(&u.mfcc)).transpose()?;
                Ok(PretrainExample { id: u.id.clone(), frames: u.frames.clone(), logmel: lm, mfcc: mf })
            })
            .collect()
    }
}

/// Trunk plus the heads `target` needs.
pub fn init_pretrain_params(cfg: &RunConfig, target: PretrainTarget, seed: u64) -> ParameterSet {
    let mut ps = ParameterSet::new();
    init_trunk(&cfg.model.trunk, seed, &mut ps);
    for &kind in target_kinds(target) {
        let dim = match kind {
            FeatureKind::LogMel => cfg.features.n_mels,
            FeatureKind::Mfcc => cfg.features.n_ceps,
        };
        init_head(&cfg.model.trunk, kind, dim, seed, &mut ps);
    }
    ps
}

/// `(1/S) Σ_s Σ_d (f_s(d) − z_s(d))²` summed over the requested kinds.
pub fn regression_loss(g: &mut Graph, p: &Bound, trunk: &RawEncoderConfig, ex: &PretrainExample, kinds: &[FeatureKind]) -> Result<Var, PretrainError> {
    let maps = utterance_maps(g, p, trunk, &ex.frames)?;
    let mut total: Option<Var> = None;
    for &kind in kinds {
        let t = ex.target(kind)?;
        if t.n_frames != ex.frames.n_frames {
            return Err(PretrainError::FrameMismatch { id: ex.id.clone(), frames: ex.frames.n_frames, targets: t.n_frames });
        }
        let pred = predict_features(g, p, trunk, maps, kind)?;
        let target = g.leaf(vec![t.n_frames, t.dim], t.values.clone(), false)?;
        let l = g.mse(pred, target)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    total.ok_or(PretrainError::MissingTarget("any"))
}

/// Predicted `[S, D]` features for one utterance.
pub fn predict(params: &ParameterSet, trunk: &RawEncoderConfig, frames: &FrameMatrix, kind: FeatureKind) -> Result<SpectralFeatures, PretrainError> {
    let mut g = Graph::new();
    let p = g.bind(params, BindMode::SkipFrozen)?;
    let maps = utterance_maps(&mut g, &p, trunk, frames)?;
    let pred = predict_features(&mut g, &p, trunk, maps, kind)?;
    let shape = g.shape(pred).to_vec();
    Ok(SpectralFeatures { values: g.value(pred).to_vec(), n_frames: shape[0], dim: shape[1], kind, stats: None })
}

/// Mean regression loss over a set of examples.
pub fn corpus_loss(params: &ParameterSet, trunk: &RawEncoderConfig, examples: &[PretrainExample], kinds: &[FeatureKind]) -> Result<f64, PretrainError> {
    if examples.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let mut sum = 0.0;
    for ex in examples {
        let mut g = Graph::new();
        let p = g.bind(params, BindMode::All)?;
        let l = regression_loss(&mut g, &p, trunk, ex, kinds)?;
        sum += g.scalar(l);
    }
    Ok(sum / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(epoch, mean loss over the epoch's updates)`, epochs counted from 1.
    pub epoch_losses: Vec<(usize, f64)>,
    /// Loss of every update, in order.
    pub step_losses: Vec<f64>,
}

impl PretrainOutcome {
    pub fn write_loss_csv(&self, path: &Path) -> Result<(), PretrainError> {
        let mut out = String::from("epoch,mean_loss\n");
        for (e, l) in &self.epoch_losses {
            out.push_str(&format!("{e},{l:.12e}\n"));
        }
        std::fs::write(path, out).map_err(|source| PretrainError::Io { path: path.to_path_buf(), source })
    }
}

/// Momentum-SGD regression over `examples`, one shuffled pass per epoch,
/// `batch_size` utterances per update, stopping early at `max_steps`.
pub fn pretrain(cfg: &RunConfig, examples: &[PretrainExample], params: ParameterSet) -> Result<PretrainOutcome, PretrainError> {
    if examples.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let pc = &cfg.pretrain;
    let kinds = target_kinds(pc.target);
    let trunk = &cfg.model.trunk;
    let mut params = params;
    let mut opt = OptimizerState::momentum_sgd(pc.learning_rate, pc.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut step_losses = Vec::new();
    let limit = pc.max_steps.unwrap_or(usize::MAX);
    let mut epoch = 0;
    'outer: while epoch < pc.epochs && step_losses.len() < limit {
        epoch += 1;
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut n = 0;
        for batch in order.chunks(pc.batch_size) {
            if step_losses.len() >= limit {
                if n > 0 {
                    epoch_losses.push((epoch, sum / n as f64));
                }
                break 'outer;
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::new();
                let p = g.bind(&params, BindMode::SkipFrozen)?;
                let l = regression_loss(&mut g, &p, trunk, &examples[i], kinds)?;
                let scaled = g.scale(l, 1.0 / batch.len() as f64)?;
                batch_loss += g.scalar(scaled);
                g.backward(scaled)?;
                g.export_grads(&p, &mut params)?;
            }
            if let Some(c) = pc.clip_norm {
                clip_grad_norm(&mut params, c)?;
            }
            opt.step(&mut params)?;
            step_losses.push(batch_loss);
            sum += batch_loss;
            n += 1;
        }
        epoch_losses.push((epoch, sum / n as f64));
    }
    let mut ck = Checkpoint::new(cfg.fingerprint(), "pretrain", params);
    ck.epoch = epoch as u64;
    ck.rng = Some(RngState::capture(&rng));
    ck.optimizer = Some(opt);
    ck.meta.insert("target".into(), pc.target.name().into());
    Ok(PretrainOutcome { checkpoint: ck, epoch_losses, step_losses })
}

/// Single-target regression; rejects a multi target.
pub fn pretrain_single(cfg: &RunConfig, examples: &[PretrainExample], params: ParameterSet) -> Result<PretrainOutcome, PretrainError> {
    if cfg.pretrain.target == PretrainTarget::Multi {
        return Err(PretrainError::WrongTarget("single"));
    }
    pretrain(cfg, examples, params)
}

/// Joint log-Mel plus MFCC regression through a shared trunk.
pub fn pretrain_multi(cfg: &RunConfig, examples: &[PretrainExample], params: ParameterSet) -> Result<PretrainOutcome, PretrainError> {
    if cfg.pretrain.target != PretrainTarget::Multi {
        return Err(PretrainError::WrongTarget("multi"));
    }
    pretrain(cfg, examples, params)
}

/// Trunk parameters only (conv1–4 and the NIN sublayers), values copied bit for bit.
pub fn export_transferred(ck: &Checkpoint, trunk: &RawEncoderConfig) -> Result<Checkpoint, PretrainError> {
    let paths = trunk.trunk_paths();
    for p in &paths {
        if !ck.params.contains(p) {
            return Err(CheckpointError::MissingPath(p.clone()).into());
        }
    }
    let params = ck.params.subset(paths.iter().map(String::as_str))?;
    let mut out = Checkpoint::new(ck.fingerprint.clone(), "transfer", params);
    out.epoch = ck.epoch;
    out.extras = ck.extras.clone();
    out.meta = ck.meta.clone();
    Ok(out)
}

/// Writes `<stem>.csv` (each row: frame, original dims, predicted dims) and
/// `<stem>.png` (original on top, prediction below, shared gray scale).
pub fn emit_comparison_plot(original: &SpectralFeatures, predicted: &SpectralFeatures, stem: &Path) -> Result<(), PretrainError> {
    if (original.n_frames, original.dim) != (predicted.n_frames, predicted.dim) {
        return Err(DspError::DimensionMismatch { expected: original.values.len(), found: predicted.values.len() }.into());
    }
    let (s, d) = (original.n_frames, original.dim);
    let csv_path = stem.with_extension("csv");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PretrainError::Io { path, source }
    };
    let mut csv = Vec::new();
    let header: Vec<String> = std::iter::once("frame".to_string())
        .chain((0..d).map(|i| format!("orig_{i}")))
        .chain((0..d).map(|i| format!("pred_{i}")))
        .collect();
    writeln!(csv, "{}", header.join(",")).expect("write to vec");
    for f in 0..s {
        let cells: Vec<String> = original.row(f).iter().chain(predicted.row(f)).map(|v| format!("{v:.6}")).collect();
        writeln!(csv, "{f},{}", cells.join(",")).expect("write to vec");
    }
    std::fs::write(&csv_path, csv).map_err(io(&csv_path))?;

    const SCALE: u32 = 4;
    const GAP: u32 = 2;
    let lo = original.values.iter().chain(&predicted.values).cloned().fold(f64::INFINITY, f64::min);
    let hi = original.values.iter().chain(&predicted.values).cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (s as u32 * SCALE, d as u32 * SCALE);
    let mut img = image::GrayImage::from_pixel(w, 2 * h + GAP, image::Luma([255]));
    for (panel, m) in [original, predicted].into_iter().enumerate() {
        for f in 0..s {
            for k in 0..d {
                let level = ((m.row(f)[k] - lo) / span * 255.0).round() as u8;
                // Low frequencies at the bottom of each panel.
                let y0 = panel as u32 * (h + GAP) + (d - 1 - k) as u32 * SCALE;
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        img.put_pixel(f as u32 * SCALE + dx, y0 + dy, image::Luma([level]));
                    }
                }
            }
        }
    }
    let png_path = stem.with_extension("png");
    img.save(&png_path).map_err(|e| PretrainError::Image(format!("{}: {e}", png_path.display())))
}
