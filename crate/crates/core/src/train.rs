//! Joint sequence training with Adam, optionally starting from a transferred
//! trunk that stays frozen for the first `freeze_epochs` epochs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointError, RngState};
use crate::config::RunConfig;
use crate::corpus::PreparedUtterance;
use crate::decode_eval::{ErrorCounts, EvalError};
use crate::diffcore::{clip_grad_norm, BindMode, Graph, OptimizerState, ParameterSet, TensorError};
use crate::model::{decode_utterance, init_model, utterance_loss};
use crate::seq2seq::{Seq2SeqError, VocabError, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no training utterances")]
    EmptyCorpus,
    #[error("transfer checkpoint is missing trunk parameter {0}")]
    IncompleteTransfer(String),
    #[error(transparent)]
    Seq2Seq(#[from] Seq2SeqError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_cer: Option<f64>,
    /// Scalars held fixed during this epoch.
    pub frozen_params: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest dev CER so far, earliest epoch on ties.
    pub best: Option<Checkpoint>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_cer,frozen_params\n");
        for r in &self.history {
            let cer = r.dev_cer.map(|c| format!("{c:.12e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.12e},{},{}\n", r.epoch, r.train_loss, cer, r.frozen_params));
        }
        out
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.trace_csv()).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }
}

/// Micro-averaged CER of beam-search output over `utts`.
pub fn corpus_cer(params: &ParameterSet, cfg: &RunConfig, utts: &[PreparedUtterance]) -> Result<f64, TrainError> {
    let mut counts = ErrorCounts::default();
    for u in utts {
        let out = decode_utterance(params, &cfg.model, &u.frames, cfg.decode.beam_size, cfg.decode.max_len)?;
        let hyp = Vocabulary.transcript(&out.best.symbols)?;
        counts.add(ErrorCounts::chars(&hyp, &u.transcript));
    }
    Ok(counts.rate()?)
}

/// Fresh joint parameters, with trunk values copied from `transfer` when given.
pub fn initial_params(cfg: &RunConfig, transfer: Option<&Checkpoint>) -> Result<ParameterSet, TrainError> {
    let mut params = ParameterSet::new();
    init_model(&cfg.model, cfg.seed, &mut params)?;
    if let Some(t) = transfer {
        t.check_fingerprint(&cfg.fingerprint())?;
        let trunk = cfg.model.trunk.trunk_paths();
        if let Some(missing) = trunk.iter().find(|p| !t.params.contains(p)) {
            return Err(TrainError::IncompleteTransfer(missing.clone()));
        }
        params.load_from(&t.params.subset(trunk.iter().map(String::as_str))?)?;
    }
    Ok(params)
}

/// Runs `cfg.train.total_epochs` shuffled passes. `on_epoch` sees the
/// parameters before training (epoch 0) and after every epoch.
pub fn train_joint(
    cfg: &RunConfig,
    train: &[PreparedUtterance],
    dev: &[PreparedUtterance],
    transfer: Option<&Checkpoint>,
    mut on_epoch: impl FnMut(usize, &ParameterSet),
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let tc = &cfg.train;
    let mut params = initial_params(cfg, transfer)?;
    let trunk = cfg.model.trunk.trunk_paths();
    if transfer.is_some() && tc.freeze_epochs > 0 {
        for p in &trunk {
            params.freeze(p)?;
        }
    }
    let mut opt = OptimizerState::adam(tc.learning_rate, (tc.beta1, tc.beta2), tc.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    on_epoch(0, &params);

    for epoch in 1..=tc.total_epochs {
        if epoch == tc.freeze_epochs + 1 && !params.frozen_paths().is_empty() {
            params.unfreeze_all();
            log::info!("epoch {epoch}: trunk unfrozen");
        }
        let frozen_params = params.scalar_count(params.frozen_paths().iter());
        log::info!("epoch {epoch}: frozen: {frozen_params} params");
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for batch in order.chunks(tc.batch_size) {
            let mut batch_loss = 0.0;
            for &i in batch {
                let u = &train[i];
                let mut g = Graph::new();
                let p = g.bind(&params, BindMode::SkipFrozen)?;
                let l = utterance_loss(&mut g, &p, &cfg.model, &u.frames, &u.targets)?;
                let scaled = g.scale(l, 1.0 / batch.len() as f64)?;
                batch_loss += g.scalar(scaled);
                g.backward(scaled)?;
                g.export_grads(&p, &mut params)?;
            }
            if let Some(c) = tc.clip_norm {
                clip_grad_norm(&mut params, c)?;
            }
            opt.step(&mut params)?;
            sum += batch_loss;
            steps += 1;
        }
        let dev_cer = if tc.eval_dev && !dev.is_empty() { Some(corpus_cer(&params, cfg, dev)?) } else { None };
        let record = EpochRecord { epoch, train_loss: sum / steps as f64, dev_cer, frozen_params };
        log::info!("epoch {epoch}: train loss {:.6} dev cer {:?}", record.train_loss, record.dev_cer);
        if let Some(c) = dev_cer {
            if best.as_ref().map_or(true, |(b, _)| c < *b) {
                best = Some((c, snapshot(cfg, epoch, &params, &opt, &rng, transfer.is_some())));
            }
        }
        history.push(record);
        on_epoch(epoch, &params);
    }
    let last = snapshot(cfg, tc.total_epochs, &params, &opt, &rng, transfer.is_some());
    Ok(TrainOutcome { last, best: best.map(|(_, c)| c), history })
}

fn snapshot(cfg: &RunConfig, epoch: usize, params: &ParameterSet, opt: &OptimizerState, rng: &ChaCha8Rng, transfer: bool) -> Checkpoint {
    let mut ck = Checkpoint::new(cfg.fingerprint(), "joint", params.clone());
    ck.epoch = epoch as u64;
    ck.rng = Some(RngState::capture(rng));
    ck.optimizer = Some(opt.clone());
    ck.meta.insert("transfer".into(), transfer.to_string());
    ck
}

#[cfg(test)]
mod tests;
