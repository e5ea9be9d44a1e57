use super::*;
use crate::config::PretrainTarget;
use crate::corpus::{build_corpus, prepare_manifest};
use crate::model::ModelConfig;
use crate::pretrain::init_pretrain_params;
use crate::rawenc::RawEncoderConfig;
use crate::seq2seq::{AttentionConfig, DecoderConfig, EncoderConfig, ScoreVariant};

fn tiny_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    let mut trunk = RawEncoderConfig::with_channels(4);
    trunk.nin_channels = vec![4, 4, 4];
    cfg.model = ModelConfig {
        trunk,
        encoder: EncoderConfig { hidden: 3, layers: 3 },
        attention: AttentionConfig { variant: ScoreVariant::Mlp, hidden: 4 },
        decoder: DecoderConfig { embed_dim: 4, hidden: 6 },
    };
    cfg.features.n_mels = 6;
    cfg.features.n_ceps = 4;
    cfg.corpus.max_symbols = 4;
    cfg.decode.beam_size = 2;
    cfg.train.learning_rate = 0.01;
    cfg
}

fn utterances(cfg: &RunConfig, n: usize, dir: &Path) -> Vec<PreparedUtterance> {
    let mut cc = cfg.corpus.clone();
    cc.utterances = n;
    let corpus = build_corpus(&cc, 16_000, 2, dir).unwrap();
    prepare_manifest(&corpus.train, cfg).unwrap()
}

fn transfer_for(cfg: &RunConfig) -> Checkpoint {
    let mut ps = init_pretrain_params(cfg, PretrainTarget::Multi, 99);
    for (_, t) in ps.iter_mut() {
        t.values_mut().iter_mut().for_each(|v| *v += 0.01);
    }
    let ck = Checkpoint::new(cfg.fingerprint(), "pretrain", ps);
    crate::pretrain::export_transferred(&ck, &cfg.model.trunk).unwrap()
}

fn bits(ps: &ParameterSet, paths: &[String]) -> Vec<u64> {
    paths.iter().flat_map(|p| ps.get(p).unwrap().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn transfer_loads_trunk_only() {
    let cfg = tiny_run();
    let t = transfer_for(&cfg);
    let fresh = initial_params(&cfg, None).unwrap();
    let loaded = initial_params(&cfg, Some(&t)).unwrap();
    let trunk = cfg.model.trunk.trunk_paths();
    assert_eq!(bits(&loaded, &trunk), bits(&t.params, &trunk));
    assert_ne!(bits(&loaded, &trunk), bits(&fresh, &trunk));
    let rest: Vec<String> = fresh.paths().filter(|p| !trunk.contains(p)).cloned().collect();
    assert!(!rest.is_empty());
    assert_eq!(bits(&loaded, &rest), bits(&fresh, &rest));

    let mut other = cfg.clone();
    other.features.n_mels = 7;
    assert!(matches!(initial_params(&other, Some(&t)), Err(TrainError::Checkpoint(CheckpointError::FingerprintMismatch { .. }))));
    let mut partial = t.clone();
    partial.params.remove(&trunk[0]);
    assert!(matches!(initial_params(&cfg, Some(&partial)), Err(TrainError::IncompleteTransfer(_))));
}

#[test]
fn freeze_then_unfreeze() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run();
    cfg.train.freeze_epochs = 2;
    cfg.train.total_epochs = 4;
    cfg.train.eval_dev = false;
    let utts = utterances(&cfg, 3, dir.path());
    let t = transfer_for(&cfg);
    let trunk = cfg.model.trunk.trunk_paths();
    let mut snaps = Vec::new();
    let out = train_joint(&cfg, &utts, &[], Some(&t), |e, ps| snaps.push((e, ps.clone()))).unwrap();
    assert_eq!(snaps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    let start = bits(&t.params, &trunk);
    for (e, ps) in &snaps[..3] {
        assert_eq!(bits(ps, &trunk), start, "trunk moved by epoch {e}");
    }
    assert_ne!(bits(&snaps[3].1, &trunk), start);
    let dec = vec!["decoder.out.weight".to_string()];
    assert_ne!(bits(&snaps[1].1, &dec), bits(&snaps[0].1, &dec));
    let n_trunk = cfg.model.trunk.trunk_parameter_count();
    let frozen: Vec<usize> = out.history.iter().map(|r| r.frozen_params).collect();
    assert_eq!(frozen, vec![n_trunk, n_trunk, 0, 0]);
    assert!(out.last.params.frozen_paths().is_empty());

    cfg.train.freeze_epochs = 0;
    cfg.train.total_epochs = 1;
    let out = train_joint(&cfg, &utts, &[], Some(&t), |_, _| {}).unwrap();
    assert_eq!(out.history[0].frozen_params, 0);
    assert_ne!(bits(&out.last.params, &trunk), start);
}

#[test]
fn runs_are_deterministic_and_learn() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_run();
    cfg.train.total_epochs = 6;
    cfg.train.freeze_epochs = 0;
    let utts = utterances(&cfg, 2, dir.path());
    let a = train_joint(&cfg, &utts, &utts, None, |_, _| {}).unwrap();
    let b = train_joint(&cfg, &utts, &utts, None, |_, _| {}).unwrap();
    assert_eq!(a.trace_csv(), b.trace_csv());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    let first = a.history.first().unwrap().train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "{last} >= {first}");
    assert!(a.history.iter().all(|r| r.dev_cer.is_some()));

    let cers: Vec<f64> = a.history.iter().map(|r| r.dev_cer.unwrap()).collect();
    let min = cers.iter().cloned().fold(f64::INFINITY, f64::min);
    let best_epoch = cers.iter().position(|c| *c == min).unwrap() + 1;
    let best = a.best.as_ref().unwrap();
    assert_eq!(best.epoch as usize, best_epoch);
    let cer = corpus_cer(&best.params, &cfg, &utts).unwrap();
    assert_eq!(cer, min);
    assert_eq!(a.trace_csv().lines().count(), 7);
}

#[test]
fn empty_training_set() {
    let cfg = tiny_run();
    assert!(matches!(train_joint(&cfg, &[], &[], None, |_, _| {}), Err(TrainError::EmptyCorpus)));
}
