//! Run configuration: TOML with dotted sections, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::FrameSpec;
use crate::model::ModelConfig;

/// Overrides `paths.out_dir` when set.
pub const OUT_DIR_ENV: &str = "WAV2TEXT_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate_hz: u32,
    pub frame_length_ms: u32,
    pub hop_ms: u32,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self { sample_rate_hz: 16_000, frame_length_ms: 25, hop_ms: 10 }
    }
}

impl AudioConfig {
    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec { frame_length_ms: self.frame_length_ms, hop_ms: self.hop_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Log-Mel target dimension.
    pub n_mels: usize,
    /// MFCC target dimension.
    pub n_ceps: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_mels: 40, n_ceps: 13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainTarget {
    #[serde(alias = "logmel")]
    Fbank,
    Mfcc,
    Multi,
}

impl PretrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            PretrainTarget::Fbank => "fbank",
            PretrainTarget::Mfcc => "mfcc",
            PretrainTarget::Multi => "multi",
        }
    }
}

impl std::str::FromStr for PretrainTarget {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fbank" | "logmel" => Ok(Self::Fbank),
            "mfcc" => Ok(Self::Mfcc),
            "multi" => Ok(Self::Multi),
            _ => Err(ConfigError::Invalid(format!("unknown pretrain target {s:?} (fbank, mfcc, multi)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub target: PretrainTarget,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Utterances per update.
    pub batch_size: usize,
    /// Stops after this many updates when set.
    pub max_steps: Option<usize>,
    /// Global gradient-norm ceiling per update.
    pub clip_norm: Option<f64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { target: PretrainTarget::Multi, epochs: 20, learning_rate: 0.01, momentum: 0.9, batch_size: 1, max_steps: None, clip_norm: Some(5.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Transferred layers stay frozen for epochs `0..freeze_epochs`.
    pub freeze_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    /// Decode the dev set after every epoch.
    pub eval_dev: bool,
    /// Global gradient-norm ceiling per update.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze_epochs: 10,
            total_epochs: 40,
            batch_size: 1,
            eval_dev: true,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Defaults to `2·S' + 10` per utterance.
    pub max_len: Option<usize>,
    pub nbest: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 5, max_len: None, nbest: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Characters transcripts are drawn from.
    pub symbols: String,
    pub utterances: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub motif_ms: u32,
    /// Additive noise level relative to the signal power.
    pub noise_db: f64,
    /// Relative amplitudes of the 2nd, 3rd, ... harmonics.
    pub harmonics: Vec<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            symbols: "abcdefghijklmnopqrstuvwxyz".into(),
            utterances: 100,
            min_symbols: 3,
            max_symbols: 8,
            motif_ms: 100,
            noise_db: -30.0,
            harmonics: vec![0.3, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub audio: AudioConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub corpus: CorpusConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            audio: AudioConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            corpus: CorpusConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// The sections that determine parameter shapes and input semantics.
#[derive(Serialize)]
struct Architecture<'a> {
    audio: &'a AudioConfig,
    features: &'a FeatureConfig,
    model: &'a ModelConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the output directory override from the environment.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            self.paths.out_dir = PathBuf::from(dir);
        }
        self
    }

    /// SHA-256 over the architecture sections, hex encoded.
    pub fn fingerprint(&self) -> String {
        let arch = Architecture { audio: &self.audio, features: &self.features, model: &self.model };
        let text = toml::to_string(&arch).expect("architecture serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let a = &self.audio;
        if a.sample_rate_hz == 0 || a.hop_ms == 0 || a.frame_length_ms == 0 {
            return bad("audio rates and durations must be positive".into());
        }
        let window = a.frame_spec().window(a.sample_rate_hz);
        let first = self.model.trunk.conv.first().map(|c| c.filter).unwrap_or(0);
        if window < first {
            return bad(format!("frame of {window} samples is shorter than the first filter ({first})"));
        }
        self.model
            .trunk
            .length_trace(window)
            .map_err(|e| ConfigError::Invalid(format!("trunk does not fit the frame: {e}")))?;
        let f = &self.features;
        if f.n_mels == 0 || f.n_ceps == 0 || f.n_ceps > f.n_mels {
            return bad(format!("need 0 < n_ceps ({}) <= n_mels ({})", f.n_ceps, f.n_mels));
        }
        let p = &self.pretrain;
        if p.learning_rate <= 0.0 || !(0.0..1.0).contains(&p.momentum) || p.batch_size == 0 {
            return bad("pretrain needs lr > 0, momentum in [0, 1), batch_size >= 1".into());
        }
        let t = &self.train;
        if t.learning_rate <= 0.0
            || !(0.0..1.0).contains(&t.beta1)
            || !(0.0..1.0).contains(&t.beta2)
            || t.eps <= 0.0
            || t.batch_size == 0
        {
            return bad("train needs lr > 0, betas in [0, 1), eps > 0, batch_size >= 1".into());
        }
        if [p.clip_norm, t.clip_norm].iter().flatten().any(|c| !(*c > 0.0)) {
            return bad("clip_norm must be positive when set".into());
        }
        if t.freeze_epochs > t.total_epochs {
            return bad(format!("freeze_epochs ({}) exceeds total_epochs ({})", t.freeze_epochs, t.total_epochs));
        }
        if self.decode.beam_size == 0 || self.decode.max_len == Some(0) || self.decode.nbest == 0 {
            return bad("decode needs beam_size, max_len and nbest >= 1".into());
        }
        let c = &self.corpus;
        if c.symbols.is_empty() || c.min_symbols == 0 || c.min_symbols > c.max_symbols || c.motif_ms == 0 {
            return bad("corpus needs symbols, 1 <= min_symbols <= max_symbols, motif_ms > 0".into());
        }
        let vocab = crate::seq2seq::Vocabulary;
        if let Some(ch) = c.symbols.chars().find(|&ch| vocab.char_index(ch).is_none()) {
            return bad(format!("corpus symbol {ch:?} is not in the vocabulary"));
        }
        Ok(())
    }
}
