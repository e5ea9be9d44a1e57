use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize_transcript, synth_utterance, CorpusError};
use crate::config::CorpusConfig;
use crate::dsp::write_wav_pcm16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub audio_path: PathBuf,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub split: String,
    pub entries: Vec<Utterance>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub train: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Writes `id \t audio_path \t transcript` rows, paths relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), CorpusError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for u in &m.entries {
        let rel = u.audio_path.strip_prefix(base).unwrap_or(&u.audio_path);
        writeln!(out, "{}\t{}\t{}", u.id, rel.display(), u.transcript).expect("write to vec");
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a manifest; ids must be unique, transcripts normalized and audio present.
pub fn read_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let split = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CorpusError::Manifest { path: path.to_path_buf(), line: i + 1, msg };
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let [id, audio, transcript] = fields[..] else {
            return Err(bad("expected id, audio_path and transcript separated by tabs".into()));
        };
        if !seen.insert(id.to_string()) {
            return Err(bad(format!("duplicate id {id:?}")));
        }
        if transcript.is_empty() || normalize_transcript(transcript) != transcript {
            return Err(bad(format!("transcript {transcript:?} is empty or not normalized")));
        }
        let audio_path = base.join(audio);
        if !audio_path.is_file() {
            return Err(bad(format!("audio file {} not found", audio_path.display())));
        }
        entries.push(Utterance { id: id.to_string(), audio_path, transcript: transcript.to_string() });
    }
    Ok(Manifest { split, entries })
}

fn random_transcript(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> String {
    let symbols: Vec<char> = cfg.symbols.chars().collect();
    let letters: Vec<char> = symbols.iter().copied().filter(|c| *c != ' ').collect();
    let len = rng.gen_range(cfg.min_symbols..=cfg.max_symbols);
    let mut out: Vec<char> = Vec::with_capacity(len);
    for i in 0..len {
        let mut c = symbols[rng.gen_range(0..symbols.len())];
        let edge = i == 0 || i + 1 == len || out.last() == Some(&' ');
        if c == ' ' && edge && !letters.is_empty() {
            c = letters[rng.gen_range(0..letters.len())];
        }
        out.push(c);
    }
    out.into_iter().collect()
}

/// Generates `cfg.utterances` synthetic utterances under `out_dir`, with
/// `audio/*.wav` plus `train.tsv`, `dev.tsv` and `test.tsv`. Dev and test each
/// get `floor(n/10)` utterances after a seeded shuffle; train gets the rest.
pub fn build_corpus(cfg: &CorpusConfig, sample_rate_hz: u32, seed: u64, out_dir: &Path) -> Result<Corpus, CorpusError> {
    if cfg.utterances == 0 || cfg.symbols.is_empty() || cfg.min_symbols == 0 || cfg.min_symbols > cfg.max_symbols {
        return Err(CorpusError::EmptyTranscript);
    }
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::with_capacity(cfg.utterances);
    for i in 0..cfg.utterances {
        let id = format!("utt{i:05}");
        let transcript = random_transcript(cfg, &mut rng);
        let wav = synth_utterance(&transcript, rng.gen(), sample_rate_hz, cfg)?;
        let audio_path = audio_dir.join(format!("{id}.wav"));
        write_wav_pcm16(&audio_path, &wav).map_err(|source| CorpusError::Audio { path: audio_path.clone(), source })?;
        all.push(Utterance { id, audio_path, transcript });
    }
    all.shuffle(&mut rng);
    let n_held = cfg.utterances / 10;
    let test: Vec<Utterance> = all.drain(..n_held).collect();
    let dev: Vec<Utterance> = all.drain(..n_held).collect();
    let sorted = |split: &str, mut v: Vec<Utterance>| {
        v.sort_by(|a, b| a.id.cmp(&b.id));
        Manifest { split: split.to_string(), entries: v }
    };
    let corpus = Corpus { train: sorted("train", all), dev: sorted("dev", dev), test: sorted("test", test) };
    for m in [&corpus.train, &corpus.dev, &corpus.test] {
        write_manifest(&out_dir.join(format!("{}.tsv", m.split)), m)?;
    }
    Ok(corpus)
}
