//! Command-line front end for data preparation, pretraining, training,
//! decoding and scoring.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wav2text::checkpoint::Checkpoint;
use wav2text::config::{PretrainTarget, RunConfig};
use wav2text::corpus::{build_corpus, prepare_manifest, read_manifest, PreparedUtterance};
use wav2text::decode_eval::{write_nbest, ErrorCounts};
use wav2text::dsp::{FeatureKind, Standardizer};
use wav2text::model::decode_utterance;
use wav2text::pretrain::{self, TargetStats};
use wav2text::seq2seq::Vocabulary;
use wav2text::train::train_joint;

#[derive(Parser)]
#[command(name = "wav2text", version, about = "Raw-waveform attention speech recognizer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: audio/*.wav plus train/dev/test manifests.
    PrepareData {
        /// Target directory; defaults to <out_dir>/corpus.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-utterance log-Mel and MFCC CSVs plus pooled statistics.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to <out_dir>/features.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write standardized values instead of raw ones.
        #[arg(long)]
        standardize: bool,
    },
    /// Regress spectral features from raw frames and export the trunk.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// fbank, mfcc or multi; overrides the configured target.
        #[arg(long)]
        target: Option<PretrainTarget>,
        /// Defaults to <out_dir>/pretrain.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Joint training with Adam, optionally from a transferred trunk.
    Train {
        #[arg(long)]
        train: PathBuf,
        /// Dev manifest for per-epoch CER and best-model selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Checkpoint written by `pretrain` (transfer.ckpt).
        #[arg(long)]
        transfer_from: Option<PathBuf>,
        /// Defaults to <out_dir>/train.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam-search decode a manifest into `id<TAB>transcript` lines.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Hypothesis file; defaults to <out_dir>/decode/hyp.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured beam size.
        #[arg(long)]
        beam: Option<usize>,
        /// Also write one n-best list per utterance into this directory.
        #[arg(long)]
        nbest_dir: Option<PathBuf>,
    },
    /// Score hypotheses against references (CER and WER, micro-averaged).
    Evaluate {
        /// Tab-separated, id first, transcript last.
        #[arg(long)]
        hyp: PathBuf,
        /// Same layout as --hyp; a manifest works as is.
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        /// Metrics CSV; defaults to stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Original vs predicted spectrogram of one utterance, as CSV and PNG.
    PlotCompare {
        /// Pretraining checkpoint (pretrain.ckpt, with heads).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Utterance id; the first manifest entry when omitted.
        #[arg(long)]
        utt: Option<String>,
        #[arg(long, value_enum, default_value = "logmel")]
        kind: Kind,
        /// Output stem; defaults to <out_dir>/plots/<utt>.<kind>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Logmel,
    Mfcc,
}

impl From<Kind> for FeatureKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Logmel => FeatureKind::LogMel,
            Kind::Mfcc => FeatureKind::Mfcc,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg.with_env_overrides())
}

fn out_dir(cfg: &RunConfig, explicit: Option<PathBuf>, sub: &str) -> Result<PathBuf> {
    let dir = explicit.unwrap_or_else(|| cfg.paths.out_dir.join(sub));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_utterances(path: &Path, cfg: &RunConfig) -> Result<Vec<PreparedUtterance>> {
    let m = read_manifest(path)?;
    Ok(prepare_manifest(&m, cfg)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::PrepareData { out } => {
            let dir = out_dir(&cfg, out, "corpus")?;
            let c = build_corpus(&cfg.corpus, cfg.audio.sample_rate_hz, cfg.seed, &dir)?;
            println!("prepared {} train / {} dev / {} test utterances in {}", c.train.len(), c.dev.len(), c.test.len(), dir.display());
        }
        Command::ExtractFeatures { manifest, out, standardize } => {
            let utts = load_utterances(&manifest, &cfg)?;
            let dir = out_dir(&cfg, out, "features")?;
            let stats = TargetStats::fit(&utts)?;
            for u in &utts {
                for (f, st) in [(&u.logmel, &stats.logmel), (&u.mfcc, &stats.mfcc)] {
                    let f = if standardize { st.apply(f)? } else { f.clone() };
                    let path = dir.join(format!("{}.{}.csv", u.id, f.kind.name()));
                    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    f.write_csv(std::io::BufWriter::new(file))?;
                }
            }
            write_stats(&dir.join("stats.csv"), &stats)?;
            println!("extracted features for {} utterances into {}", utts.len(), dir.display());
        }
        Command::Pretrain { manifest, target, out } => {
            let mut cfg = cfg;
            if let Some(t) = target {
                cfg.pretrain.target = t;
            }
            let utts = load_utterances(&manifest, &cfg)?;
            let dir = out_dir(&cfg, out, "pretrain")?;
            let stats = TargetStats::fit(&utts)?;
            let examples = stats.examples(&utts, cfg.pretrain.target)?;
            let params = pretrain::init_pretrain_params(&cfg, cfg.pretrain.target, cfg.seed);
            let mut outcome = if cfg.pretrain.target == PretrainTarget::Multi {
                pretrain::pretrain_multi(&cfg, &examples, params)?
            } else {
                pretrain::pretrain_single(&cfg, &examples, params)?
            };
            stats.store(&mut outcome.checkpoint);
            outcome.checkpoint.save(dir.join("pretrain.ckpt"))?;
            pretrain::export_transferred(&outcome.checkpoint, &cfg.model.trunk)?.save(dir.join("transfer.ckpt"))?;
            outcome.write_loss_csv(&dir.join("loss.csv"))?;
            let last = outcome.epoch_losses.last().map(|e| e.1).unwrap_or(f64::NAN);
            println!(
                "pretrained {} target for {} steps, final epoch loss {last:.6}; wrote {}",
                cfg.pretrain.target.name(),
                outcome.step_losses.len(),
                dir.display()
            );
        }
        Command::Train { train, dev, transfer_from, out } => {
            let transfer = transfer_from
                .as_ref()
                .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let train_utts = load_utterances(&train, &cfg)?;
            let dev_utts = dev.as_ref().map(|p| load_utterances(p, &cfg)).transpose()?.unwrap_or_default();
            let dir = out_dir(&cfg, out, "train")?;
            let outcome = train_joint(&cfg, &train_utts, &dev_utts, transfer.as_ref(), |_, _| {})?;
            outcome.last.save(dir.join("last.ckpt"))?;
            if let Some(best) = &outcome.best {
                best.save(dir.join("best.ckpt"))?;
            }
            outcome.write_trace_csv(&dir.join("trace.csv"))?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs, final train loss {:.6}, dev cer {}; wrote {}",
                last.epoch,
                last.train_loss,
                last.dev_cer.map(|c| format!("{c:.4}")).unwrap_or_else(|| "n/a".into()),
                dir.display()
            );
        }
        Command::Decode { checkpoint, manifest, out, beam, nbest_dir } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            ck.check_fingerprint(&cfg.fingerprint())?;
            let utts = load_utterances(&manifest, &cfg)?;
            let out = match out {
                Some(p) => p,
                None => out_dir(&cfg, None, "decode")?.join("hyp.tsv"),
            };
            if let Some(d) = &nbest_dir {
                fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            }
            let beam = beam.unwrap_or(cfg.decode.beam_size);
            let mut lines = Vec::new();
            for u in &utts {
                let result = decode_utterance(&ck.params, &cfg.model, &u.frames, beam, cfg.decode.max_len)?;
                let hyp = Vocabulary.transcript(&result.best.symbols)?;
                writeln!(lines, "{}\t{}", u.id, hyp)?;
                if let Some(d) = &nbest_dir {
                    let n = cfg.decode.nbest.min(result.nbest.len());
                    let path = d.join(format!("{}.nbest.tsv", u.id));
                    write_nbest(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?, &result.nbest[..n])?;
                }
            }
            fs::write(&out, lines).with_context(|| format!("writing {}", out.display()))?;
            println!("decoded {} utterances with beam {beam} into {}", utts.len(), out.display());
        }
        Command::Evaluate { hyp, reference, out } => {
            let hyps = read_transcripts(&hyp)?;
            let refs = read_transcripts(&reference)?;
            let (mut chars, mut words) = (ErrorCounts::default(), ErrorCounts::default());
            for (id, r) in &refs {
                let Some((_, h)) = hyps.iter().find(|(hid, _)| hid == id) else {
                    bail!("no hypothesis for utterance {id} in {}", hyp.display());
                };
                chars.add(ErrorCounts::chars(h, r));
                words.add(ErrorCounts::words(h, r));
            }
            let (cer, wer) = (chars.rate()?, words.rate()?);
            let csv = format!(
                "metric,errors,reference_length,rate\ncer,{},{},{cer:.6}\nwer,{},{},{wer:.6}\n",
                chars.edits, chars.ref_len, words.edits, words.ref_len
            );
            if let Some(p) = &out {
                fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            }
            print!("{csv}");
            println!("CER {:.2}% WER {:.2}% over {} utterances", 100.0 * cer, 100.0 * wer, refs.len());
        }
        Command::PlotCompare { checkpoint, manifest, utt, kind, out } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            ck.check_fingerprint(&cfg.fingerprint())?;
            let stats = TargetStats::from_checkpoint(&ck).context("checkpoint carries no feature statistics")?;
            let m = read_manifest(&manifest)?;
            let entry = match &utt {
                Some(id) => m.entries.iter().find(|u| &u.id == id).with_context(|| format!("no utterance {id} in manifest"))?,
                None => m.entries.first().context("empty manifest")?,
            };
            let u = wav2text::corpus::prepare_utterance(entry, &cfg)?;
            let kind = FeatureKind::from(kind);
            let original = match kind {
                FeatureKind::LogMel => stats.logmel.apply(&u.logmel)?,
                FeatureKind::Mfcc => stats.mfcc.apply(&u.mfcc)?,
            };
            let predicted = pretrain::predict(&ck.params, &cfg.model.trunk, &u.frames, kind)?;
            let stem = match out {
                Some(p) => p,
                None => out_dir(&cfg, None, "plots")?.join(format!("{}.{}", u.id, kind.name())),
            };
            pretrain::emit_comparison_plot(&original, &predicted, &stem)?;
            let mse = original.values.iter().zip(&predicted.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / original.n_frames as f64;
            println!("wrote {} and {} (per-frame squared error {mse:.4})", stem.with_extension("csv").display(), stem.with_extension("png").display());
        }
    }
    Ok(())
}

fn write_stats(path: &Path, stats: &TargetStats) -> Result<()> {
    let mut out = String::from("kind,dim,mean,std\n");
    for (name, s) in [("logmel", &stats.logmel), ("mfcc", &stats.mfcc)] {
        let s: &Standardizer = s;
        for (d, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
            out.push_str(&format!("{name},{d},{m:.12e},{sd:.12e}\n"));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// `(id, transcript)` from tab-separated lines: id in the first field, transcript in the last.
fn read_transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            bail!("{}:{}: expected id and transcript separated by a tab", path.display(), i + 1);
        }
        out.push((fields[0].to_string(), fields[fields.len() - 1].to_string()));
    }
    Ok(out)
}
