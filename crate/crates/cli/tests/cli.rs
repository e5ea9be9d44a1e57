use std::path::Path;
use std::process::{Command, Output};

use wav2text::config::RunConfig;
use wav2text::rawenc::RawEncoderConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wav2text"));
    c.env_remove("WAV2TEXT_OUT_DIR").env("RUST_LOG", "info");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn tiny_config(dir: &Path) -> (RunConfig, std::path::PathBuf) {
    let mut cfg = RunConfig::default();
    let mut trunk = RawEncoderConfig::with_channels(4);
    trunk.nin_channels = vec![4, 4, 4];
    cfg.model.trunk = trunk;
    cfg.model.encoder.hidden = 3;
    cfg.model.attention.hidden = 4;
    cfg.model.decoder.embed_dim = 4;
    cfg.model.decoder.hidden = 6;
    cfg.features.n_mels = 8;
    cfg.features.n_ceps = 5;
    cfg.corpus.utterances = 10;
    cfg.corpus.max_symbols = 4;
    cfg.pretrain.epochs = 1;
    cfg.pretrain.learning_rate = 0.001;
    cfg.train.freeze_epochs = 1;
    cfg.train.total_epochs = 2;
    cfg.decode.beam_size = 2;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    (cfg, path)
}

const SUBCOMMANDS: [&str; 7] = ["prepare-data", "extract-features", "pretrain", "train", "decode", "evaluate", "plot-compare"];

#[test]
fn every_subcommand_documents_config_and_seed() {
    let top = run(bin().arg("--help"));
    assert!(top.status.success());
    let text = String::from_utf8(top.stdout).unwrap();
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "{sub} missing from --help");
        let out = run(bin().args([sub, "--help"]));
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        assert!(help.contains("--config") && help.contains("--seed"), "{sub}");
    }
}

#[test]
fn bad_invocations_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["decode", "--bogus"]));
    assert!(!out.status.success());

    let missing = dir.path().join("nope.tsv");
    let out = run(bin().args(["evaluate", "--hyp"]).arg(&missing).arg("--ref").arg(&missing));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model.trunk]\nwidth = 3\n").unwrap();
    let out = run(bin().arg("--config").arg(&bad).arg("prepare-data"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn evaluate_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("h.tsv");
    std::fs::write(&f, "a\tthe cat\nb\tdog <noise>\n").unwrap();
    let csv = dir.path().join("m.csv");
    let out = run(bin().arg("evaluate").arg("--hyp").arg(&f).arg("--ref").arg(&f).arg("--out").arg(&csv));
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("cer,0,12,0.000000"), "{text}");
    assert!(text.contains("wer,0,4,0.000000"), "{text}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("CER 0.00%"));

    let g = dir.path().join("g.tsv");
    std::fs::write(&g, "a\tthe bat\nb\tdog <noise>\n").unwrap();
    let out = run(bin().arg("evaluate").arg("--hyp").arg(&g).arg("--ref").arg(&f).arg("--out").arg(&csv));
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("cer,1,12,0.083333") && text.contains("wer,1,4,0.250000"), "{text}");
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, config) = tiny_config(d);
    let with_cfg = |sub: &str| {
        let mut c = bin();
        c.arg("--config").arg(&config).arg(sub).arg("--seed").arg("3");
        c
    };

    // Output directory comes from the environment when --out is omitted.
    let out = run(with_cfg("prepare-data").env("WAV2TEXT_OUT_DIR", d.join("env_out")));
    assert!(out.status.success());
    let corpus = d.join("env_out/corpus");
    assert!(corpus.join("train.tsv").exists() && corpus.join("dev.tsv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("prepared 8 train / 1 dev / 1 test"));

    let out = run(with_cfg("extract-features").arg("--manifest").arg(corpus.join("dev.tsv")).arg("--out").arg(d.join("feats")));
    assert!(out.status.success());
    let stats = std::fs::read_to_string(d.join("feats/stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 8 + 5);
    assert!(std::fs::read_dir(d.join("feats")).unwrap().count() == 3);

    let pre = d.join("pre");
    let out = run(with_cfg("pretrain").arg("--manifest").arg(corpus.join("train.tsv")).args(["--target", "multi", "--out"]).arg(&pre));
    assert!(out.status.success());
    for f in ["pretrain.ckpt", "transfer.ckpt", "loss.csv"] {
        assert!(pre.join(f).exists(), "{f}");
    }

    let tr = d.join("train");
    let out = run(with_cfg("train")
        .arg("--train")
        .arg(corpus.join("train.tsv"))
        .arg("--dev")
        .arg(corpus.join("dev.tsv"))
        .arg("--transfer-from")
        .arg(pre.join("transfer.ckpt"))
        .arg("--out")
        .arg(&tr));
    assert!(out.status.success());
    let n = cfg.model.trunk.trunk_parameter_count();
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains(&format!("frozen: {n} params")), "{log}");
    let trace = std::fs::read_to_string(tr.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    assert!(tr.join("best.ckpt").exists() && tr.join("last.ckpt").exists());

    let hyp = d.join("hyp.tsv");
    let nbest = d.join("nbest");
    let out = run(with_cfg("decode")
        .arg("--checkpoint")
        .arg(tr.join("last.ckpt"))
        .arg("--manifest")
        .arg(corpus.join("test.tsv"))
        .arg("--out")
        .arg(&hyp)
        .arg("--nbest-dir")
        .arg(&nbest));
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&hyp).unwrap().lines().count(), 1);
    assert_eq!(std::fs::read_dir(&nbest).unwrap().count(), 1);

    let out = run(with_cfg("evaluate").arg("--hyp").arg(&hyp).arg("--ref").arg(corpus.join("test.tsv")));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("CER "));

    let stem = d.join("cmp");
    let out = run(with_cfg("plot-compare")
        .arg("--checkpoint")
        .arg(pre.join("pretrain.ckpt"))
        .arg("--manifest")
        .arg(corpus.join("dev.tsv"))
        .args(["--kind", "mfcc", "--out"])
        .arg(&stem));
    assert!(out.status.success());
    assert!(stem.with_extension("png").exists() && stem.with_extension("csv").exists());

    // A checkpoint from a different architecture is refused before decoding.
    let (_, other) = {
        let sub = d.join("other");
        std::fs::create_dir_all(&sub).unwrap();
        let mut c = cfg.clone();
        c.model.decoder.hidden = 7;
        let p = sub.join("other.toml");
        std::fs::write(&p, c.to_toml_string()).unwrap();
        (c, p)
    };
    let out = run(bin()
        .arg("--config")
        .arg(&other)
        .arg("decode")
        .arg("--checkpoint")
        .arg(tr.join("last.ckpt"))
        .arg("--manifest")
        .arg(corpus.join("test.tsv")));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}
