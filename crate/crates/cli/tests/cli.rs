//! Integration tests driving the `diar` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn diar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diar"))
        .args(args)
        .output()
        .expect("spawn diar")
}

fn ok(args: &[&str]) -> Output {
    let out = diar(args);
    assert!(
        out.status.success(),
        "diar {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth_corpus(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out-dir",
        dir.to_str().unwrap(),
        "--speakers",
        "3",
        "--segments-per-speaker",
        "30",
        "--dim",
        "32",
        "--separation",
        "2.0",
        "--noise-sigma",
        "0.05",
        "--seed",
        seed,
    ]);
}

fn train_small(corpus: &Path, run: &Path) {
    ok(&[
        "train",
        "--embeddings",
        corpus.join("synth0.embs").to_str().unwrap(),
        "--labels",
        corpus.join("synth0.labels").to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--iterations",
        "10",
        "--d-n",
        "6",
        "--seed",
        "3",
    ]);
}

#[test]
fn missing_labels_file_is_a_data_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    synth_corpus(&tmp.path().join("c"), "1");
    let missing = tmp.path().join("no_such.labels");
    let out = diar(&[
        "train",
        "--embeddings",
        tmp.path().join("c/synth0.embs").to_str().unwrap(),
        "--labels",
        missing.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such.labels"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = diar(&["score", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "definitely_not_a_key=1\n").unwrap();
    let out = diar(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_checkpoint_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, "2");
    train_small(&corpus, &run);
    let ckpt = run.join("checkpoint.json");
    assert!(ckpt.exists());
    let model = diar_core::clustergan::load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config.d_n, 6);
    assert_eq!(model.config.d_c, 3);
    assert!(run.join("config.resolved").exists());
    assert!(run.join("train_log.jsonl").exists());
}

#[test]
fn one_speaker_rttm_tiles_the_sad() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    let run = tmp.path().join("run");
    let hyp = tmp.path().join("hyp");
    synth_corpus(&corpus, "4");
    train_small(&corpus, &run);
    ok(&[
        "diarize",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--embeddings",
        corpus.join("synth0.embs").to_str().unwrap(),
        "--sad",
        corpus.join("synth0.sad").to_str().unwrap(),
        "--out-dir",
        hyp.to_str().unwrap(),
        "--num-speakers",
        "1",
    ]);
    let records = diar_core::scoring::parse_rttm(&hyp.join("synth0.rttm")).unwrap();
    let speakers: std::collections::BTreeSet<_> =
        records.iter().map(|r| r.speaker.clone()).collect();
    assert_eq!(speakers.len(), 1);
    let sad = diar_core::pipeline::read_sad(&corpus.join("synth0.sad")).unwrap();
    let sad_total: f64 = sad.iter().map(|(_, s, e)| e - s).sum();
    let hyp_total: f64 = records.iter().map(|r| r.duration).sum();
    assert!((sad_total - hyp_total).abs() < 1e-6);
}

#[test]
fn omitted_num_speakers_records_the_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    let run = tmp.path().join("run");
    let hyp = tmp.path().join("hyp");
    synth_corpus(&corpus, "5");
    train_small(&corpus, &run);
    ok(&[
        "diarize",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--embeddings",
        corpus.join("synth0.embs").to_str().unwrap(),
        "--sad",
        corpus.join("synth0.sad").to_str().unwrap(),
        "--out-dir",
        hyp.to_str().unwrap(),
    ]);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(hyp.join("synth0.estimate.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["estimated"], serde_json::Value::Bool(true));
    assert!(sidecar["num_speakers"].as_u64().unwrap() >= 2);
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_corpus(&a, "9");
    synth_corpus(&b, "9");
    for name in ["synth0.embs", "synth0.sad", "synth0.ref.rttm", "synth0.labels"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between identical-seed runs"
        );
    }
}

#[test]
fn export_shape_matches_input_rows_and_latent_width() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, "6");
    train_small(&corpus, &run);
    let out = tmp.path().join("latent.embs");
    ok(&[
        "export-embeddings",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--embeddings",
        corpus.join("synth0.embs").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let latent = diar_core::pipeline::read_embeddings(&out).unwrap();
    assert_eq!(latent.count(), 90);
    assert_eq!(latent.dim(), 6 + 3);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "seed=1\n").unwrap();
    let out_dir = tmp.path().join("o");
    ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--speakers",
        "2",
        "--segments-per-speaker",
        "5",
        "--dim",
        "8",
    ]);
    let resolved = std::fs::read_to_string(out_dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("seed=2\n"), "resolved: {resolved}");
    assert!(resolved.contains("version="));
}

#[test]
fn synth_train_diarize_score_composes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    let run = tmp.path().join("run");
    let hyp = tmp.path().join("hyp");
    synth_corpus(&corpus, "7");
    train_small(&corpus, &run);
    ok(&[
        "diarize",
        "--checkpoint",
        run.join("checkpoint.json").to_str().unwrap(),
        "--embeddings",
        corpus.join("synth0.embs").to_str().unwrap(),
        "--sad",
        corpus.join("synth0.sad").to_str().unwrap(),
        "--out-dir",
        hyp.to_str().unwrap(),
        "--num-speakers",
        "3",
    ]);
    let score = ok(&[
        "score",
        "--reference",
        corpus.join("synth0.ref.rttm").to_str().unwrap(),
        "--hypothesis",
        hyp.join("synth0.rttm").to_str().unwrap(),
        "--collar",
        "0.25",
        "--out-dir",
        tmp.path().join("report").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&score.stdout);
    assert!(stdout.contains("DER:"), "stdout: {stdout}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("report/report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["der"].is_number());
}
