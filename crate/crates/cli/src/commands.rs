//! Subcommand implementations. Artifacts go to files, JSON-lines logs to
//! stderr, and the final report to stdout.

use crate::config::RunConfig;
use diar_core::clustergan::{self, train};
use diar_core::pipeline::{
    self, build_timeline, generate_synthetic_corpus, read_embeddings, read_sad, write_embeddings,
    DiarizeConfig, EmbeddingSet, DEFAULT_HOP_S, DEFAULT_WINDOW_S,
};
use diar_core::scoring::{self, parse_rttm, write_rttm, DerReport};
use diar_core::tensor::Tensor;
use diar_core::{Error, Result};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

fn log_event(value: serde_json::Value) {
    eprintln!("{value}");
}

/// One speaker name per line, aligned with the embedding rows.
fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read labels {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Speaker table in order of first appearance, plus per-row indices.
fn index_labels(names: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut table: Vec<String> = Vec::new();
    let mut indices = Vec::with_capacity(names.len());
    for name in names {
        let idx = match table.iter().position(|t| t == name) {
            Some(i) => i,
            None => {
                table.push(name.clone());
                table.len() - 1
            }
        };
        indices.push(idx);
    }
    (table, indices)
}

pub fn cmd_train(
    config: &RunConfig,
    embeddings_path: &Path,
    labels_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    let set = read_embeddings(embeddings_path)?;
    let names = read_labels(labels_path)?;
    if names.len() != set.count() {
        return Err(Error::Data(format!(
            "{} labels for {} embedding rows",
            names.len(),
            set.count()
        )));
    }
    let (table, indices) = index_labels(&names);
    let gan = config.gan_config(table.len(), set.dim());
    config.write_resolved(out_dir)?;
    log_event(json!({
        "event": "train_start",
        "rows": set.count(),
        "speakers": table.len(),
        "iterations": gan.iterations,
    }));
    let trained = train(&gan, &set.embeddings, &indices, table)?;

    let mut log_file = std::io::BufWriter::new(std::fs::File::create(out_dir.join("train_log.jsonl"))?);
    for record in &trained.log {
        let line = serde_json::to_string(record)?;
        eprintln!("{line}");
        writeln!(log_file, "{line}")?;
    }
    log_file.flush()?;
    let ckpt = out_dir.join("checkpoint.json");
    clustergan::save_checkpoint(&trained.model, &ckpt)?;
    if let Some(it) = trained.diverged_at {
        log_event(json!({"event": "train_diverged", "iteration": it}));
        return Err(Error::Divergence {
            iteration: it,
            detail: format!("last good checkpoint saved to {}", ckpt.display()),
        });
    }
    log_event(json!({"event": "train_done", "checkpoint": ckpt.display().to_string()}));
    println!("trained {} iterations -> {}", gan.iterations, ckpt.display());
    Ok(())
}

pub fn cmd_diarize(
    config: &RunConfig,
    checkpoint: &Path,
    embedding_paths: &[PathBuf],
    sad_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    let model = clustergan::load_checkpoint(checkpoint)?;
    let sad = read_sad(sad_path)?;
    config.write_resolved(out_dir)?;
    let diarize_config = DiarizeConfig {
        kmeans: config.kmeans_params(),
        max_speakers: config.max_speakers,
        p_binarize: config.p_binarize,
        fuse: config.fuse,
        seed: config.seed,
    };
    let mut all_records = Vec::new();
    let mut summary = Vec::new();
    for path in embedding_paths {
        let set = read_embeddings(path)?;
        let segments: Vec<(f64, f64)> = sad
            .iter()
            .filter(|(s, _, _)| *s == set.session_id)
            .map(|&(_, a, b)| (a, b))
            .collect();
        if segments.is_empty() {
            return Err(Error::Data(format!(
                "no SAD segments for session {}",
                set.session_id
            )));
        }
        let timeline = build_timeline(&set.session_id, &segments, DEFAULT_WINDOW_S, DEFAULT_HOP_S)?;
        let labeling = pipeline::diarize(
            &model,
            &timeline,
            &set,
            config.num_speakers,
            &diarize_config,
        )?;
        let records = labeling.to_rttm();
        write_rttm(&records, &out_dir.join(format!("{}.rttm", set.session_id)))?;
        let sidecar = json!({
            "session": set.session_id,
            "num_speakers": labeling.num_speakers,
            "estimated": labeling.estimated_k.is_some(),
        });
        std::fs::write(
            out_dir.join(format!("{}.estimate.json", set.session_id)),
            format!("{sidecar}\n"),
        )?;
        log_event(json!({
            "event": "diarize_session",
            "session": set.session_id,
            "subsegments": timeline.subsegments.len(),
            "num_speakers": labeling.num_speakers,
            "estimated": labeling.estimated_k.is_some(),
        }));
        summary.push(format!(
            "{}: {} speakers{}",
            set.session_id,
            labeling.num_speakers,
            if labeling.estimated_k.is_some() {
                " (estimated)"
            } else {
                ""
            }
        ));
        all_records.extend(records);
    }
    write_rttm(&all_records, &out_dir.join("hypothesis.rttm"))?;
    for line in summary {
        println!("{line}");
    }
    Ok(())
}

fn report_text(report: &DerReport, collar: f64) -> String {
    format!(
        "scored time:      {:10.3} s\n\
         missed speech:    {:10.3} s\n\
         false alarm:      {:10.3} s\n\
         confusion:        {:10.3} s\n\
         collar:           {:10.3} s\n\
         DER:              {:9.2} %",
        report.scored_time,
        report.missed_time,
        report.false_alarm_time,
        report.confusion_time,
        collar,
        report.der
    )
}

pub fn cmd_score(
    config: &RunConfig,
    reference: &Path,
    hypothesis: &Path,
    out_dir: Option<&Path>,
) -> Result<()> {
    let reference = parse_rttm(reference)?;
    let hypothesis = parse_rttm(hypothesis)?;
    let report = scoring::score(&reference, &hypothesis, config.collar)?;
    log_event(json!({"event": "score_done", "der": report.der}));
    println!("{}", report_text(&report, config.collar));
    if let Some(dir) = out_dir {
        config.write_resolved(dir)?;
        std::fs::write(
            dir.join("report.json"),
            format!("{}\n", serde_json::to_string_pretty(&report)?),
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    config: &RunConfig,
    session_id: &str,
    num_speakers: usize,
    segments_per_speaker: usize,
    dim: usize,
    separation: f64,
    noise_sigma: f64,
    out_dir: &Path,
) -> Result<()> {
    let corpus = generate_synthetic_corpus(
        session_id,
        num_speakers,
        segments_per_speaker,
        dim,
        separation,
        noise_sigma,
        config.seed,
    )?;
    config.write_resolved(out_dir)?;
    write_embeddings(&corpus.embeddings, &out_dir.join(format!("{session_id}.embs")))?;
    let sad: Vec<(String, f64, f64)> = corpus
        .timeline
        .segments
        .iter()
        .map(|&(a, b)| (session_id.to_string(), a, b))
        .collect();
    pipeline::write_sad(&sad, &out_dir.join(format!("{session_id}.sad")))?;
    write_rttm(
        &corpus.reference_rttm,
        &out_dir.join(format!("{session_id}.ref.rttm")),
    )?;
    let labels: String = corpus
        .reference_labels
        .iter()
        .map(|&l| format!("spk{l:02}\n"))
        .collect();
    std::fs::write(out_dir.join(format!("{session_id}.labels")), labels)?;
    log_event(json!({
        "event": "synth_done",
        "session": session_id,
        "rows": corpus.embeddings.count(),
        "speakers": num_speakers,
    }));
    println!(
        "synthesized {} segments x {} dims for {} speakers -> {}",
        corpus.embeddings.count(),
        dim,
        num_speakers,
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_export_embeddings(
    checkpoint: &Path,
    embeddings_path: &Path,
    out_path: &Path,
) -> Result<()> {
    let model = clustergan::load_checkpoint(checkpoint)?;
    let set = read_embeddings(embeddings_path)?;
    let latent: Tensor<f32> = model.encode(&set.embeddings)?;
    let exported = EmbeddingSet {
        session_id: set.session_id.clone(),
        embeddings: latent,
    };
    write_embeddings(&exported, out_path)?;
    log_event(json!({
        "event": "export_done",
        "rows": exported.count(),
        "width": exported.dim(),
    }));
    println!(
        "exported {} rows x {} latent dims -> {}",
        exported.count(),
        exported.dim(),
        out_path.display()
    );
    Ok(())
}
