//! Session-level orchestration: oracle-SAD windowing, embedding ingestion,
//! encoder inference, fusion, clustering and hypothesis assembly.

use crate::clustergan::ClusterGanModel;
use crate::clustering::{estimate_num_speakers, kmeans, KmeansParams};
use crate::error::{Error, Result};
use crate::scoring::RttmRecord;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

pub const DEFAULT_WINDOW_S: f64 = 1.5;
pub const DEFAULT_HOP_S: f64 = 0.5;
/// Tail windows shorter than this are merged into the previous window.
pub const MIN_TAIL_S: f64 = 0.5;

/// One speech-activity region and the sliding windows derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTimeline {
    pub session_id: String,
    /// Oracle SAD segments, sorted, non-overlapping.
    pub segments: Vec<(f64, f64)>,
    /// Subsegment windows, each inside its parent segment; parallel index of
    /// the parent segment.
    pub subsegments: Vec<Subsegment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subsegment {
    pub start: f64,
    pub end: f64,
    pub parent: usize,
}

impl Subsegment {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Windows of `window` seconds at `hop` spacing inside each SAD segment.
/// A SAD segment shorter than the window yields one subsegment covering it;
/// a trailing remainder becomes a tail window when it is at least
/// `MIN_TAIL_S` long, otherwise the last window is extended to the segment end.
pub fn build_timeline(
    session_id: &str,
    sad_segments: &[(f64, f64)],
    window: f64,
    hop: f64,
) -> Result<SegmentTimeline> {
    if window <= 0.0 || hop <= 0.0 {
        return Err(Error::Config("window and hop must be positive".into()));
    }
    let mut sorted = sad_segments.to_vec();
    for &(s, e) in &sorted {
        if !(s >= 0.0 && s < e && s.is_finite() && e.is_finite()) {
            return Err(Error::Data(format!("invalid SAD segment [{s}, {e}]")));
        }
    }
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for pair in sorted.windows(2) {
        if pair[0].1 > pair[1].0 + 1e-9 {
            return Err(Error::Data("overlapping SAD segments".into()));
        }
    }
    let mut subsegments = Vec::new();
    for (parent, &(seg_start, seg_end)) in sorted.iter().enumerate() {
        let len = seg_end - seg_start;
        if len <= window + 1e-9 {
            subsegments.push(Subsegment {
                start: seg_start,
                end: seg_end,
                parent,
            });
            continue;
        }
        let mut last_start = seg_start;
        let mut s = seg_start;
        while s + window <= seg_end + 1e-9 {
            subsegments.push(Subsegment {
                start: s,
                end: s + window,
                parent,
            });
            last_start = s;
            s += hop;
        }
        let covered_end = last_start + window;
        if seg_end > covered_end + 1e-9 {
            let tail_start = last_start + hop;
            if seg_end - tail_start >= MIN_TAIL_S - 1e-9 {
                subsegments.push(Subsegment {
                    start: tail_start,
                    end: seg_end,
                    parent,
                });
            } else {
                // merge the remainder into the previous window
                subsegments.last_mut().unwrap().end = seg_end;
            }
        }
    }
    Ok(SegmentTimeline {
        session_id: session_id.to_string(),
        segments: sorted,
        subsegments,
    })
}

/// Per-subsegment embedding matrix for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub session_id: String,
    pub embeddings: Tensor<f32>,
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
    pub fn count(&self) -> usize {
        self.embeddings.rows()
    }
}

/// Fusion mode for combining base embeddings with encoder latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Length-normalize each part to unit L2, then concatenate.
    Concat,
}

/// Fuse base embeddings (n×dim) with a latent matrix (n×d).
pub fn fuse(base: &Tensor<f64>, latent: &Tensor<f64>, mode: FusionMode) -> Result<Tensor<f64>> {
    if base.rows() != latent.rows() {
        return Err(Error::Data(format!(
            "fusion alignment: {} base rows vs {} latent rows",
            base.rows(),
            latent.rows()
        )));
    }
    match mode {
        FusionMode::Concat => {
            let n = base.rows();
            let w = base.cols() + latent.cols();
            let mut out = Tensor::zeros(&[n, w]);
            for i in 0..n {
                let row = out.row_mut(i);
                normalize_into(base.row(i), &mut row[..base.cols()])?;
                normalize_into(latent.row(i), &mut row[base.cols()..])?;
            }
            Ok(out)
        }
    }
}

fn normalize_into(src: &[f64], dst: &mut [f64]) -> Result<()> {
    let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateVector("zero row in fusion".into()));
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s / norm;
    }
    Ok(())
}

/// Per-subsegment speaker labels and the collapsed speaker turns.
#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationLabeling {
    pub session_id: String,
    pub subsegment_labels: Vec<usize>,
    /// Non-overlapping (start, end, speaker) turns tiling the SAD regions.
    pub turns: Vec<(f64, f64, usize)>,
    /// Speaker count used for clustering, and whether it was estimated.
    pub num_speakers: usize,
    pub estimated_k: Option<usize>,
}

impl DiarizationLabeling {
    pub fn to_rttm(&self) -> Vec<RttmRecord> {
        self.turns
            .iter()
            .map(|&(start, end, spk)| RttmRecord {
                session_id: self.session_id.clone(),
                channel: 1,
                start,
                duration: end - start,
                speaker: format!("spk{spk:02}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DiarizeConfig {
    pub kmeans: KmeansParams,
    pub max_speakers: usize,
    pub p_binarize: f64,
    pub fuse: bool,
    pub seed: u64,
}

impl Default for DiarizeConfig {
    fn default() -> Self {
        DiarizeConfig {
            kmeans: KmeansParams::default(),
            max_speakers: 10,
            p_binarize: 0.2,
            fuse: false,
            seed: 0,
        }
    }
}

/// Diarize one session: encode the subsegment embeddings, optionally fuse
/// with the raw embeddings, cluster with k-means (estimating the speaker
/// count by eigen-gap when not given), and collapse window labels to turns.
pub fn diarize(
    model: &ClusterGanModel<f32>,
    timeline: &SegmentTimeline,
    embeddings: &EmbeddingSet,
    num_speakers: Option<usize>,
    config: &DiarizeConfig,
) -> Result<DiarizationLabeling> {
    if embeddings.count() != timeline.subsegments.len() {
        return Err(Error::Data(format!(
            "{} embeddings vs {} subsegments",
            embeddings.count(),
            timeline.subsegments.len()
        )));
    }
    let n = embeddings.count();
    if let Some(k) = num_speakers {
        if k == 0 {
            return Err(Error::Config("num_speakers must be >= 1".into()));
        }
        if k > n {
            return Err(Error::Data(format!("{n} subsegments but {k} speakers requested")));
        }
    }
    let latent = model.encode(&embeddings.embeddings)?.cast::<f64>();
    let points = if config.fuse {
        fuse(&embeddings.embeddings.cast::<f64>(), &latent, FusionMode::Concat)?
    } else {
        latent
    };
    let mut estimated_k = None;
    let k = match num_speakers {
        Some(k) => k,
        None => {
            let est = estimate_num_speakers(&points, config.max_speakers.min(n), config.p_binarize)?;
            estimated_k = Some(est.k);
            est.k
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let assignment = kmeans(&points, k, &config.kmeans, &mut rng)?;
    let turns = collapse_to_turns(timeline, &assignment.labels);
    Ok(DiarizationLabeling {
        session_id: timeline.session_id.clone(),
        subsegment_labels: assignment.labels,
        turns,
        num_speakers: k,
        estimated_k,
    })
}

/// Resolve overlapping windows by assigning each instant to the window with
/// the nearest midpoint, then merge maximal runs of equal labels. The result
/// exactly tiles the SAD segments.
pub fn collapse_to_turns(timeline: &SegmentTimeline, labels: &[usize]) -> Vec<(f64, f64, usize)> {
    assert_eq!(labels.len(), timeline.subsegments.len());
    let mut turns: Vec<(f64, f64, usize)> = Vec::new();
    let mut idx = 0usize;
    for (parent, &(seg_start, seg_end)) in timeline.segments.iter().enumerate() {
        let first = idx;
        while idx < timeline.subsegments.len() && timeline.subsegments[idx].parent == parent {
            idx += 1;
        }
        let windows = &timeline.subsegments[first..idx];
        if windows.is_empty() {
            continue;
        }
        // ownership boundaries: halfway between consecutive midpoints
        let mut cursor = seg_start;
        for (w, win) in windows.iter().enumerate() {
            let own_end = if w + 1 < windows.len() {
                0.5 * (win.midpoint() + windows[w + 1].midpoint())
            } else {
                seg_end
            };
            let label = labels[first + w];
            match turns.last_mut() {
                Some(last) if last.2 == label && (last.1 - cursor).abs() < 1e-9 => {
                    last.1 = own_end;
                }
                _ => turns.push((cursor, own_end, label)),
            }
            cursor = own_end;
        }
    }
    turns
}

/// A desk-scale synthetic corpus: speaker centroids on random directions
/// rescaled so the minimum pairwise distance equals `separation`, with
/// isotropic Gaussian noise of per-coordinate std `noise_sigma`.
pub struct SyntheticCorpus {
    pub embeddings: EmbeddingSet,
    pub timeline: SegmentTimeline,
    pub reference_labels: Vec<usize>,
    pub reference_rttm: Vec<RttmRecord>,
}

pub fn generate_synthetic_corpus(
    session_id: &str,
    num_speakers: usize,
    segments_per_speaker: usize,
    dim: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if num_speakers < 1 || segments_per_speaker < 1 || dim < 1 {
        return Err(Error::Config("corpus sizes must be positive".into()));
    }
    if separation <= 0.0 || noise_sigma < 0.0 {
        return Err(Error::Config("separation must be > 0, noise >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();

    // centroids: random unit directions, rescaled to min pairwise distance
    let mut centroids = Tensor::zeros(&[num_speakers, dim]);
    loop {
        for s in 0..num_speakers {
            let row = centroids.row_mut(s);
            let mut norm = 0.0;
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let mut min_dist = f64::INFINITY;
        for a in 0..num_speakers {
            for b in (a + 1)..num_speakers {
                let d: f64 = centroids
                    .row(a)
                    .iter()
                    .zip(centroids.row(b))
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        if num_speakers == 1 {
            break;
        }
        if min_dist > 1e-6 {
            let scale = separation / min_dist;
            centroids.scale_in_place(scale);
            break;
        }
    }

    // round-robin speaker order so runs of one speaker form contiguous turns
    let n = num_speakers * segments_per_speaker;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    // each "segment" occupies one whole SAD region of window length, so the
    // subsegment count equals n and reference turns are unambiguous
    let window = DEFAULT_WINDOW_S;
    let gap = 0.25;
    let mut sad = Vec::with_capacity(n);
    let mut t = 0.0f64;
    for i in 0..n {
        let spk = i % num_speakers;
        labels.push(spk);
        for j in 0..dim {
            let v = centroids.row(spk)[j] + noise_sigma * normal.sample(&mut rng);
            data.push(v as f32);
        }
        sad.push((t, t + window));
        t += window + gap;
    }
    let timeline = build_timeline(session_id, &sad, window, DEFAULT_HOP_S)?;
    debug_assert_eq!(timeline.subsegments.len(), n);
    let embeddings = EmbeddingSet {
        session_id: session_id.to_string(),
        embeddings: Tensor::from_vec(&[n, dim], data)?,
    };
    let reference_rttm = labels
        .iter()
        .zip(&sad)
        .map(|(&spk, &(s, e))| RttmRecord {
            session_id: session_id.to_string(),
            channel: 1,
            start: s,
            duration: e - s,
            speaker: format!("spk{spk:02}"),
        })
        .collect();
    Ok(SyntheticCorpus {
        embeddings,
        timeline,
        reference_labels: labels,
        reference_rttm,
    })
}

// ---------------------------------------------------------------------------
// file formats

/// Write an embedding file: header `dim=<d> count=<n> session=<id>` then one
/// whitespace-separated float row per line.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "dim={} count={} session={}",
        set.dim(),
        set.count(),
        set.session_id
    )
    .unwrap();
    for i in 0..set.count() {
        let mut first = true;
        for v in set.embeddings.row(i) {
            if !first {
                out.push(' ');
            }
            write!(out, "{}", RyuF32(*v)).unwrap();
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// shortest round-trip formatting for f32 via the standard formatter
struct RyuF32(f32);
impl std::fmt::Display for RyuF32 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Rust's float Display is shortest-round-trip
        write!(f, "{}", self.0)
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            detail: "empty embedding file".into(),
        })??;
    let mut dim = None;
    let mut count = None;
    let mut session = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("count", v)) => count = v.parse::<usize>().ok(),
            Some(("session", v)) => session = Some(v.to_string()),
            _ => {}
        }
    }
    let (dim, count, session) = match (dim, count, session) {
        (Some(d), Some(c), Some(s)) => (d, c, s),
        _ => {
            return Err(Error::Parse {
                line: 1,
                detail: "embedding header must carry dim=, count=, session=".into(),
            })
        }
    };
    let mut data = Vec::with_capacity(dim * count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f32 = tok.parse().map_err(|_| Error::Parse {
                line: i + 2,
                detail: format!("bad float `{tok}`"),
            })?;
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(Error::Parse {
                line: i + 2,
                detail: format!("expected {dim} values, got {}", data.len() - before),
            });
        }
    }
    if data.len() != dim * count {
        return Err(Error::Data(format!(
            "embedding file holds {} rows, header says {count}",
            data.len() / dim
        )));
    }
    Ok(EmbeddingSet {
        session_id: session,
        embeddings: Tensor::from_vec(&[count, dim], data)?,
    })
}

/// Sidecar segments file: `start end` per subsegment row.
pub fn write_segments(timeline: &SegmentTimeline, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &timeline.subsegments {
        writeln!(out, "{} {}", s.start, s.end).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// SAD file: `session start end` lines.
pub fn read_sad(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                detail: "SAD line must be `session start end`".into(),
            });
        }
        let start: f64 = parts[1].parse().map_err(|_| Error::Parse {
            line: i + 1,
            detail: format!("bad start `{}`", parts[1]),
        })?;
        let end: f64 = parts[2].parse().map_err(|_| Error::Parse {
            line: i + 1,
            detail: format!("bad end `{}`", parts[2]),
        })?;
        if !(start >= 0.0 && start < end) {
            return Err(Error::Parse {
                line: i + 1,
                detail: format!("invalid segment [{start}, {end}]"),
            });
        }
        out.push((parts[0].to_string(), start, end));
    }
    Ok(out)
}

pub fn write_sad(segments: &[(String, f64, f64)], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (session, start, end) in segments {
        writeln!(file, "{session} {start} {end}")?;
    }
    Ok(())
}
