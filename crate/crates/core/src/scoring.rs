//! Diarization error rate with a no-score collar around reference turn
//! boundaries, plus RTTM interchange and the optimal reference-to-hypothesis
//! speaker mapping.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub const DEFAULT_COLLAR_S: f64 = 0.25;

/// One `SPEAKER` line of an RTTM file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttmRecord {
    pub session_id: String,
    pub channel: u32,
    pub start: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmRecord {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// DER report in seconds plus the optimal speaker mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerReport {
    pub scored_time: f64,
    pub missed_time: f64,
    pub false_alarm_time: f64,
    pub confusion_time: f64,
    /// Percentage: (missed + false alarm + confusion) / scored * 100.
    pub der: f64,
    /// Reference speaker -> hypothesis speaker, per session.
    pub speaker_map: BTreeMap<String, BTreeMap<String, String>>,
}

pub fn parse_rttm(path: &Path) -> Result<Vec<RttmRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with(';') {
            continue;
        }
        out.push(parse_rttm_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn parse_rttm_line(line: &str, line_no: usize) -> Result<RttmRecord> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 9 || f[0] != "SPEAKER" {
        return Err(Error::Parse {
            line: line_no,
            detail: "expected 10-field SPEAKER line".into(),
        });
    }
    let start: f64 = f[3].parse().map_err(|_| Error::Parse {
        line: line_no,
        detail: format!("bad start `{}`", f[3]),
    })?;
    let duration: f64 = f[4].parse().map_err(|_| Error::Parse {
        line: line_no,
        detail: format!("bad duration `{}`", f[4]),
    })?;
    if !(duration > 0.0 && start.is_finite() && duration.is_finite()) {
        return Err(Error::Parse {
            line: line_no,
            detail: format!("non-positive duration {duration}"),
        });
    }
    Ok(RttmRecord {
        session_id: f[1].to_string(),
        channel: f[2].parse().unwrap_or(1),
        start,
        duration,
        speaker: f[7].to_string(),
    })
}

/// Emit standard 10-field RTTM with 3 decimal places on times.
pub fn write_rttm(records: &[RttmRecord], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(
            file,
            "SPEAKER {} {} {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            r.session_id, r.channel, r.start, r.duration, r.speaker
        )?;
    }
    Ok(())
}

pub fn format_rttm(records: &[RttmRecord]) -> String {
    records
        .iter()
        .map(|r| {
            format!(
                "SPEAKER {} {} {:.3} {:.3} <NA> <NA> {} <NA> <NA>\n",
                r.session_id, r.channel, r.start, r.duration, r.speaker
            )
        })
        .collect()
}

/// One-to-one partial mapping over an r×h non-negative overlap matrix,
/// maximizing total overlap (Hungarian method). Returns (ref index, hyp
/// index) pairs; zero-overlap pairs are dropped.
pub fn optimal_speaker_map(overlap: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let r = overlap.len();
    if r == 0 {
        return Vec::new();
    }
    let h = overlap[0].len();
    if h == 0 {
        return Vec::new();
    }
    let n = r.max(h);
    // pad to square, negate to minimize
    let mut cost = vec![vec![0.0f64; n]; n];
    for (i, row) in overlap.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            debug_assert!(v >= 0.0);
            cost[i][j] = -v;
        }
    }
    let assignment = hungarian_min(&cost);
    let mut out = Vec::new();
    for (i, j) in assignment.into_iter().enumerate() {
        if i < r && j < h && overlap[i][j] > 0.0 {
            out.push((i, j));
        }
    }
    out
}

/// O(n³) Hungarian algorithm (potentials form) for square cost minimization.
/// Returns for each row the assigned column.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=n {
        result[p[j] - 1] = j - 1;
    }
    result
}

/// Score hypothesis against reference with a symmetric no-score collar around
/// every reference turn boundary. Records may span multiple sessions; the
/// report aggregates components across sessions.
pub fn score(
    reference: &[RttmRecord],
    hypothesis: &[RttmRecord],
    collar: f64,
) -> Result<DerReport> {
    if reference.is_empty() {
        return Err(Error::Data("empty reference: DER undefined".into()));
    }
    if collar < 0.0 {
        return Err(Error::Config("collar must be >= 0".into()));
    }
    let mut sessions: BTreeMap<&str, (Vec<&RttmRecord>, Vec<&RttmRecord>)> = BTreeMap::new();
    for r in reference {
        sessions.entry(&r.session_id).or_default().0.push(r);
    }
    for h in hypothesis {
        sessions.entry(&h.session_id).or_default().1.push(h);
    }
    let mut report = DerReport {
        scored_time: 0.0,
        missed_time: 0.0,
        false_alarm_time: 0.0,
        confusion_time: 0.0,
        der: 0.0,
        speaker_map: BTreeMap::new(),
    };
    for (session, (refs, hyps)) in &sessions {
        if refs.is_empty() {
            return Err(Error::Data(format!(
                "session {session} has hypothesis but no reference"
            )));
        }
        score_session(refs, hyps, collar, session, &mut report)?;
    }
    if report.scored_time <= 0.0 {
        return Err(Error::Data("no scored time after collar exclusion".into()));
    }
    report.der = 100.0 * (report.missed_time + report.false_alarm_time + report.confusion_time)
        / report.scored_time;
    Ok(report)
}

fn score_session(
    refs: &[&RttmRecord],
    hyps: &[&RttmRecord],
    collar: f64,
    session: &str,
    report: &mut DerReport,
) -> Result<()> {
    // speaker indices
    let mut ref_speakers: Vec<&str> = refs.iter().map(|r| r.speaker.as_str()).collect();
    ref_speakers.sort_unstable();
    ref_speakers.dedup();
    let mut hyp_speakers: Vec<&str> = hyps.iter().map(|r| r.speaker.as_str()).collect();
    hyp_speakers.sort_unstable();
    hyp_speakers.dedup();
    let ref_idx = |s: &str| ref_speakers.binary_search(&s).unwrap();
    let hyp_idx = |s: &str| hyp_speakers.binary_search(&s).unwrap();

    // sweep breakpoints: all turn edges and collar-zone edges
    let mut points: Vec<f64> = Vec::new();
    for r in refs {
        points.extend([
            r.start,
            r.end(),
            r.start - collar,
            r.start + collar,
            r.end() - collar,
            r.end() + collar,
        ]);
    }
    for h in hyps {
        points.extend([h.start, h.end()]);
    }
    points.retain(|v| v.is_finite());
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // collar zones around reference boundaries
    let mut collar_zones: Vec<(f64, f64)> = Vec::new();
    if collar > 0.0 {
        for r in refs {
            collar_zones.push((r.start - collar, r.start + collar));
            collar_zones.push((r.end() - collar, r.end() + collar));
        }
        collar_zones.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    let in_collar = |t: f64| collar_zones.iter().any(|&(s, e)| t > s && t < e);

    // active speaker sets at t; overlapping turns of one speaker count once
    let actives = |t: f64| -> (Vec<usize>, Vec<usize>) {
        let mut ra: Vec<usize> = refs
            .iter()
            .filter(|r| r.start <= t && t < r.end())
            .map(|r| ref_idx(&r.speaker))
            .collect();
        ra.sort_unstable();
        ra.dedup();
        let mut ha: Vec<usize> = hyps
            .iter()
            .filter(|h| h.start <= t && t < h.end())
            .map(|h| hyp_idx(&h.speaker))
            .collect();
        ha.sort_unstable();
        ha.dedup();
        (ra, ha)
    };

    // pass 1: overlap matrix on scored (non-collar) regions
    let mut overlap = vec![vec![0.0f64; hyp_speakers.len()]; ref_speakers.len()];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b - a;
        if dt <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        if in_collar(mid) {
            continue;
        }
        let (ra, ha) = actives(mid);
        for &r in &ra {
            for &h in &ha {
                overlap[r][h] += dt;
            }
        }
    }
    let mapping = optimal_speaker_map(&overlap);
    let mut map_of_ref = vec![usize::MAX; ref_speakers.len()];
    for &(r, h) in &mapping {
        map_of_ref[r] = h;
    }
    let session_map = report
        .speaker_map
        .entry(session.to_string())
        .or_default();
    for &(r, h) in &mapping {
        session_map.insert(ref_speakers[r].to_string(), hyp_speakers[h].to_string());
    }

    // pass 2: accumulate components
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b - a;
        if dt <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        if in_collar(mid) {
            continue;
        }
        let (ra, ha) = actives(mid);
        let n_ref = ra.len();
        let n_hyp = ha.len();
        if n_ref == 0 && n_hyp == 0 {
            continue;
        }
        let n_correct = ra
            .iter()
            .filter(|&&r| map_of_ref[r] != usize::MAX && ha.contains(&map_of_ref[r]))
            .count();
        report.scored_time += n_ref as f64 * dt;
        report.missed_time += (n_ref.saturating_sub(n_hyp)) as f64 * dt;
        report.false_alarm_time += (n_hyp.saturating_sub(n_ref)) as f64 * dt;
        report.confusion_time += (n_ref.min(n_hyp) - n_correct) as f64 * dt;
    }
    Ok(())
}
