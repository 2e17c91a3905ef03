//! k-means with k-means++ seeding, and the eigen-gap speaker-count estimator
//! over a binarized, symmetrized cosine affinity matrix.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use nalgebra::DMatrix;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// k×dim centroid matrix.
    pub centroids: Tensor<f64>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct KmeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        KmeansParams {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Best-of-restarts Lloyd's algorithm with k-means++ seeding. Deterministic
/// given the rng state; the best restart is picked by (inertia, restart index).
pub fn kmeans<R: Rng>(
    points: &Tensor<f64>,
    k: usize,
    params: &KmeansParams,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} not in 1..={n}")));
    }
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..params.restarts.max(1) {
        let run = lloyd(points, k, params, rng)?;
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn lloyd<R: Rng>(
    points: &Tensor<f64>,
    k: usize,
    params: &KmeansParams,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    let (n, dim) = (points.rows(), points.cols());
    let mut centroids = plus_plus_seed(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..params.max_iter {
        // assignment step
        let mut new_inertia = 0.0;
        for i in 0..n {
            let (lbl, d2) = nearest_centroid(points.row(i), &centroids);
            labels[i] = lbl;
            new_inertia += d2;
        }
        debug_assert!(new_inertia <= inertia + 1e-9 * inertia.abs().max(1.0));
        inertia = new_inertia;
        // update step
        let mut sums: Tensor<f64> = Tensor::zeros(&[k, dim]);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            let s = sums.row_mut(labels[i]);
            for (sv, &p) in s.iter_mut().zip(points.row(i)) {
                *sv += p;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the farthest point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = nearest_centroid(points.row(a), &centroids).1;
                        let db = nearest_centroid(points.row(b), &centroids).1;
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).copy_from_slice(points.row(far));
                shift = f64::INFINITY;
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut delta2 = 0.0;
            let crow = centroids.row_mut(c);
            for (j, cv) in crow.iter_mut().enumerate() {
                let nv = sums.row(c)[j] * inv;
                delta2 += (nv - *cv) * (nv - *cv);
                *cv = nv;
            }
            shift = shift.max(delta2.sqrt());
        }
        if shift < params.tol {
            break;
        }
    }
    // final assignment against converged centroids
    let mut final_inertia = 0.0;
    for i in 0..n {
        let (lbl, d2) = nearest_centroid(points.row(i), &centroids);
        labels[i] = lbl;
        final_inertia += d2;
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia: final_inertia,
    })
}

fn nearest_centroid(p: &[f64], centroids: &Tensor<f64>) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d2: f64 = centroids
            .row(c)
            .iter()
            .zip(p)
            .map(|(&cv, &pv)| (cv - pv) * (cv - pv))
            .sum();
        if d2 < best.1 {
            best = (c, d2);
        }
    }
    best
}

fn plus_plus_seed<R: Rng>(points: &Tensor<f64>, k: usize, rng: &mut R) -> Tensor<f64> {
    let (n, dim) = (points.rows(), points.cols());
    let mut centroids = Tensor::zeros(&[k, dim]);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2 = vec![0.0f64; n];
    for c in 1..k {
        let mut total = 0.0;
        for i in 0..n {
            let mut m = f64::INFINITY;
            for cc in 0..c {
                let dist: f64 = centroids
                    .row(cc)
                    .iter()
                    .zip(points.row(i))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                m = m.min(dist);
            }
            d2[i] = m;
            total += m;
        }
        let chosen = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        };
        centroids.row_mut(c).copy_from_slice(points.row(chosen));
    }
    centroids
}

/// Affinity matrix over embeddings: cosine similarity, per-row top-⌈p·n⌉
/// binarization, then symmetrization by elementwise max.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub values: Tensor<f64>,
    pub p_binarize: f64,
}

pub fn build_affinity(embeddings: &Tensor<f64>, p_binarize: f64) -> Result<AffinityMatrix> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::Data("affinity needs at least 2 rows".into()));
    }
    let mut norms = vec![0.0f64; n];
    for i in 0..n {
        norms[i] = embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norms[i] < 1e-12 {
            return Err(Error::DegenerateVector(format!("zero embedding row {i}")));
        }
    }
    let mut sim = embeddings.matmul_nt(embeddings);
    for i in 0..n {
        for j in 0..n {
            sim.row_mut(i)[j] /= norms[i] * norms[j];
        }
        sim.row_mut(i)[i] = 1.0;
    }
    let keep = ((p_binarize * n as f64).ceil() as usize).clamp(1, n);
    let mut binary: Tensor<f64> = Tensor::zeros(&[n, n]);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| sim.row(i)[b].partial_cmp(&sim.row(i)[a]).unwrap());
        for &j in order.iter().take(keep) {
            binary.row_mut(i)[j] = 1.0;
        }
    }
    // symmetrize: elementwise max with transpose
    for i in 0..n {
        for j in (i + 1)..n {
            let v = binary.row(i)[j].max(binary.row(j)[i]);
            binary.row_mut(i)[j] = v;
            binary.row_mut(j)[i] = v;
        }
        binary.row_mut(i)[i] = 1.0;
    }
    Ok(AffinityMatrix {
        values: binary,
        p_binarize,
    })
}

/// Ascending eigenvalues of the symmetric normalized Laplacian
/// L = I - D^{-1/2} A D^{-1/2}.
pub fn laplacian_eigenvalues(affinity: &AffinityMatrix) -> Vec<f64> {
    let n = affinity.values.rows();
    let mut inv_sqrt_deg = vec![0.0f64; n];
    for i in 0..n {
        let d: f64 = affinity.values.row(i).iter().sum();
        inv_sqrt_deg[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let norm = affinity.values.row(i)[j] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            l[(i, j)] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    // enforce exact symmetry against rounding
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (l[(i, j)] + l[(j, i)]);
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    let mut ev: Vec<f64> = l.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[derive(Debug, Clone)]
pub struct SpeakerCountEstimate {
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    /// Set when the graph has more components than max_speakers; the estimate
    /// is clamped to max_speakers.
    pub component_overflow: bool,
}

/// Eigen-gap estimate: k̂ = argmax over k in [2, max_speakers] of
/// λ_{k+1} - λ_k (ascending), ties broken toward smaller k.
pub fn estimate_num_speakers(
    embeddings: &Tensor<f64>,
    max_speakers: usize,
    p_binarize: f64,
) -> Result<SpeakerCountEstimate> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(Error::Data("need at least 2 embeddings".into()));
    }
    if max_speakers < 2 || max_speakers > n {
        return Err(Error::Config(format!(
            "max_speakers = {max_speakers} not in 2..={n}"
        )));
    }
    let affinity = build_affinity(embeddings, p_binarize)?;
    let ev = laplacian_eigenvalues(&affinity);
    // zero eigenvalues count connected components
    let components = ev.iter().take_while(|&&v| v < 1e-8).count().max(1);
    if components > max_speakers {
        return Ok(SpeakerCountEstimate {
            k: max_speakers,
            eigenvalues: ev,
            component_overflow: true,
        });
    }
    let upper = max_speakers.min(n - 1);
    let mut best_k = 2;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 2..=upper {
        let gap = ev[k] - ev[k - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    Ok(SpeakerCountEstimate {
        k: if upper < 2 { max_speakers } else { best_k },
        eigenvalues: ev,
        component_overflow: false,
    })
}
