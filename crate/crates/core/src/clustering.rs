//! K-means over movement vectors with elbow-based choice of k and
//! median-absolute-deviation outlier screening.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("need at least k = {k} samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("vector length {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("elbow selection needs inertias for k = 1..kmax with kmax >= 3, got {0}")]
    TooFewPoints(usize),
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared Euclidean distances to assigned centroids.
    pub inertia: f64,
    pub seed: u64,
    /// Inertia after each Lloyd iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lower index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_dims(vectors: &[Vec<f64>]) -> Result<usize> {
    let dim = vectors.first().map_or(0, Vec::len);
    for v in vectors {
        if v.len() != dim {
            return Err(ClusterError::DimensionMismatch { expected: dim, found: v.len() });
        }
    }
    Ok(dim)
}

fn inertia_of(vectors: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    vectors.iter().zip(assignments).map(|(v, &a)| sq_dist(v, &centroids[a])).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn plus_plus<R: Rng>(vectors: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centers = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(vectors[pick].clone());
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn update_centroids(vectors: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for x in s.iter_mut() {
                *x /= c as f64;
            }
        }
    }
    (sums, counts)
}

/// Move the point farthest from its centroid (taken from a cluster with more
/// than one member) into each empty cluster.
fn repair_empty(vectors: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>], counts: &mut [usize]) -> bool {
    let mut repaired = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let far = (0..vectors.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&i, &j| {
                sq_dist(&vectors[i], &centroids[assignments[i]])
                    .total_cmp(&sq_dist(&vectors[j], &centroids[assignments[j]]))
                    .then(j.cmp(&i))
            });
        let Some(i) = far else { break };
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] = 1;
        centroids[empty] = vectors[i].clone();
        repaired = true;
    }
    repaired
}

/// One seeded k-means++ / Lloyd run.
pub fn kmeans_fit(vectors: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    let n = vectors.len();
    if k == 0 || n < k {
        return Err(ClusterError::TooFewSamples { n, k });
    }
    if max_iter == 0 {
        return Err(ClusterError::BadParameter("max_iter must be >= 1".into()));
    }
    let dim = check_dims(vectors)?;
    let mut rng = seeds::rng(seed);
    let mut centroids = plus_plus(vectors, k, &mut rng);
    let mut assignments: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (mut next, mut counts) = update_centroids(vectors, &assignments, k, dim);
        if repair_empty(vectors, &mut assignments, &mut next, &mut counts) {
            next = update_centroids(vectors, &assignments, k, dim).0;
        }
        centroids = next;
        let reassigned: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v).0).collect();
        let stable = reassigned == assignments;
        assignments = reassigned;
        trace.push(inertia_of(vectors, &centroids, &assignments));
        if stable {
            break;
        }
    }
    // final centroids consistent with final assignments
    let (mut finals, mut counts) = update_centroids(vectors, &assignments, k, dim);
    if repair_empty(vectors, &mut assignments, &mut finals, &mut counts) {
        finals = update_centroids(vectors, &assignments, k, dim).0;
    }
    let inertia = inertia_of(vectors, &finals, &assignments);
    Ok(ClusterModel { k, centroids: finals, assignments, inertia, seed, trace, iterations })
}

/// Best of `restarts` runs with seeds derived from `seed`; ties keep the
/// earliest restart.
pub fn kmeans_best_of(vectors: &[Vec<f64>], k: usize, seed: u64, restarts: usize, max_iter: usize) -> Result<ClusterModel> {
    let runs = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| kmeans_fit(vectors, k, seeds::derive(seed, r as u64), max_iter))
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .map(|(_, m)| m)
        .expect("at least one restart");
    Ok(ClusterModel { seed, ..best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowChoice {
    pub k: usize,
    /// Perpendicular distance of each (k, inertia) point to the end chord.
    pub distances: Vec<f64>,
    /// Set when every point lies on the chord.
    pub degenerate: bool,
}

/// Pick the k whose (k, inertia) point lies farthest from the chord joining
/// the first and last points. `inertia_by_k[i]` holds the inertia for k = i + 1.
pub fn elbow_select(inertia_by_k: &[f64]) -> Result<ElbowChoice> {
    let kmax = inertia_by_k.len();
    if kmax < 3 {
        return Err(ClusterError::TooFewPoints(kmax));
    }
    if inertia_by_k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ClusterError::BadParameter("inertias must be finite and nonnegative".into()));
    }
    let (x0, y0) = (1.0, inertia_by_k[0]);
    let (x1, y1) = (kmax as f64, inertia_by_k[kmax - 1]);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    let distances: Vec<f64> = inertia_by_k
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let x = (i + 1) as f64;
            (dx * (y - y0) - dy * (x - x0)).abs() / len
        })
        .collect();
    let scale = inertia_by_k.iter().fold(0.0f64, |a, &b| a.max(b)).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d > distances[best] + tol {
            best = i;
        }
    }
    let degenerate = distances[best] <= tol;
    Ok(ElbowChoice { k: if degenerate { 1 } else { best + 1 }, distances, degenerate })
}

pub const MAD_SCALE: f64 = 0.6745;
pub const OUTLIER_Z: f64 = 3.5;
/// sqrt(pi / 2): mean absolute deviation to standard deviation for normal data.
const MEAN_AD_SCALE: f64 = 1.253_314;

/// Distance of every sample to its assigned centroid.
pub fn centroid_distances(model: &ClusterModel, vectors: &[Vec<f64>]) -> Vec<f64> {
    vectors
        .iter()
        .zip(&model.assignments)
        .map(|(v, &a)| sq_dist(v, &model.centroids[a]).sqrt())
        .collect()
}

/// Indices whose centroid distance has modified z-score
/// `0.6745 (d − median) / MAD` above 3.5. With MAD = 0 the score falls back
/// to `(d − median) / (1.253314 · meanAD)`; with no dispersion at all,
/// nothing is flagged.
pub fn outliers_from_distances(distances: &[f64]) -> Vec<usize> {
    let Some(med) = crate::stats::median(distances) else {
        return Vec::new();
    };
    let abs_dev: Vec<f64> = distances.iter().map(|d| (d - med).abs()).collect();
    let mad = crate::stats::median(&abs_dev).unwrap_or(0.0);
    let score: Box<dyn Fn(f64) -> f64> = if mad > 0.0 {
        Box::new(move |d| MAD_SCALE * (d - med) / mad)
    } else {
        let mean_ad = abs_dev.iter().sum::<f64>() / abs_dev.len() as f64;
        if mean_ad <= 0.0 {
            return Vec::new();
        }
        Box::new(move |d| (d - med) / (MEAN_AD_SCALE * mean_ad))
    };
    distances.iter().enumerate().filter(|(_, &d)| score(d) > OUTLIER_Z).map(|(i, _)| i).collect()
}

pub fn detect_outliers(model: &ClusterModel, vectors: &[Vec<f64>]) -> Vec<usize> {
    outliers_from_distances(&centroid_distances(model, vectors))
}

/// Nearest centroid, ties to the lower index.
pub fn assign(model: &ClusterModel, vector: &[f64]) -> Result<usize> {
    let dim = model.centroids.first().map_or(0, Vec::len);
    if vector.len() != dim {
        return Err(ClusterError::DimensionMismatch { expected: dim, found: vector.len() });
    }
    Ok(nearest(&model.centroids, vector).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub inertia_by_k: Vec<f64>,
    pub elbow: ElbowChoice,
    pub k: usize,
    pub outliers: Vec<usize>,
    /// Model refit on the samples that remain after outlier exclusion.
    pub model: ClusterModel,
    /// Original indices of the samples in `model.assignments`.
    pub kept: Vec<usize>,
}

/// Fit k = 1..=kmax, choose k at the elbow, drop outliers and refit once
/// with the same k and seed.
pub fn analyze(vectors: &[Vec<f64>], kmax: usize, seed: u64, restarts: usize, max_iter: usize) -> Result<ClusterAnalysis> {
    let n = vectors.len();
    if kmax < 3 || n < kmax {
        return Err(ClusterError::TooFewSamples { n, k: kmax.max(3) });
    }
    let models = (1..=kmax)
        .map(|k| kmeans_best_of(vectors, k, seeds::derive(seed, k as u64), restarts, max_iter))
        .collect::<Result<Vec<_>>>()?;
    let inertia_by_k: Vec<f64> = models.iter().map(|m| m.inertia).collect();
    let elbow = elbow_select(&inertia_by_k)?;
    let k = elbow.k;
    let chosen = &models[k - 1];
    let outliers = detect_outliers(chosen, vectors);
    let kept: Vec<usize> = (0..n).filter(|i| !outliers.contains(i)).collect();
    let model = if outliers.is_empty() || kept.len() < k {
        chosen.clone()
    } else {
        let subset: Vec<Vec<f64>> = kept.iter().map(|&i| vectors[i].clone()).collect();
        kmeans_best_of(&subset, k, seeds::derive(seed, k as u64), restarts, max_iter)?
    };
    let kept = if model.assignments.len() == n { (0..n).collect() } else { kept };
    Ok(ClusterAnalysis { inertia_by_k, elbow, k, outliers, model, kept })
}

pub fn default_kmax(n: usize) -> usize {
    10.min(n.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn single_cluster_is_mean() {
        let v = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let m = kmeans_fit(&v, 1, 3, 100).unwrap();
        assert_eq!(m.centroids[0], vec![2.0, 4.0]);
        assert!((m.inertia - (4.0 + 0.0 + 4.0 + 9.0 + 1.0 + 16.0)).abs() < 1e-12);
    }

    #[test]
    fn four_points_two_clusters() {
        let m = kmeans_best_of(&pts(&[0.0, 1.0, 9.0, 10.0]), 2, 1, 10, 100).unwrap();
        let mut cs: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, vec![0.5, 9.5]);
        assert!((m.inertia - 1.0).abs() < 1e-12);
        assert_eq!(m.assignments[0], m.assignments[1]);
        assert_ne!(m.assignments[1], m.assignments[2]);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let v = pts(&[3.0, -1.0, 7.5, 2.0]);
        let m = kmeans_fit(&v, 4, 5, 100).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut a = m.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points_repair_empty_clusters() {
        let v = pts(&[1.0, 1.0, 1.0, 5.0]);
        let m = kmeans_fit(&v, 3, 0, 50).unwrap();
        assert!(m.assignments.iter().all(|&a| a < 3));
        assert!((m.inertia - inertia_of(&v, &m.centroids, &m.assignments)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(kmeans_fit(&pts(&[1.0]), 2, 0, 10), Err(ClusterError::TooFewSamples { n: 1, k: 2 }));
        let bad = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(matches!(kmeans_fit(&bad, 1, 0, 10), Err(ClusterError::DimensionMismatch { .. })));
    }

    #[test]
    fn elbow_examples() {
        let e = elbow_select(&[100.0, 30.0, 25.0, 22.0, 21.0]).unwrap();
        assert_eq!(e.k, 2);
        assert!(!e.degenerate);
        let lin = elbow_select(&[50.0, 40.0, 30.0, 20.0, 10.0]).unwrap();
        assert_eq!(lin.k, 1);
        assert!(lin.degenerate);
        assert_eq!(elbow_select(&[3.0, 1.0]), Err(ClusterError::TooFewPoints(2)));
    }

    #[test]
    fn elbow_scale_invariant() {
        let base = [80.0, 41.0, 20.0, 15.0, 12.0, 11.0];
        let k = elbow_select(&base).unwrap().k;
        for s in [1e-6, 0.5, 3.0, 1e9] {
            assert_eq!(elbow_select(&base.map(|v| v * s)).unwrap().k, k);
        }
    }

    #[test]
    fn outlier_examples() {
        let flagged = outliers_from_distances(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 30.0]);
        assert_eq!(flagged, vec![6]);
        assert!(outliers_from_distances(&[2.0; 6]).is_empty());
        assert!(outliers_from_distances(&[]).is_empty());
        // MAD is zero here, the mean-deviation fallback still flags the spike
        let flagged = outliers_from_distances(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 9.0]);
        assert_eq!(flagged, vec![6]);
    }

    #[test]
    fn assign_rules() {
        let model = ClusterModel {
            k: 2,
            centroids: vec![vec![0.5], vec![9.5]],
            assignments: vec![],
            inertia: 0.0,
            seed: 0,
            trace: vec![],
            iterations: 0,
        };
        assert_eq!(assign(&model, &[9.5]).unwrap(), 1);
        assert_eq!(assign(&model, &[5.0]).unwrap(), 0);
        assert_eq!(assign(&model, &[2.0]).unwrap(), 0);
        assert!(assign(&model, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = seeds::rng(4);
        let v: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![if i < 6 { 0.0 } else { 5.0 } + rng.random_range(-1.0..1.0), rng.random::<f64>()])
            .collect();
        let a = kmeans_best_of(&v, 2, 9, 10, 100).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let pv: Vec<Vec<f64>> = perm.iter().map(|&i| v[i].clone()).collect();
        let b = kmeans_best_of(&pv, 2, 9, 10, 100).unwrap();
        assert!((a.inertia - b.inertia).abs() < 1e-9);
        for i in 0..12 {
            for j in 0..12 {
                let same_a = a.assignments[perm[i]] == a.assignments[perm[j]];
                let same_b = b.assignments[i] == b.assignments[j];
                assert_eq!(same_a, same_b);
            }
        }
    }

    #[test]
    fn analysis_on_two_blobs() {
        let mut rng = seeds::rng(8);
        let v: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 10.0 };
                vec![c + rng.random_range(-0.5..0.5), c + rng.random_range(-0.5..0.5)]
            })
            .collect();
        let a = analyze(&v, 6, 1, 5, 100).unwrap();
        assert_eq!(a.k, 2);
        assert_eq!(a.inertia_by_k.len(), 6);
        assert_eq!(a.kept.len() + a.outliers.len(), 20);
    }
}
