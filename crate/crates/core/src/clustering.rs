//! Seeded k-means (k-means++ seeding, Lloyd iterations, restarts) and the
//! LDA-Km alternation that learns a discriminative subspace while clustering.

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::center_columns;
use crate::subspace::{itr_from, lda_ratio_trace, pca_basis, scatter, Projection};

/// Label reserved for spikes rejected as outliers.
pub const OUTLIER: i64 = -1;

/// Per-spike cluster labels in `[0, k)`, or [`OUTLIER`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    labels: Vec<i64>,
    k: usize,
}

impl LabelAssignment {
    pub fn new(labels: Vec<i64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        for (index, &label) in labels.iter().enumerate() {
            if label != OUTLIER && (label < 0 || label >= k as i64) {
                return Err(Error::LabelOutOfRange { index, label, k });
            }
        }
        Ok(Self { labels, k })
    }

    /// Builds an assignment from dense cluster indices (no outliers).
    pub fn from_indices(labels: &[usize], k: usize) -> Result<Self> {
        Self::new(labels.iter().map(|&l| l as i64).collect(), k)
    }

    /// Every spike in cluster 0.
    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            k: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Cluster index of spike `i`, or `None` for outliers.
    pub fn label(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        (l != OUTLIER).then_some(l as usize)
    }

    /// Member count of every cluster.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            if l != OUTLIER {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == OUTLIER).count()
    }

    /// Number of distinct non-outlier labels actually used.
    pub fn occupied_clusters(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    /// Indices of the spikes labeled `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster as i64)
            .map(|(i, _)| i)
            .collect()
    }

    /// n×K 0/1 indicator matrix.
    pub fn indicator(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.len(), self.k);
        for (i, &label) in self.labels.iter().enumerate() {
            if label != OUTLIER {
                l[(i, label as usize)] = 1.0;
            }
        }
        l
    }

    /// Relabels clusters in order of first appearance; the partition is unchanged.
    pub fn canonical(&self) -> Self {
        let mut map = vec![OUTLIER; self.k];
        let mut next = 0i64;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if l == OUTLIER {
                    return OUTLIER;
                }
                let slot = &mut map[l as usize];
                if *slot == OUTLIER {
                    *slot = next;
                    next += 1;
                }
                *slot
            })
            .collect();
        Self { labels, k: self.k }
    }
}

/// Outcome of one k-means run.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignment: LabelAssignment,
    /// d×K centroid matrix.
    pub centroids: DMatrix<f64>,
    pub sse: f64,
    pub iterations: usize,
    /// SSE after every centroid update.
    pub sse_history: Vec<f64>,
}

impl KMeansResult {
    pub fn labels(&self) -> Vec<usize> {
        self.assignment
            .labels()
            .iter()
            .map(|&l| l as usize)
            .collect()
    }
}

pub const DEFAULT_KMEANS_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;
/// Default PCA width for the first LDA-Km partition.
pub const DEFAULT_INIT_DIM: usize = 10;

fn sq_dist(features: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    features
        .column(i)
        .iter()
        .zip(centroids.column(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn kmeans_plus_plus(features: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (d, n) = features.shape();
    let mut centroids = DMatrix::zeros(d, k);
    let first = rng.random_range(0..n);
    centroids.set_column(0, &features.column(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(features, i, &centroids, 0)).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen center
            Err(_) => rng.random_range(0..n),
        };
        centroids.set_column(c, &features.column(pick));
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(features, i, &centroids, c));
        }
    }
    centroids
}

/// Lloyd iterations from explicit starting centroids.
///
/// Ties in the nearest-centroid rule go to the lowest cluster index. A cluster
/// that empties is re-seeded with the point farthest from its own centroid.
pub fn lloyd(
    features: &DMatrix<f64>,
    initial_centroids: DMatrix<f64>,
    max_iter: usize,
) -> Result<KMeansResult> {
    let (d, n) = features.shape();
    let k = initial_centroids.ncols();
    if initial_centroids.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: initial_centroids.nrows(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("need 1 <= k <= n={n}, got {k}")));
    }
    let mut centroids = initial_centroids;
    let mut labels = vec![usize::MAX; n];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    for iter in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(features, i, &centroids, c);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        iterations = iter + 1;
        update_centroids(features, &mut labels, &mut centroids);
        sse_history.push(total_sse(features, &labels, &centroids));
    }
    let sse = *sse_history.last().expect("at least one update");
    let assignment = LabelAssignment::from_indices(&labels, k)?;
    Ok(KMeansResult {
        assignment,
        centroids,
        sse,
        iterations,
        sse_history,
    })
}

fn update_centroids(features: &DMatrix<f64>, labels: &mut [usize], centroids: &mut DMatrix<f64>) {
    let (d, n) = features.shape();
    let k = centroids.ncols();
    let mut sums = DMatrix::zeros(d, k);
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let mut col = sums.column_mut(labels[i]);
        col += features.column(i);
        counts[labels[i]] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            centroids.set_column(c, &(sums.column(c) / count as f64));
        }
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..n)
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(features, a, centroids, labels[a]);
                let db = sq_dist(features, b, centroids, labels[b]);
                da.partial_cmp(&db)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            });
        let Some(i) = donor else { break };
        let old = labels[i];
        let mut col = sums.column_mut(old);
        col -= features.column(i);
        counts[old] -= 1;
        centroids.set_column(old, &(sums.column(old) / counts[old] as f64));
        labels[i] = empty;
        counts[empty] = 1;
        sums.set_column(empty, &features.column(i));
        centroids.set_column(empty, &features.column(i));
    }
}

fn total_sse(features: &DMatrix<f64>, labels: &[usize], centroids: &DMatrix<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(features, i, centroids, c))
        .sum()
}

/// Single k-means run: k-means++ seeding from `seed`, then Lloyd iterations.
pub fn kmeans(features: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = features.ncols();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("need 1 <= k <= n={n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(features, k, &mut rng);
    lloyd(features, init, max_iter)
}

/// Best of `n_restarts` k-means runs by SSE; restart `r` uses seed `seed ^ r`.
/// Ties on SSE go to the lowest restart index.
pub fn kmeans_restarts(
    features: &DMatrix<f64>,
    k: usize,
    n_restarts: usize,
    seed: u64,
) -> Result<KMeansResult> {
    if n_restarts == 0 {
        return Err(Error::invalid("n_restarts", "must be at least 1"));
    }
    let runs: Vec<Result<KMeansResult>> = (0..n_restarts as u64)
        .into_par_iter()
        .map(|r| kmeans(features, k, seed ^ r, DEFAULT_KMEANS_MAX_ITER))
        .collect();
    let mut best: Option<KMeansResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_restarts >= 1"))
}

/// Parameters of the LDA-Km alternation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaKmConfig {
    pub k: usize,
    /// Requested subspace dimension; the effective value is `min(d, k - 1)`.
    pub d: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub restarts: usize,
    /// Width of the PCA basis used for the first k-means step of a second
    /// start. That partition sees more structure than `d` leading components
    /// carry. Clamped to `[d, m]`; equal to `d` means a single start.
    pub init_dim: usize,
}

impl LdaKmConfig {
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            k,
            d,
            seed: 0,
            max_outer: 50,
            restarts: DEFAULT_RESTARTS,
            init_dim: DEFAULT_INIT_DIM,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Outcome of LDA-Km.
#[derive(Debug, Clone)]
pub struct LdaKmResult {
    pub assignment: LabelAssignment,
    pub projection: Projection,
    /// d×n features `Wᵀ·Xc` in which `assignment` was computed.
    pub features: DMatrix<f64>,
    pub trace_ratio: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Set when the between-class scatter of a k-means split vanished.
    pub degenerate: bool,
    /// Per outer iteration: trace ratio of the basis used for clustering
    /// under the labels it produced.
    pub trace_ratio_history: Vec<f64>,
    /// Per outer iteration: k-means SSE in the current feature space.
    pub sse_history: Vec<f64>,
}

/// Record of one LDA step, kept for the per-step monotonicity checks.
#[derive(Debug, Clone, Copy)]
pub struct LdaStep {
    /// Trace ratio of the incoming basis under the new labels.
    pub before: f64,
    /// Trace ratio of the updated basis under the same labels.
    pub after: f64,
}

/// Record of one k-means step in a fixed feature space.
#[derive(Debug, Clone, Copy)]
pub struct KMeansStep {
    /// SSE of the previous labels in the new feature space (None on the first step).
    pub previous_labels_sse: Option<f64>,
    pub sse: f64,
}

/// Full LDA-Km trace: the result plus per-step bookkeeping.
#[derive(Debug, Clone)]
pub struct LdaKmTrace {
    pub result: LdaKmResult,
    pub kmeans_steps: Vec<KMeansStep>,
    pub lda_steps: Vec<LdaStep>,
}

/// LDA-Km on the m×n spike matrix `data`.
///
/// W is initialized by PCA; each outer iteration clusters `WᵀXc` with
/// k-means (restarts plus a warm start from the previous partition) and
/// then re-learns W by ratio-trace LDA for the new labels. Stops when the
/// partition repeats or after `max_outer` iterations.
///
/// The alternation runs from two starts, the `d` leading PCA components
/// and the `init_dim` leading ones (first partition only), and keeps the
/// run with the larger final trace ratio.
pub fn lda_km(data: &DMatrix<f64>, cfg: &LdaKmConfig) -> Result<LdaKmResult> {
    Ok(lda_km_traced(data, cfg)?.result)
}

/// [`lda_km`] with per-step records for diagnostics and tests. The records
/// belong to the kept start.
pub fn lda_km_traced(data: &DMatrix<f64>, cfg: &LdaKmConfig) -> Result<LdaKmTrace> {
    let d = cfg.d.min(cfg.k.saturating_sub(1)).min(data.nrows()).max(1);
    let wide = cfg.init_dim.max(d).min(data.nrows());
    let mut best = lda_km_start(data, cfg, wide)?;
    if wide != d {
        let narrow = lda_km_start(data, cfg, d)?;
        if narrow.result.trace_ratio > best.result.trace_ratio {
            best = narrow;
        }
    }
    Ok(best)
}

/// One LDA-Km run whose first partition uses `init_width` PCA components.
fn lda_km_start(data: &DMatrix<f64>, cfg: &LdaKmConfig, init_width: usize) -> Result<LdaKmTrace> {
    let n = data.ncols();
    if cfg.k < 2 {
        return Err(Error::invalid("k", "LDA-Km needs k >= 2"));
    }
    if cfg.d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if n < cfg.k {
        return Err(Error::invalid("k", format!("k={} exceeds n={n}", cfg.k)));
    }
    if cfg.max_outer == 0 {
        return Err(Error::invalid("max_outer", "must be at least 1"));
    }
    let d = cfg.d.min(cfg.k - 1).min(data.nrows());
    let (xc, _) = center_columns(data);

    let mut w = pca_basis(data, init_width)?;
    let mut prev: Option<LabelAssignment> = None;
    let mut trace_hist = Vec::new();
    let mut sse_hist = Vec::new();
    let mut kmeans_steps = Vec::new();
    let mut lda_steps = Vec::new();
    // (ratio, labels, basis, features) of the best visited state
    let mut best: Option<(f64, LabelAssignment, Projection, DMatrix<f64>)> = None;

    for outer in 1..=cfg.max_outer {
        let y = w.basis.transpose() * &xc;
        let mut km = kmeans_restarts(&y, cfg.k, cfg.restarts.max(1), cfg.seed)?;
        let mut previous_labels_sse = None;
        if let Some(p) = &prev {
            let warm = lloyd(&y, centroids_of(&y, p), DEFAULT_KMEANS_MAX_ITER)?;
            previous_labels_sse = Some(partition_sse(&y, p));
            if warm.sse <= km.sse {
                km = warm;
            }
        }
        kmeans_steps.push(KMeansStep {
            previous_labels_sse,
            sse: km.sse,
        });
        sse_hist.push(km.sse);
        let labels = km.assignment.canonical();

        let scat = scatter(data, &labels)?;
        // The wide initial basis is not a candidate result; its ratio is
        // not comparable with d-dimensional ones.
        let wide = w.dim() != d;
        let ratio_here = scat.trace_ratio(&w);
        trace_hist.push(ratio_here);
        if !wide && best.as_ref().is_none_or(|b| ratio_here > b.0) {
            best = Some((ratio_here, labels.clone(), w.clone(), y.clone()));
        }

        if prev.as_ref() == Some(&labels) {
            return Ok(LdaKmTrace {
                result: LdaKmResult {
                    assignment: labels,
                    projection: w,
                    features: y,
                    trace_ratio: ratio_here,
                    outer_iterations: outer,
                    converged: true,
                    degenerate: false,
                    trace_ratio_history: trace_hist,
                    sse_history: sse_hist,
                },
                kmeans_steps,
                lda_steps,
            });
        }

        let next = match lda_ratio_trace(&scat, d) {
            Ok(p) => p,
            Err(Error::DegenerateScatter) => {
                let (w, y) = if wide {
                    let w = pca_basis(data, d)?;
                    let y = w.basis.transpose() * &xc;
                    (w, y)
                } else {
                    (w, y)
                };
                return Ok(LdaKmTrace {
                    result: LdaKmResult {
                        assignment: labels,
                        projection: w,
                        features: y,
                        trace_ratio: 0.0,
                        outer_iterations: outer,
                        converged: false,
                        degenerate: true,
                        trace_ratio_history: trace_hist,
                        sse_history: sse_hist,
                    },
                    kmeans_steps,
                    lda_steps,
                });
            }
            Err(e) => return Err(e),
        };
        // Ratio-trace is trace-ratio optimal only for d = 1; polish with ITR
        // whenever it would lose ground against the incoming basis.
        let mut next_ratio = scat.trace_ratio(&next);
        let next = if wide {
            next
        } else if next_ratio + 1e-12 * ratio_here.abs().max(1.0) < ratio_here {
            let sol = itr_from(&scat, next, 1e-10, 100)?;
            if sol.ratio >= ratio_here {
                next_ratio = sol.ratio;
                sol.projection
            } else {
                next_ratio = ratio_here;
                w.clone()
            }
        } else {
            next
        };
        if !wide {
            lda_steps.push(LdaStep {
                before: ratio_here,
                after: next_ratio,
            });
        }
        w = next;
        prev = Some(labels);
    }

    let (ratio, assignment, projection, features) = match best {
        Some(b) => b,
        None => {
            // Only the wide initial step ran.
            let labels = prev.expect("max_outer >= 1");
            let w = pca_basis(data, d)?;
            let y = w.basis.transpose() * &xc;
            (scatter(data, &labels)?.trace_ratio(&w), labels, w, y)
        }
    };
    Ok(LdaKmTrace {
        result: LdaKmResult {
            assignment,
            projection,
            features,
            trace_ratio: ratio,
            outer_iterations: cfg.max_outer,
            converged: false,
            degenerate: false,
            trace_ratio_history: trace_hist,
            sse_history: sse_hist,
        },
        kmeans_steps,
        lda_steps,
    })
}

/// Member means of a partition in feature space (d×K).
pub fn centroids_of(features: &DMatrix<f64>, labels: &LabelAssignment) -> DMatrix<f64> {
    let d = features.nrows();
    let k = labels.k();
    let mut sums = DMatrix::zeros(d, k);
    let counts = labels.counts();
    for i in 0..features.ncols() {
        if let Some(c) = labels.label(i) {
            let mut col = sums.column_mut(c);
            col += features.column(i);
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let mut col = sums.column_mut(c);
            col /= cnt as f64;
        }
    }
    sums
}

/// Within-cluster sum of squared distances of a partition to its own means.
pub fn partition_sse(features: &DMatrix<f64>, labels: &LabelAssignment) -> f64 {
    let centroids = centroids_of(features, labels);
    (0..features.ncols())
        .filter_map(|i| labels.label(i).map(|c| sq_dist(features, i, &centroids, c)))
        .sum()
}
