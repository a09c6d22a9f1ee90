//! End-to-end sorters: histogram-peak model selection over LDA-Km
//! (Algorithm 1), Anderson–Darling gated divisive LDA-Km (Algorithm 2),
//! and the PCA + k-means baseline.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    kmeans_restarts, lda_km, LabelAssignment, LdaKmConfig, LdaKmResult, DEFAULT_RESTARTS, OUTLIER,
};
use crate::density::{ad_statistic, count_peaks_with, histogram_with, HistogramConfig, PeakConfig};
use crate::error::{Error, Result};
use crate::spike_io::SpikeMatrix;
use crate::subspace::{itr_trace_ratio, pca_basis, project, scatter, Projection};

/// Smallest spike count Algorithm 1 accepts.
pub const ALGO1_MIN_SPIKES: usize = 20;

/// Default A² cut between unimodal and multimodal projections.
pub const DEFAULT_AD_THRESHOLD: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct SortResult {
    pub assignment: LabelAssignment,
    pub detected_k: usize,
    pub projection: Projection,
    /// d×n features of every spike under `projection`.
    pub features: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Diagnostics {
    Algo1(Algo1Trace),
    Algo2(SplitTree),
    PcaKmeans { k: usize, d: usize, sse: f64 },
}

/// Why Algorithm 1 stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo1Stop {
    /// `P_K = P_{K-1} < K`; the partition for `K - 1` was accepted.
    Predicate,
    /// One peak in the PCA projection and a unimodal K = 2 projection.
    SingleCluster,
    /// `P_K < K` at two consecutive K without the predicate firing.
    TwiceBelow,
    /// `k_max` reached.
    CapHit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Algo1Trace {
    /// `(K, P_K)` for every K visited.
    pub peak_counts: Vec<(usize, usize)>,
    /// Peaks of the 1-D PCA projection histogram.
    pub pca_peaks: usize,
    /// A² of the K = 2 projection, computed only for the one-cluster check.
    pub k2_ad: Option<f64>,
    pub stop: Algo1Stop,
    pub accepted_k: usize,
    /// Set when the stop was not the printed predicate (fallback rules).
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Algo1Config {
    pub d_max: usize,
    pub k_max: usize,
    pub seed: u64,
    pub histogram: HistogramConfig,
    pub peaks: PeakConfig,
    pub restarts: usize,
    pub max_outer: usize,
    pub itr_tol: f64,
    pub itr_max_iter: usize,
    /// A² below which a unimodal PCA projection plus the K = 2 projection
    /// count as one cluster even when the K = 2 histogram shows two peaks.
    /// `None` keeps the peak test alone.
    pub single_cluster_ad: Option<f64>,
}

impl Default for Algo1Config {
    fn default() -> Self {
        Self {
            d_max: 2,
            k_max: 10,
            seed: 0,
            histogram: HistogramConfig::default(),
            peaks: PeakConfig::default(),
            restarts: DEFAULT_RESTARTS,
            max_outer: 50,
            itr_tol: 1e-8,
            itr_max_iter: 100,
            single_cluster_ad: Some(DEFAULT_AD_THRESHOLD),
        }
    }
}

impl Algo1Config {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 2 {
            return Err(Error::invalid("k_max", "must be at least 2"));
        }
        if self.d_max == 0 {
            return Err(Error::invalid("d_max", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if self.single_cluster_ad.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::invalid("single_cluster_ad", "must be positive"));
        }
        Ok(())
    }
}

/// Stream of per-K seeds derived from the configured seed.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn peaks_of(values: &[f64], hist: &HistogramConfig, peaks: &PeakConfig) -> Result<usize> {
    Ok(count_peaks_with(&histogram_with(values, hist)?, peaks))
}

/// Relabels so that labels are dense and ordered by first appearance.
fn compact(labels: &LabelAssignment) -> LabelAssignment {
    let c = labels.canonical();
    let k = c.occupied_clusters().max(1);
    LabelAssignment::new(c.labels().to_vec(), k).expect("canonical labels are dense")
}

/// Peak count of the 1-D trace-ratio projection learned for `labels`, and
/// that projection's A² when asked for.
fn peak_count_for(
    data: &DMatrix<f64>,
    labels: &LabelAssignment,
    cfg: &Algo1Config,
    with_ad: bool,
) -> Result<(usize, Option<f64>)> {
    let scat = scatter(data, labels)?;
    let sol = match itr_trace_ratio(&scat, 1, cfg.itr_tol, cfg.itr_max_iter) {
        Ok(s) => s,
        Err(Error::DegenerateScatter) => return Ok((1, None)),
        Err(e) => return Err(e),
    };
    let y = project(data, &sol.projection)?;
    let values = y.row(0).transpose();
    let p = peaks_of(values.as_slice(), &cfg.histogram, &cfg.peaks)?;
    let ad = if with_ad { Some(ad_statistic(values.as_slice())?) } else { None };
    Ok((p, ad))
}

/// Algorithm 1: grow K from 2, scoring each LDA-Km partition by the number
/// of histogram peaks `P_K` in its most discriminative 1-D projection, and
/// stop at `P_K = P_{K-1} < K`, keeping the partition for `K - 1`.
pub fn sort_algo1(spikes: &SpikeMatrix, cfg: &Algo1Config) -> Result<SortResult> {
    cfg.validate()?;
    let data = &spikes.data;
    let n = data.ncols();
    if n < ALGO1_MIN_SPIKES {
        return Err(Error::TooFewSamples {
            needed: ALGO1_MIN_SPIKES,
            given: n,
        });
    }

    let pca1 = pca_basis(data, 1)?;
    let pca_features = project(data, &pca1)?;
    let pca_peaks = peaks_of(pca_features.row(0).transpose().as_slice(), &cfg.histogram, &cfg.peaks)?;

    let mut runs: BTreeMap<usize, LdaKmResult> = BTreeMap::new();
    let mut trace: Vec<(usize, usize)> = Vec::new();
    let mut stop = Algo1Stop::CapHit;
    let mut accepted = None;
    let mut k2_ad = None;

    for k in 2..=cfg.k_max {
        if k > n {
            break;
        }
        let mut lk = LdaKmConfig::new(k, cfg.d_max.min(k - 1)).seed(derive_seed(cfg.seed, k as u64));
        lk.restarts = cfg.restarts;
        lk.max_outer = cfg.max_outer;
        let run = lda_km(data, &lk)?;
        let check_ad = k == 2 && pca_peaks == 1 && cfg.single_cluster_ad.is_some();
        let (p, ad) = if run.degenerate {
            (1, None)
        } else {
            peak_count_for(data, &run.assignment, cfg, check_ad)?
        };
        runs.insert(k, run);
        trace.push((k, p));
        if k == 2 {
            k2_ad = ad;
        }

        // LDA on a unimodal cloud in many dimensions carves a dip into its
        // own projection, so a low A² also counts as one cluster.
        let unimodal = p == 1 || matches!((ad, cfg.single_cluster_ad), (Some(a), Some(t)) if a < t);
        if k == 2 && pca_peaks == 1 && unimodal {
            stop = Algo1Stop::SingleCluster;
            accepted = Some(1);
            break;
        }
        if let Some(&(_, prev)) = trace.iter().rev().nth(1) {
            // K - 1 already fell short of its own count, so the literal
            // predicate would accept a partition with too few peaks.
            if p < k && prev < k - 1 {
                stop = Algo1Stop::TwiceBelow;
                break;
            }
            if p == prev && p < k {
                stop = Algo1Stop::Predicate;
                accepted = Some(k - 1);
                break;
            }
        }
    }

    let accepted_k = accepted.unwrap_or_else(|| {
        trace
            .iter()
            .filter(|&&(k, p)| p >= k)
            .map(|&(k, _)| k)
            .max()
            .unwrap_or(2)
    });
    let diagnostics = Diagnostics::Algo1(Algo1Trace {
        peak_counts: trace,
        pca_peaks,
        k2_ad,
        stop,
        accepted_k,
        flagged: matches!(stop, Algo1Stop::TwiceBelow | Algo1Stop::CapHit),
    });

    if accepted_k == 1 {
        return Ok(SortResult {
            assignment: LabelAssignment::single(n),
            detected_k: 1,
            projection: pca1,
            features: pca_features,
            diagnostics,
        });
    }
    let run = runs.remove(&accepted_k).expect("accepted K was visited");
    let assignment = compact(&run.assignment);
    Ok(SortResult {
        detected_k: assignment.occupied_clusters(),
        assignment,
        projection: run.projection,
        features: run.features,
        diagnostics,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Algo2Config {
    pub ad_threshold: f64,
    /// `None` means `max(15, ⌈0.03·n⌉)`. Overlapping spikes form tails that
    /// a lower floor peels off as spurious units.
    pub min_cluster_size: Option<usize>,
    pub max_depth: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_outer: usize,
    /// Distance rule: flag spikes farther than this many standard deviations
    /// from their cluster mean in the cluster's 1-D projection. Off when `None`.
    pub outlier_sd: Option<f64>,
}

impl Default for Algo2Config {
    fn default() -> Self {
        Self {
            ad_threshold: DEFAULT_AD_THRESHOLD,
            min_cluster_size: None,
            max_depth: 10,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            max_outer: 50,
            outlier_sd: None,
        }
    }
}

impl Algo2Config {
    pub fn min_size_for(&self, n: usize) -> usize {
        self.min_cluster_size.unwrap_or_else(|| 15.max((3 * n).div_ceil(100)))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.ad_threshold > 0.0) {
            return Err(Error::invalid("ad_threshold", "must be positive"));
        }
        let min = self.min_size_for(n);
        if min < 2 {
            return Err(Error::invalid("min_cluster_size", "must be at least 2"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if let Some(sd) = self.outlier_sd {
            if !(sd > 0.0) {
                return Err(Error::invalid("outlier_sd", "must be positive"));
            }
        }
        if n < 2 * min {
            return Err(Error::TooFewSamples {
                needed: 2 * min,
                given: n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    /// Unimodal in its split projection: kept whole as one cluster.
    Final,
    /// Split; its children are separate nodes.
    Split,
    /// Smaller than the minimum cluster size: sent to the outlier cluster.
    Outlier,
    /// Reached `max_depth` and finalized without testing.
    DepthLimit,
    /// Could not be split (degenerate scatter or constant projection); finalized.
    Unsplittable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitNode {
    /// Heap-style id: root 1, children `2i` and `2i + 1`.
    pub id: u64,
    pub depth: usize,
    pub size: usize,
    pub ad_score: Option<f64>,
    pub status: NodeStatus,
    /// Output label of final nodes.
    pub label: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitTree {
    /// All nodes, ascending by id.
    pub nodes: Vec<SplitNode>,
    pub min_cluster_size: usize,
    pub ad_threshold: f64,
    pub depth_limit_hit: bool,
    /// Spikes flagged by the optional distance rule.
    pub distance_outliers: usize,
}

impl SplitTree {
    pub fn node(&self, id: u64) -> Option<&SplitNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SplitNode> {
        self.nodes.iter().filter(|n| n.label.is_some())
    }
}

struct NodeOutcome {
    node: SplitNode,
    members: Vec<usize>,
    /// Children that continue: (id, members).
    children: Vec<(u64, Vec<usize>)>,
    outliers: Vec<SplitNode>,
    outlier_members: Vec<usize>,
    /// Unit projection direction used for the AD test (final nodes).
    direction: Option<Projection>,
}

fn process_node(
    data: &DMatrix<f64>,
    id: u64,
    depth: usize,
    members: Vec<usize>,
    cfg: &Algo2Config,
    min_size: usize,
) -> Result<NodeOutcome> {
    let size = members.len();
    let finalize = |status, ad, direction| NodeOutcome {
        node: SplitNode {
            id,
            depth,
            size,
            ad_score: ad,
            status,
            label: None,
        },
        members: members.clone(),
        children: Vec::new(),
        outliers: Vec::new(),
        outlier_members: Vec::new(),
        direction,
    };
    if depth >= cfg.max_depth {
        return Ok(finalize(NodeStatus::DepthLimit, None, None));
    }
    let sub = data.select_columns(&members);
    let mut lk = LdaKmConfig::new(2, 1).seed(derive_seed(cfg.seed, id));
    lk.restarts = cfg.restarts;
    lk.max_outer = cfg.max_outer;
    let run = lda_km(&sub, &lk)?;
    if run.degenerate {
        return Ok(finalize(NodeStatus::Unsplittable, None, Some(run.projection)));
    }
    let values: Vec<f64> = run.features.row(0).iter().copied().collect();
    let ad = match ad_statistic(&values) {
        Ok(a) => a,
        Err(Error::DegenerateSample) => {
            return Ok(finalize(NodeStatus::Unsplittable, None, Some(run.projection)))
        }
        Err(e) => return Err(e),
    };
    if ad < cfg.ad_threshold {
        return Ok(finalize(NodeStatus::Final, Some(ad), Some(run.projection)));
    }

    let mut out = finalize(NodeStatus::Split, Some(ad), None);
    for (side, child_id) in [(0usize, 2 * id), (1, 2 * id + 1)] {
        let child: Vec<usize> = (0..size)
            .filter(|&i| run.assignment.label(i) == Some(side))
            .map(|i| members[i])
            .collect();
        if child.len() >= min_size {
            out.children.push((child_id, child));
        } else {
            out.outliers.push(SplitNode {
                id: child_id,
                depth: depth + 1,
                size: child.len(),
                ad_score: None,
                status: NodeStatus::Outlier,
                label: Some(OUTLIER),
            });
            out.outlier_members.extend(child);
        }
    }
    Ok(out)
}

/// Algorithm 2: repeatedly split working sets in two with 1-D LDA-Km;
/// a set whose projection passes the Anderson–Darling test (A² below the
/// threshold) becomes a final cluster, otherwise its large-enough halves
/// are split further and the small ones join the outlier cluster.
///
/// Working sets of one tree level are processed in parallel; final labels
/// follow node ids, so the result does not depend on scheduling.
pub fn sort_algo2(spikes: &SpikeMatrix, cfg: &Algo2Config) -> Result<SortResult> {
    let data = &spikes.data;
    let n = data.ncols();
    cfg.validate(n)?;
    let min_size = cfg.min_size_for(n);

    let mut level: Vec<(u64, Vec<usize>)> = vec![(1, (0..n).collect())];
    let mut depth = 0;
    let mut nodes: Vec<SplitNode> = Vec::new();
    let mut finals: Vec<(u64, Vec<usize>, Option<Projection>)> = Vec::new();
    let mut labels = vec![OUTLIER; n];

    while !level.is_empty() {
        let outcomes: Vec<Result<NodeOutcome>> = level
            .into_par_iter()
            .map(|(id, members)| process_node(data, id, depth, members, cfg, min_size))
            .collect();
        let mut next = Vec::new();
        for outcome in outcomes {
            let o = outcome?;
            if o.node.status == NodeStatus::Split {
                next.extend(o.children);
            } else {
                finals.push((o.node.id, o.members, o.direction));
            }
            nodes.push(o.node);
            nodes.extend(o.outliers);
            for i in o.outlier_members {
                labels[i] = OUTLIER;
            }
        }
        level = next;
        depth += 1;
    }

    finals.sort_by_key(|f| f.0);
    nodes.sort_by_key(|nd| nd.id);
    let mut distance_outliers = 0;
    for (label, (id, members, direction)) in finals.iter().enumerate() {
        let label = label as i64;
        for &i in members {
            labels[i] = label;
        }
        if let Some(node) = nodes.iter_mut().find(|nd| nd.id == *id) {
            node.label = Some(label);
        }
        if let (Some(sd_limit), Some(dir)) = (cfg.outlier_sd, direction) {
            distance_outliers += flag_far_points(data, members, dir, sd_limit, &mut labels);
        }
    }

    let k = finals.len().max(1);
    let assignment = LabelAssignment::new(labels, k)?;
    let detected_k = assignment.occupied_clusters();
    let (projection, features) = final_projection(data, &assignment)?;
    Ok(SortResult {
        assignment,
        detected_k,
        projection,
        features,
        diagnostics: Diagnostics::Algo2(SplitTree {
            depth_limit_hit: nodes.iter().any(|nd| nd.status == NodeStatus::DepthLimit),
            nodes,
            min_cluster_size: min_size,
            ad_threshold: cfg.ad_threshold,
            distance_outliers,
        }),
    })
}

fn flag_far_points(
    data: &DMatrix<f64>,
    members: &[usize],
    dir: &Projection,
    sd_limit: f64,
    labels: &mut [i64],
) -> usize {
    if members.len() < 2 {
        return 0;
    }
    let w = dir.basis.column(0);
    let proj: Vec<f64> = members.iter().map(|&i| w.dot(&data.column(i))).collect();
    let n = proj.len() as f64;
    let mean = proj.iter().sum::<f64>() / n;
    let sd = (proj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut flagged = 0;
    for (&i, &v) in members.iter().zip(&proj) {
        if (v - mean).abs() > sd_limit * sd {
            labels[i] = OUTLIER;
            flagged += 1;
        }
    }
    flagged
}

/// 1-D trace-ratio projection of the final partition, or the leading
/// principal axis when there is nothing to discriminate.
fn final_projection(data: &DMatrix<f64>, assignment: &LabelAssignment) -> Result<(Projection, DMatrix<f64>)> {
    if assignment.occupied_clusters() >= 2 {
        let compacted = compact_keep_outliers(assignment);
        if let Ok(scat) = scatter(data, &compacted) {
            match itr_trace_ratio(&scat, 1, 1e-8, 100) {
                Ok(sol) => {
                    let y = project(data, &sol.projection)?;
                    return Ok((sol.projection, y));
                }
                Err(Error::DegenerateScatter) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let p = pca_basis(data, 1)?;
    let y = project(data, &p)?;
    Ok((p, y))
}

/// Drops empty labels (emptied by the distance rule) while keeping outliers.
fn compact_keep_outliers(assignment: &LabelAssignment) -> LabelAssignment {
    let counts = assignment.counts();
    let mut map = vec![OUTLIER; counts.len()];
    let mut next = 0;
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            map[c] = next;
            next += 1;
        }
    }
    let labels = assignment
        .labels()
        .iter()
        .map(|&l| if l == OUTLIER { OUTLIER } else { map[l as usize] })
        .collect();
    LabelAssignment::new(labels, next.max(1) as usize).expect("remapped labels are in range")
}

/// PCA to `d` dimensions followed by k-means with restarts.
pub fn sort_pca_kmeans(spikes: &SpikeMatrix, k: usize, d: usize, seed: u64, restarts: usize) -> Result<SortResult> {
    let data = &spikes.data;
    let n = data.ncols();
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if n < k.max(2) {
        return Err(Error::TooFewSamples {
            needed: k.max(2),
            given: n,
        });
    }
    let proj = pca_basis(data, d)?;
    let features = project(data, &proj)?;
    let km = kmeans_restarts(&features, k, restarts.max(1), seed)?;
    let assignment = km.assignment.canonical();
    Ok(SortResult {
        detected_k: assignment.occupied_clusters(),
        assignment,
        projection: proj,
        features,
        diagnostics: Diagnostics::PcaKmeans { k, d, sse: km.sse },
    })
}
