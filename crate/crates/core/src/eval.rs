//! Accuracy against ground truth with optimal label matching, and
//! log-ISI histograms.

use std::fmt::Write as _;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::clustering::{LabelAssignment, OUTLIER};
use crate::density::Histogram;
use crate::error::{Error, Result};

/// Largest label count for which matching is done by enumeration.
const EXHAUSTIVE_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_pct: f64,
    /// `confusion[t][f]`: scored spikes of true unit `t` given found label `f`.
    pub confusion: Vec<Vec<u64>>,
    /// `matching[f]`: true unit assigned to found label `f`, if any.
    pub matching: Vec<Option<usize>>,
    pub n_scored: usize,
    pub n_excluded: usize,
    /// Scored spikes labeled as outliers.
    pub outlier_count: usize,
    pub n_correct: u64,
}

impl EvalReport {
    pub fn k_true(&self) -> usize {
        self.confusion.len()
    }

    pub fn k_found(&self) -> usize {
        self.confusion.first().map_or(0, Vec::len)
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy_pct={}", self.accuracy_pct);
        let _ = writeln!(s, "n_correct={}", self.n_correct);
        let _ = writeln!(s, "n_scored={}", self.n_scored);
        let _ = writeln!(s, "n_excluded={}", self.n_excluded);
        let _ = writeln!(s, "outlier_count={}", self.outlier_count);
        let _ = writeln!(s, "k_true={}", self.k_true());
        let _ = writeln!(s, "k_found={}", self.k_found());
        let map: Vec<String> = self
            .matching
            .iter()
            .enumerate()
            .map(|(f, t)| match t {
                Some(t) => format!("{f}:{t}"),
                None => format!("{f}:-"),
            })
            .collect();
        let _ = writeln!(s, "matching={}", map.join(","));
        s
    }

    /// Confusion matrix as CSV, one row per true unit.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true");
        for f in 0..self.k_found() {
            let _ = write!(s, ",found_{f}");
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{t}");
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

/// Scores `found` against `truth_labels`, skipping overlap-flagged spikes.
///
/// Found labels are mapped injectively onto true units so that total
/// agreement is maximal; outliers and unmatched labels count as errors.
pub fn match_and_score(found: &LabelAssignment, truth_labels: &[usize], overlap: &[bool]) -> Result<EvalReport> {
    let n = found.len();
    if truth_labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: truth_labels.len(),
        });
    }
    if overlap.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: overlap.len(),
        });
    }
    let k_true = truth_labels.iter().max().map_or(0, |&m| m + 1);
    let k_found = found.k();
    let mut confusion = vec![vec![0u64; k_found]; k_true];
    let (mut n_scored, mut n_excluded, mut outliers) = (0, 0, 0);
    for i in 0..n {
        if overlap[i] {
            n_excluded += 1;
            continue;
        }
        n_scored += 1;
        match found.label(i) {
            Some(f) => confusion[truth_labels[i]][f] += 1,
            None => outliers += 1,
        }
    }
    if n_scored == 0 {
        return Err(Error::EmptyInput);
    }
    let (n_correct, matching) = best_matching(&confusion, k_true, k_found);
    Ok(EvalReport {
        accuracy_pct: 100.0 * n_correct as f64 / n_scored as f64,
        confusion,
        matching,
        n_scored,
        n_excluded,
        outlier_count: outliers,
        n_correct,
    })
}

/// Maximum-weight injective map found → true on the zero-padded square matrix.
fn best_matching(confusion: &[Vec<u64>], k_true: usize, k_found: usize) -> (u64, Vec<Option<usize>>) {
    let size = k_true.max(k_found);
    if size == 0 {
        return (0, Vec::new());
    }
    let weight = |f: usize, t: usize| -> u64 {
        if f < k_found && t < k_true {
            confusion[t][f]
        } else {
            0
        }
    };
    let assign: Vec<usize> = if size <= EXHAUSTIVE_LIMIT {
        let mut perm: Vec<usize> = (0..size).collect();
        let mut best = perm.clone();
        let mut best_score = 0;
        let mut first = true;
        loop {
            let score: u64 = perm.iter().enumerate().map(|(f, &t)| weight(f, t)).sum();
            if first || score > best_score {
                best_score = score;
                best = perm.clone();
                first = false;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best
    } else {
        let mut m = Matrix::new(size, size, 0i64);
        for f in 0..size {
            for t in 0..size {
                m[(f, t)] = weight(f, t) as i64;
            }
        }
        kuhn_munkres(&m).1
    };
    let total = assign.iter().enumerate().map(|(f, &t)| weight(f, t)).sum();
    let matching = (0..k_found)
        .map(|f| (assign[f] < k_true).then_some(assign[f]))
        .collect();
    (total, matching)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

pub const ISI_LOG_MIN: f64 = -0.5;
pub const ISI_LOG_MAX: f64 = 4.0;
pub const ISI_BINS: usize = 45;

/// Histogram of log10 inter-spike intervals (ms) for one cluster.
///
/// Bins span [−0.5, 4] in 45 equal steps; intervals outside the range are
/// clamped into the end bins so every interval is counted.
pub fn isi_histogram(spike_times: &[usize], labels: &[i64], sample_rate_hz: f64, cluster: i64) -> Result<Histogram> {
    if spike_times.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: spike_times.len(),
            got: labels.len(),
        });
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::invalid("sample_rate_hz", "must be positive"));
    }
    if cluster == OUTLIER {
        return Err(Error::invalid("cluster", "the outlier label has no spike train"));
    }
    let mut times: Vec<usize> = spike_times
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == cluster)
        .map(|(&t, _)| t)
        .collect();
    if times.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            given: times.len(),
        });
    }
    times.sort_unstable();
    let logs: Vec<f64> = times
        .windows(2)
        .map(|w| {
            let ms = (w[1] - w[0]) as f64 / sample_rate_hz * 1000.0;
            ms.log10().clamp(ISI_LOG_MIN, ISI_LOG_MAX)
        })
        .collect();
    let step = (ISI_LOG_MAX - ISI_LOG_MIN) / ISI_BINS as f64;
    let edges = (0..=ISI_BINS)
        .map(|i| {
            if i == ISI_BINS {
                ISI_LOG_MAX
            } else {
                ISI_LOG_MIN + step * i as f64
            }
        })
        .collect();
    Histogram::with_edges(&logs, edges)
}

/// Pairs each detected peak with the nearest unused truth time within
/// `tolerance` samples. Both inputs must be sorted ascending.
pub fn match_peaks(detected: &[usize], truth: &[usize], tolerance: usize) -> Vec<Option<usize>> {
    let mut used = vec![false; truth.len()];
    let mut out = Vec::with_capacity(detected.len());
    for &p in detected {
        let lo = truth.partition_point(|&t| t + tolerance < p);
        let mut best: Option<usize> = None;
        let mut j = lo;
        while j < truth.len() && truth[j] <= p + tolerance {
            if !used[j] && best.is_none_or(|b| truth[j].abs_diff(p) < truth[b].abs_diff(p)) {
                best = Some(j);
            }
            j += 1;
        }
        if let Some(b) = best {
            used[b] = true;
        }
        out.push(best);
    }
    out
}
