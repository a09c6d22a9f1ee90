//! One-dimensional density tools: Freedman–Diaconis histograms with Gaussian
//! smoothing, prominence-gated peak counting, and the Anderson–Darling A²
//! normality statistic.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Binned counts with a smoothed copy of the same mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `B + 1` strictly ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub smoothed: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the bin containing `x`; values outside the edges are `None`.
    /// The last bin is closed on the right.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let b = self.bins();
        let lo = self.edges[0];
        let hi = self.edges[b];
        if !(lo..=hi).contains(&x) {
            return None;
        }
        let idx = self.edges.partition_point(|&e| e <= x);
        Some(idx.saturating_sub(1).min(b - 1))
    }

    /// Histogram over fixed, caller-supplied edges (no smoothing applied).
    pub fn with_edges(values: &[f64], edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("edges", "need at least two strictly ascending edges"));
        }
        let b = edges.len() - 1;
        let mut hist = Histogram {
            counts: vec![0; b],
            smoothed: vec![0.0; b],
            edges,
        };
        for &v in values {
            if let Some(i) = hist.bin_of(v) {
                hist.counts[i] += 1;
            }
        }
        hist.smoothed = hist.counts.iter().map(|&c| c as f64).collect();
        Ok(hist)
    }
}

/// Histogram binning and smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub min_bins: usize,
    pub max_bins: usize,
    /// Gaussian smoothing bandwidth in bins; 0 disables smoothing.
    pub smoothing_bins: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            min_bins: 8,
            max_bins: 128,
            smoothing_bins: 0.7,
        }
    }
}

/// Peak acceptance thresholds, both relative to `max(smoothed)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    pub prominence_frac: f64,
    pub height_frac: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            prominence_frac: 0.05,
            height_frac: 0.05,
        }
    }
}

pub const MIN_HISTOGRAM_SAMPLES: usize = 10;

/// Histogram with default binning (Freedman–Diaconis, 8..=128 bins) and
/// Gaussian smoothing over 0.7 bins.
pub fn histogram(values: &[f64]) -> Result<Histogram> {
    histogram_with(values, &HistogramConfig::default())
}

pub fn histogram_with(values: &[f64], cfg: &HistogramConfig) -> Result<Histogram> {
    let n = values.len();
    if n < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_HISTOGRAM_SAMPLES,
            given: n,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "non-finite sample"));
    }
    if cfg.min_bins == 0 || cfg.max_bins < cfg.min_bins {
        return Err(Error::invalid("bins", "need 1 <= min_bins <= max_bins"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let range = hi - lo;

    let edges = if range <= 0.0 {
        // all values coincide: center them in one bin of unit width
        let b = cfg.min_bins;
        let start = lo - 0.5 - (b / 2) as f64;
        (0..=b).map(|i| start + i as f64).collect()
    } else {
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let width = if iqr > 0.0 {
            2.0 * iqr / (n as f64).cbrt()
        } else {
            // Scott's rule when the middle half is a single value
            3.49 * std_dev(&sorted) / (n as f64).cbrt()
        };
        let bins = if width > 0.0 {
            ((range / width).ceil() as usize).clamp(cfg.min_bins, cfg.max_bins)
        } else {
            cfg.max_bins
        };
        let step = range / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| lo + step * i as f64).collect();
        edges[bins] = hi;
        edges
    };

    let mut hist = Histogram::with_edges(&sorted, edges)?;
    hist.smoothed = smooth(&hist.counts, cfg.smoothing_bins);
    Ok(hist)
}

/// Mass-preserving Gaussian smoothing: each bin's count is spread with a
/// kernel truncated at ±4σ and renormalized inside the histogram range.
fn smooth(counts: &[u64], sigma_bins: f64) -> Vec<f64> {
    let b = counts.len();
    if sigma_bins <= 0.0 {
        return counts.iter().map(|&c| c as f64).collect();
    }
    let reach = (4.0 * sigma_bins).ceil() as isize;
    let mut out = vec![0.0; b];
    for (src, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let lo = (src as isize - reach).max(0) as usize;
        let hi = ((src as isize + reach) as usize).min(b - 1);
        let weights: Vec<f64> = (lo..=hi)
            .map(|dst| {
                let z = (dst as f64 - src as f64) / sigma_bins;
                (-0.5 * z * z).exp()
            })
            .collect();
        let norm: f64 = weights.iter().sum();
        for (dst, w) in (lo..=hi).zip(weights) {
            out[dst] += c as f64 * w / norm;
        }
    }
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Peaks of `hist.smoothed` under the default thresholds.
pub fn count_peaks(hist: &Histogram) -> usize {
    count_peaks_in(&hist.smoothed, &PeakConfig::default())
}

pub fn count_peaks_with(hist: &Histogram, cfg: &PeakConfig) -> usize {
    count_peaks_in(&hist.smoothed, cfg)
}

/// Counts local maxima of `values`.
///
/// A maximal run of equal values is a peak when every existing neighbor run
/// is lower (boundary runs qualify). Its prominence is its height minus the
/// higher of the two side minima, where each side extends until a higher
/// value (or an equal one, on the right) or the boundary; a side with no samples is ignored.
pub fn count_peaks_in(values: &[f64], cfg: &PeakConfig) -> usize {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(max > 0.0) {
        return 0;
    }
    let min_prominence = cfg.prominence_frac * max;
    let min_height = cfg.height_frac * max;

    // collapse plateaus into runs [start, end]
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] != values[start] {
            runs.push((start, i - 1));
            start = i;
        }
    }

    let mut peaks = 0;
    for (r, &(s, e)) in runs.iter().enumerate() {
        let h = values[s];
        let left_ok = r == 0 || values[runs[r - 1].0] < h;
        let right_ok = r + 1 == runs.len() || values[runs[r + 1].0] < h;
        if !(left_ok && right_ok) || h < min_height {
            continue;
        }
        // equal-height peaks: only the rightmost keeps its full prominence
        let left_base = side_minimum(values[..s].iter().rev(), |v| v > h);
        let right_base = side_minimum(values[e + 1..].iter(), |v| v >= h);
        let base = match (left_base, right_base) {
            (Some(l), Some(r)) => l.max(r),
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => 0.0,
        };
        if h - base >= min_prominence {
            peaks += 1;
        }
    }
    peaks
}

fn side_minimum<'a>(side: impl Iterator<Item = &'a f64>, stop: impl Fn(f64) -> bool) -> Option<f64> {
    let mut min: Option<f64> = None;
    for &v in side {
        if stop(v) {
            break;
        }
        min = Some(min.map_or(v, |m: f64| m.min(v)));
    }
    min
}

pub const MIN_AD_SAMPLES: usize = 8;

/// Anderson–Darling A² against a normal with mean and variance estimated
/// from the sample (sample SD with n − 1). No small-sample correction.
pub fn ad_statistic(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < MIN_AD_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_AD_SAMPLES,
            given: n,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "non-finite sample"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || sd <= 1e-14 * mean.abs() {
        return Err(Error::DegenerateSample);
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let nf = n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        let ln_cdf = normal.cdf(z[i]).ln();
        // ln(1 - Φ(z)) evaluated as ln Φ(-z) to keep upper-tail precision
        let ln_sf = normal.cdf(-z[n - 1 - i]).ln();
        sum += w * (ln_cdf + ln_sf);
    }
    let a2 = -nf - sum / nf;
    if a2.is_finite() {
        Ok(a2.max(0.0))
    } else {
        // a standardized value so extreme that Φ underflows; the fit is hopeless
        Ok(f64::MAX)
    }
}
