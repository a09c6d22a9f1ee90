//! Synthetic single-channel recordings built from a few spike templates,
//! Poisson spike trains and band-limited Gaussian background noise.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike_io::{extract_aligned, refine_peak, DetectionConfig, Polarity, RawSignal, SpikeMatrix};

/// Template families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemplateMode {
    /// Highly correlated shapes (pairwise correlation 0.7..0.95).
    #[default]
    Hard,
    /// Clearly distinct shapes (pairwise correlation at most 0.5).
    Easy,
}

impl std::str::FromStr for TemplateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(TemplateMode::Hard),
            "easy" => Ok(TemplateMode::Easy),
            other => Err(Error::invalid("mode", format!("unknown template mode {other:?}"))),
        }
    }
}

/// One gamma-shaped lobe: amplitude, onset (ms), shape k, scale θ (ms).
pub type Lobe = (f64, f64, f64, f64);

const HARD_SET: [&[Lobe]; 5] = [
    &[(-1.0, 0.027, 3.0, 0.065), (0.204, 0.084, 2.0, 0.175), (0.095, 0.739, 2.0, 1.31)],
    &[(-1.0, 0.005, 3.0, 0.098), (0.262, 0.068, 2.0, 0.241), (-0.11, 0.922, 2.0, 1.438)],
    &[(-1.0, -0.02, 3.0, 0.061), (0.263, 0.246, 2.0, 0.351), (-0.04, 0.771, 2.0, 1.213)],
    &[(-1.0, 0.0, 3.0, 0.063), (0.26, 0.11, 2.0, 0.22), (-0.1, 0.59, 2.0, 1.39)],
    &[(-1.0, 0.0, 3.0, 0.098), (0.4, 0.21, 2.0, 0.27), (-0.15, 0.97, 2.0, 0.82)],
];

const EASY_SET: [&[Lobe]; 5] = [
    &[(-1.0, 0.0, 3.0, 0.05), (0.9, 0.15, 3.0, 0.08)],
    &[(-1.0, -0.1, 2.0, 0.4), (0.2, 0.9, 2.0, 0.5)],
    &[(0.8, -0.45, 3.0, 0.07), (-1.0, 0.0, 3.0, 0.05)],
    &[(-1.0, 0.0, 3.0, 0.04), (0.5, 0.1, 3.0, 0.04), (-0.5, 0.35, 3.0, 0.05), (0.4, 0.6, 3.0, 0.06)],
    &[(-1.0, 0.0, 3.0, 0.04), (0.8, 0.9, 3.0, 0.07), (-0.8, 1.3, 3.0, 0.07)],
];

/// Kernel that shapes the correlated part of the background noise.
const NOISE_KERNEL: &[Lobe] = &[(-1.0, 0.0, 3.0, 0.08), (0.35, 0.25, 2.0, 0.35)];
/// Variance share of the white (only band-passed) part of the neural noise.
const WHITE_SHARE: f64 = 0.16;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 24_000.0;
pub const DEFAULT_WINDOW: usize = 64;

/// Alignment index used for templates of length `m` (20 for m = 64).
pub fn template_peak_index(m: usize) -> usize {
    m * 5 / 16
}

fn gamma_shape(t: f64, k: f64, theta: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (t / theta).powf(k - 1.0) * (-t / theta).exp()
    }
}

/// Sum of lobes sampled at `times_ms`; each lobe is scaled to unit maximum
/// over the sample grid `norm_ms`.
fn lobes_at(lobes: &[Lobe], times_ms: &[f64], norm_ms: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; times_ms.len()];
    for &(a, t0, k, theta) in lobes {
        let peak = norm_ms
            .iter()
            .map(|&t| gamma_shape(t - t0, k, theta))
            .fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        for (o, &t) in out.iter_mut().zip(times_ms) {
            *o += a * gamma_shape(t - t0, k, theta) / peak;
        }
    }
    out
}

fn shape_template(lobes: &[Lobe], m: usize, fs: f64) -> Vec<f64> {
    let pk = template_peak_index(m);
    let ms = |i: f64| (i - pk as f64) / fs * 1000.0;
    let grid: Vec<f64> = (0..m).map(|i| ms(i as f64)).collect();
    let raw = lobes_at(lobes, &grid, &grid);
    let argmin = raw
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < raw[b] { i } else { b });
    // evaluate on a grid shifted so the trough lands on `pk`
    let shift = argmin as f64 - pk as f64;
    let shifted: Vec<f64> = (0..m).map(|i| ms(i as f64 + shift)).collect();
    let w = lobes_at(lobes, &shifted, &grid);
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter().map(|v| v / -min).collect()
}

/// Template of length `m` at 24 kHz built from gamma lobes, trough of −1
/// moved to [`template_peak_index`]`(m)`.
pub fn lobe_template(lobes: &[Lobe], m: usize) -> Vec<f64> {
    shape_template(lobes, m, DEFAULT_SAMPLE_RATE_HZ)
}

/// `count` built-in templates of length `m`, trough of −1 at
/// [`template_peak_index`]`(m)`, sampled at 24 kHz.
pub fn default_templates(m: usize, count: usize, mode: TemplateMode) -> Result<Vec<Vec<f64>>> {
    if !(1..=5).contains(&count) {
        return Err(Error::invalid("count", format!("{count} is outside [1, 5]")));
    }
    if m < 32 {
        return Err(Error::invalid("m", format!("{m} is below 32")));
    }
    let set = match mode {
        TemplateMode::Hard => &HARD_SET,
        TemplateMode::Easy => &EASY_SET,
    };
    Ok(set[..count]
        .iter()
        .map(|lobes| shape_template(lobes, m, DEFAULT_SAMPLE_RATE_HZ))
        .collect())
}

/// Pearson correlation of two equal-length waveforms.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spectral character of the background noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// White Gaussian noise band-passed to 300..5000 Hz.
    Bandpassed,
    /// Band-passed mix of white noise and noise convolved with a
    /// spike-like kernel, mimicking unresolved background units.
    #[default]
    Neural,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandpassed" => Ok(NoiseModel::Bandpassed),
            "neural" => Ok(NoiseModel::Neural),
            other => Err(Error::invalid("noise", format!("unknown noise model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub templates: Vec<Vec<f64>>,
    /// Sample of the template trough; truth times refer to it.
    pub peak_index: usize,
    pub firing_rate_hz: f64,
    pub duration_s: f64,
    pub noise_sigma: f64,
    pub noise_model: NoiseModel,
    pub sample_rate_hz: f64,
    pub refractory_ms: f64,
    pub seed: u64,
    pub overlap_window: usize,
}

impl SynthConfig {
    /// 20 Hz per unit, 2 ms refractory, 24 kHz, 32-sample overlap window.
    pub fn new(templates: Vec<Vec<f64>>, duration_s: f64, noise_sigma: f64, seed: u64) -> Self {
        let m = templates.first().map_or(DEFAULT_WINDOW, Vec::len);
        Self {
            templates,
            peak_index: template_peak_index(m),
            firing_rate_hz: 20.0,
            duration_s,
            noise_sigma,
            noise_model: NoiseModel::Neural,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            refractory_ms: 2.0,
            seed,
            overlap_window: 32,
        }
    }

    /// Built-in templates of length 64.
    pub fn with_defaults(count: usize, mode: TemplateMode, duration_s: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        Ok(Self::new(
            default_templates(DEFAULT_WINDOW, count, mode)?,
            duration_s,
            noise_sigma,
            seed,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let m = match self.templates.first() {
            Some(t) => t.len(),
            None => return Err(Error::invalid("templates", "need at least one template")),
        };
        if m == 0 || self.templates.iter().any(|t| t.len() != m) {
            return Err(Error::invalid("templates", "templates must share a non-zero length"));
        }
        if self.peak_index >= m {
            return Err(Error::invalid("peak_index", "must lie inside the template"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.refractory_ms >= 0.0) {
            return Err(Error::invalid("refractory_ms", "must be >= 0"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration_s", "must be positive"));
        }
        if !(self.firing_rate_hz > 0.0) || self.refractory_ms / 1000.0 >= 1.0 / self.firing_rate_hz {
            return Err(Error::invalid(
                "firing_rate_hz",
                "must be positive with a mean interval longer than the refractory period",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub signal: RawSignal,
    pub truth_times: Vec<usize>,
    pub truth_labels: Vec<usize>,
    pub overlap_flags: Vec<bool>,
    pub noise_sigma: f64,
    pub peak_index: usize,
    pub templates: Vec<Vec<f64>>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.truth_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth_times.is_empty()
    }

    /// Windows cut at the ground-truth times, optionally re-aligned to the
    /// most negative sample within `±realign` samples. Spikes whose window
    /// would leave the signal are dropped; the kept truth indices are returned.
    pub fn truth_spikes(&self, cfg: &DetectionConfig, realign: usize) -> Result<(SpikeMatrix, Vec<usize>)> {
        let len = self.signal.len();
        let mut peaks = Vec::with_capacity(self.len());
        let mut kept = Vec::with_capacity(self.len());
        for (i, &t) in self.truth_times.iter().enumerate() {
            let p = if realign > 0 {
                refine_peak(&self.signal, t, realign, Polarity::Negative)
            } else {
                t
            };
            if p >= cfg.pre_peak && p + cfg.post_peak < len {
                peaks.push(p);
                kept.push(i);
            }
        }
        Ok((extract_aligned(&self.signal, &peaks, cfg)?, kept))
    }
}

/// Second-order Butterworth section from the bilinear transform.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(cutoff_hz: f64, fs: f64, highpass: bool) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / 2f64.sqrt();
        let a0 = 1.0 + alpha;
        let b = if highpass {
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0]
        } else {
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0]
        };
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn filter(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

fn bandpass(x: &mut [f64], fs: f64) {
    Biquad::butterworth(300.0, fs, true).filter(x);
    if 5000.0 < fs / 2.0 {
        Biquad::butterworth(5000.0, fs, false).filter(x);
    }
}

fn convolve_causal(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            kernel
                .iter()
                .take(i + 1)
                .enumerate()
                .map(|(j, &h)| h * x[i - j])
                .sum()
        })
        .collect()
}

/// Unit-variance stationary noise of length `len` shaped by `kernel` and
/// the band-pass.
fn shaped_noise(len: usize, kernel: &[f64], fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const WARMUP: usize = 8192;
    let mut impulse = vec![0.0; WARMUP];
    impulse[0] = 1.0;
    let mut h = convolve_causal(&impulse, kernel);
    bandpass(&mut h, fs);
    let gain = h.iter().map(|v| v * v).sum::<f64>().sqrt();

    let raw: Vec<f64> = (0..len + WARMUP).map(|_| rng.sample(StandardNormal)).collect();
    let mut y = if kernel.len() == 1 {
        raw.iter().map(|v| v * kernel[0]).collect()
    } else {
        convolve_causal(&raw, kernel)
    };
    bandpass(&mut y, fs);
    y.drain(..WARMUP);
    for v in &mut y {
        *v /= gain;
    }
    y
}

fn noise_kernel(fs: f64) -> Vec<f64> {
    let grid: Vec<f64> = (0..64).map(|i| i as f64 / fs * 1000.0).collect();
    lobes_at(NOISE_KERNEL, &grid, &grid)
}

/// Background noise with standard deviation `sigma`.
pub fn background_noise(len: usize, sigma: f64, model: NoiseModel, fs: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = shaped_noise(len, &[1.0], fs, &mut rng);
    match model {
        NoiseModel::Bandpassed => white.into_iter().map(|v| v * sigma).collect(),
        NoiseModel::Neural => {
            let colored = shaped_noise(len, &noise_kernel(fs), fs, &mut rng);
            let (a, b) = (WHITE_SHARE.sqrt(), (1.0 - WHITE_SHARE).sqrt());
            white
                .iter()
                .zip(&colored)
                .map(|(w, c)| sigma * (a * w + b * c))
                .collect()
        }
    }
}

/// Poisson train with dead time: intervals are `refractory + Exp(λ)`,
/// λ chosen so the mean rate is `rate_hz`. Times in seconds.
fn spike_train(rate_hz: f64, refractory_s: f64, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lambda = 1.0 / (1.0 / rate_hz - refractory_s);
    let exp = Exp::new(lambda).expect("lambda is positive");
    let mut t = exp.sample(rng);
    let mut out = Vec::new();
    while t < duration_s {
        out.push(t);
        t += refractory_s + exp.sample(rng);
    }
    out
}

/// Draws a dataset: per-template spike trains, templates added at the
/// spike times, then background noise.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let fs = cfg.sample_rate_hz;
    let m = cfg.templates[0].len();
    let pk = cfg.peak_index;
    let len = (cfg.duration_s * fs).round() as usize;
    if len < m {
        return Err(Error::invalid(
            "duration_s",
            format!("{len} samples cannot hold a {m}-sample spike"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut events: Vec<(usize, usize)> = Vec::new();
    for (label, _) in cfg.templates.iter().enumerate() {
        for t in spike_train(cfg.firing_rate_hz, cfg.refractory_ms / 1000.0, cfg.duration_s, &mut rng) {
            let peak = (t * fs).round() as usize;
            if peak >= pk && peak - pk + m <= len {
                events.push((peak, label));
            }
        }
    }
    if events.is_empty() {
        return Err(Error::invalid("duration_s", "too short for any spike"));
    }
    events.sort_unstable();

    let mut samples = if cfg.noise_sigma > 0.0 {
        background_noise(len, cfg.noise_sigma, cfg.noise_model, fs, cfg.seed ^ 0x006e_6f69_7365)
    } else {
        vec![0.0; len]
    };
    for &(peak, label) in &events {
        let start = peak - pk;
        for (s, v) in samples[start..start + m].iter_mut().zip(&cfg.templates[label]) {
            *s += v;
        }
    }

    let times: Vec<usize> = events.iter().map(|e| e.0).collect();
    let w = cfg.overlap_window;
    let overlap_flags = (0..times.len())
        .map(|i| {
            (i > 0 && times[i] - times[i - 1] <= w)
                || (i + 1 < times.len() && times[i + 1] - times[i] <= w)
        })
        .collect();

    Ok(SynthDataset {
        signal: RawSignal::new(samples.iter().map(|&v| v as f32).collect(), fs)?,
        truth_labels: events.iter().map(|e| e.1).collect(),
        truth_times: times,
        overlap_flags,
        noise_sigma: cfg.noise_sigma,
        peak_index: pk,
        templates: cfg.templates.clone(),
    })
}

/// Ground truth as CSV `peak_index,label,overlap` (overlap is 0 or 1).
pub fn write_truth<W: Write>(out: W, ds: &SynthDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("truth csv", e.to_string());
    w.write_record(["peak_index", "label", "overlap"]).map_err(err)?;
    for i in 0..ds.len() {
        w.write_record([
            ds.truth_times[i].to_string(),
            ds.truth_labels[i].to_string(),
            u8::from(ds.overlap_flags[i]).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::format("truth csv", e.to_string()))
}

/// Parsed ground-truth file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Truth {
    pub times: Vec<usize>,
    pub labels: Vec<usize>,
    pub overlap: Vec<bool>,
}

pub fn read_truth<R: std::io::Read>(input: R) -> Result<Truth> {
    let mut r = csv::Reader::from_reader(input);
    let err = |e: csv::Error| Error::format("truth csv", e.to_string());
    let headers = r.headers().map_err(err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["peak_index", "label", "overlap"] {
        return Err(Error::format(
            "truth csv",
            format!("expected header peak_index,label,overlap, got {headers:?}"),
        ));
    }
    let mut truth = Truth::default();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(err)?;
        let field = |i: usize| -> Result<usize> {
            rec[i]
                .trim()
                .parse()
                .map_err(|e| Error::format("truth csv", format!("row {row}, column {i}: {e}")))
        };
        truth.times.push(field(0)?);
        truth.labels.push(field(1)?);
        truth.overlap.push(match field(2)? {
            0 => false,
            1 => true,
            v => return Err(Error::format("truth csv", format!("row {row}: overlap flag {v}"))),
        });
    }
    Ok(truth)
}

pub fn write_truth_file(path: &Path, ds: &SynthDataset) -> Result<()> {
    let mut buf = Vec::new();
    write_truth(&mut buf, ds)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_truth_file(path: &Path) -> Result<Truth> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(f)
}
