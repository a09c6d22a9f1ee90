//! Raw signals, RMS-threshold spike detection, peak-aligned window
//! extraction, and the on-disk formats for signals, spike matrices and labels.
//!
//! Formats:
//! * signal: `X.f32` little-endian f32 samples plus a `X.json` sidecar holding
//!   `sample_rate_hz`;
//! * spike matrix: `SPKM` magic, `u32 m`, `u32 n`, `u32 peak_index`,
//!   `f64 sample_rate_hz`, then column-major little-endian f64 data;
//! * labels: CSV `spike_index,label` with outliers as `-1`, preceded by a
//!   `# k=K` comment line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{LabelAssignment, OUTLIER};
use crate::error::{Error, Result};

/// A single-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f32>,
    pub sample_rate_hz: f64,
}

impl RawSignal {
    pub fn new(samples: Vec<f32>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Spike waveforms stored column-wise (m samples × n spikes), all aligned
/// so that their extremum sits at `peak_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeMatrix {
    pub data: DMatrix<f64>,
    pub peak_index: usize,
    pub sample_rate_hz: f64,
}

impl SpikeMatrix {
    pub fn new(data: DMatrix<f64>, peak_index: usize, sample_rate_hz: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::invalid("m", "waveforms need at least one sample"));
        }
        if peak_index >= data.nrows() {
            return Err(Error::invalid(
                "peak_index",
                format!("{peak_index} is outside [0, {})", data.nrows()),
            ));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        Ok(Self {
            data,
            peak_index,
            sample_rate_hz,
        })
    }

    /// Samples per spike.
    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    /// Number of spikes.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    /// Columns `indices` as a new matrix with the same alignment metadata.
    pub fn select(&self, indices: &[usize]) -> SpikeMatrix {
        SpikeMatrix {
            data: self.data.select_columns(indices),
            peak_index: self.peak_index,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Every sample multiplied by `c`.
    pub fn scaled(&self, c: f64) -> SpikeMatrix {
        SpikeMatrix {
            data: &self.data * c,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Negative,
    Positive,
    Absolute,
}

impl Polarity {
    /// Sample value mapped so that "more extreme" is always larger.
    #[inline]
    pub fn adjust(self, x: f64) -> f64 {
        match self {
            Polarity::Negative => -x,
            Polarity::Positive => x,
            Polarity::Absolute => x.abs(),
        }
    }
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" | "neg" => Ok(Polarity::Negative),
            "positive" | "pos" => Ok(Polarity::Positive),
            "absolute" | "abs" => Ok(Polarity::Absolute),
            other => Err(Error::invalid("polarity", format!("unknown polarity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold_multiplier: f64,
    pub polarity: Polarity,
    pub lockout_samples: usize,
    pub pre_peak: usize,
    pub post_peak: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self::with_window(20, 43)
    }
}

impl DetectionConfig {
    /// 3×RMS negative detection with the given window split; lockout equals `post_peak`.
    pub fn with_window(pre_peak: usize, post_peak: usize) -> Self {
        Self {
            threshold_multiplier: 3.0,
            polarity: Polarity::Negative,
            lockout_samples: post_peak.max(1),
            pre_peak,
            post_peak,
        }
    }

    /// Window length `pre_peak + post_peak + 1`.
    pub fn window(&self) -> usize {
        self.pre_peak + self.post_peak + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_multiplier > 0.0) {
            return Err(Error::invalid("threshold_multiplier", "must be positive"));
        }
        if self.lockout_samples == 0 {
            return Err(Error::invalid("lockout_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// Root-mean-square amplitude of the whole record.
pub fn compute_rms(signal: &RawSignal) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ss: f64 = signal.samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
    Ok((ss / signal.len() as f64).sqrt())
}

/// Indices of threshold-crossing extrema.
///
/// Scans left to right; within each supra-threshold run the sample of
/// greatest polarity-adjusted magnitude is kept (first one on ties).
/// Runs starting within `lockout_samples` of the previous detection are
/// ignored, as are events whose window would leave the signal.
pub fn detect_spikes(signal: &RawSignal, cfg: &DetectionConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let len = signal.len();
    if len <= cfg.window() {
        return Err(Error::invalid(
            "signal",
            format!("{len} samples cannot hold a {}-sample window", cfg.window()),
        ));
    }
    let threshold = cfg.threshold_multiplier * compute_rms(signal)?;
    let value = |i: usize| cfg.polarity.adjust(signal.samples[i] as f64);

    let mut peaks = Vec::new();
    let mut last: Option<usize> = None;
    let mut i = 0;
    while i < len {
        if value(i) <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        let mut best = i;
        while i < len && value(i) > threshold {
            if value(i) > value(best) {
                best = i;
            }
            i += 1;
        }
        if last.is_some_and(|l| start - l < cfg.lockout_samples) {
            continue;
        }
        if best >= cfg.pre_peak && best + cfg.post_peak < len {
            peaks.push(best);
            last = Some(best);
        }
    }
    Ok(peaks)
}

/// Moves `approx` to the most extreme sample within `±radius`.
pub fn refine_peak(signal: &RawSignal, approx: usize, radius: usize, polarity: Polarity) -> usize {
    let lo = approx.saturating_sub(radius);
    let hi = (approx + radius).min(signal.len().saturating_sub(1));
    let mut best = approx.min(hi);
    for i in lo..=hi {
        if polarity.adjust(signal.samples[i] as f64) > polarity.adjust(signal.samples[best] as f64) {
            best = i;
        }
    }
    best
}

/// Cuts `[peak − pre_peak, peak + post_peak]` around every peak.
pub fn extract_aligned(
    signal: &RawSignal,
    peaks: &[usize],
    cfg: &DetectionConfig,
) -> Result<SpikeMatrix> {
    let m = cfg.window();
    let mut data = DMatrix::zeros(m, peaks.len());
    for (col, &peak) in peaks.iter().enumerate() {
        if peak < cfg.pre_peak || peak + cfg.post_peak >= signal.len() {
            return Err(Error::WindowOutOfBounds {
                peak,
                len: signal.len(),
            });
        }
        let start = peak - cfg.pre_peak;
        for r in 0..m {
            data[(r, col)] = signal.samples[start + r] as f64;
        }
    }
    SpikeMatrix::new(data, cfg.pre_peak, signal.sample_rate_hz)
}

/// Metadata sidecar of a signal file: the same path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Serialize, Deserialize)]
struct SignalMeta {
    sample_rate_hz: f64,
    #[serde(default)]
    samples: Option<usize>,
}

/// Samples as f32 little-endian bytes.
pub fn encode_signal(signal: &RawSignal) -> Vec<u8> {
    signal.samples.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// JSON text of the signal's metadata sidecar.
pub fn signal_metadata(signal: &RawSignal) -> String {
    let meta = SignalMeta {
        sample_rate_hz: signal.sample_rate_hz,
        samples: Some(signal.len()),
    };
    serde_json::to_string_pretty(&meta).expect("plain struct serializes") + "\n"
}

/// Writes `path` (f32 LE samples) and its `.json` sidecar.
pub fn write_signal(path: &Path, signal: &RawSignal) -> Result<()> {
    fs::write(path, encode_signal(signal)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, signal_metadata(signal)).map_err(|e| Error::io(&side, e))
}

pub fn read_signal(path: &Path) -> Result<RawSignal> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            "signal",
            format!("{} bytes is not a whole number of f32 samples", bytes.len()),
        ));
    }
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SignalMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::format("signal metadata", e.to_string()))?;
    let samples: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(expected) = meta.samples {
        if expected != samples.len() {
            return Err(Error::Shape {
                what: "signal",
                detail: format!("metadata says {expected} samples, file has {}", samples.len()),
            });
        }
    }
    RawSignal::new(samples, meta.sample_rate_hz)
}

const SPKM_MAGIC: &[u8; 4] = b"SPKM";
const SPKM_HEADER: usize = 4 + 4 * 3 + 8;

pub fn encode_spike_matrix(spikes: &SpikeMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(SPKM_HEADER + 8 * spikes.data.len());
    out.extend_from_slice(SPKM_MAGIC);
    out.extend_from_slice(&(spikes.m() as u32).to_le_bytes());
    out.extend_from_slice(&(spikes.n() as u32).to_le_bytes());
    out.extend_from_slice(&(spikes.peak_index as u32).to_le_bytes());
    out.extend_from_slice(&spikes.sample_rate_hz.to_le_bytes());
    // nalgebra storage is column-major already
    for &x in spikes.data.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_spike_matrix(bytes: &[u8]) -> Result<SpikeMatrix> {
    if bytes.len() < SPKM_HEADER || &bytes[..4] != SPKM_MAGIC {
        return Err(Error::format("spike matrix", "missing SPKM header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let m = u32_at(4);
    let n = u32_at(8);
    let peak_index = u32_at(12);
    let sample_rate = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let body = &bytes[SPKM_HEADER..];
    let expected = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::format("spike matrix", "header dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::Shape {
            what: "spike matrix",
            detail: format!(
                "header says {m}x{n} ({expected} bytes), body has {} bytes",
                body.len()
            ),
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    SpikeMatrix::new(DMatrix::from_vec(m, n, values), peak_index, sample_rate)
}

pub fn write_spike_matrix(path: &Path, spikes: &SpikeMatrix) -> Result<()> {
    fs::write(path, encode_spike_matrix(spikes)).map_err(|e| Error::io(path, e))
}

pub fn read_spike_matrix(path: &Path) -> Result<SpikeMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spike_matrix(&bytes)
}

fn csv_err(what: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::format(what, e.to_string())
}

/// CSV export, one spike per row, header `s0..s{m-1}`.
pub fn write_spike_csv<W: Write>(out: W, spikes: &SpikeMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..spikes.m()).map(|i| format!("s{i}")).collect();
    w.write_record(&header).map_err(csv_err("spike csv"))?;
    for col in spikes.data.column_iter() {
        w.write_record(col.iter().map(|x| x.to_string()))
            .map_err(csv_err("spike csv"))?;
    }
    w.flush().map_err(|e| Error::format("spike csv", e.to_string()))
}

/// Reads a spike CSV written by [`write_spike_csv`]; alignment metadata is
/// not stored in CSV and must be supplied.
pub fn read_spike_csv<R: std::io::Read>(
    input: R,
    peak_index: usize,
    sample_rate_hz: f64,
) -> Result<SpikeMatrix> {
    let mut r = csv::Reader::from_reader(input);
    let m = r.headers().map_err(csv_err("spike csv"))?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err("spike csv"))?;
        if rec.len() != m {
            return Err(Error::Shape {
                what: "spike csv",
                detail: format!("row {row} has {} fields, header has {m}", rec.len()),
            });
        }
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| {
                Error::format("spike csv", format!("row {row}: {field:?}: {e}"))
            })?);
        }
        n += 1;
    }
    SpikeMatrix::new(DMatrix::from_vec(m, n, values), peak_index, sample_rate_hz)
}

pub fn write_labels<W: Write>(mut out: W, labels: &LabelAssignment) -> Result<()> {
    writeln!(out, "# k={}", labels.k()).map_err(|e| Error::format("labels", e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spike_index", "label"]).map_err(csv_err("labels"))?;
    for (i, l) in labels.labels().iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])
            .map_err(csv_err("labels"))?;
    }
    w.flush().map_err(|e| Error::format("labels", e.to_string()))
}

/// Reads a labels CSV. The cluster count comes from the `# k=K` line when
/// present, otherwise from the largest label. Rows must list spikes 0..n in order.
pub fn read_labels<R: std::io::Read>(input: R) -> Result<LabelAssignment> {
    let mut reader = BufReader::new(input);
    let mut declared_k = None;
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader
            .read_line(&mut line)
            .map_err(|e| Error::format("labels", e.to_string()))?;
        if read == 0 {
            break;
        }
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(k) = rest.trim().strip_prefix("k=") {
                declared_k = Some(k.trim().parse::<usize>().map_err(|e| {
                    Error::format("labels", format!("bad k declaration {k:?}: {e}"))
                })?);
            }
            continue;
        }
        body.push_str(&line);
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers().map_err(csv_err("labels"))?.clone();
    if headers.len() != 2 || &headers[0] != "spike_index" || &headers[1] != "label" {
        return Err(Error::format(
            "labels",
            format!("expected header spike_index,label, got {headers:?}"),
        ));
    }
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err("labels"))?;
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::format("labels", format!("row {row}: spike_index: {e}")))?;
        if idx != row {
            return Err(Error::format(
                "labels",
                format!("row {row} has spike_index {idx}; rows must be in order"),
            ));
        }
        let label: i64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::format("labels", format!("row {row}: label: {e}")))?;
        labels.push(label);
    }
    let k = match declared_k {
        Some(k) => k,
        None => labels
            .iter()
            .filter(|&&l| l != OUTLIER)
            .max()
            .map_or(1, |&l| (l.max(0) + 1) as usize),
    };
    LabelAssignment::new(labels, k)
}

pub fn write_labels_file(path: &Path, labels: &LabelAssignment) -> Result<()> {
    let mut buf = Vec::new();
    write_labels(&mut buf, labels)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_labels_file(path: &Path) -> Result<LabelAssignment> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(f)
}
