//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use spikesort_core::{DetectionConfig, SpikeMatrix, SynthConfig, TemplateMode};

pub const FS: f64 = 24_000.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian blobs around `centers`, `per` points each, in order.
pub fn blobs(centers: &[Vec<f64>], per: usize, sd: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let m = centers[0].len();
    let mut r = rng(seed);
    let n = centers.len() * per;
    let mut data = DMatrix::zeros(m, n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for j in 0..per {
            let col = c * per + j;
            for (row, &mu) in center.iter().enumerate() {
                data[(row, col)] = mu + sd * normal(&mut r);
            }
            labels.push(c);
        }
    }
    (data, labels)
}

/// Uniform entries in [-1, 1).
pub fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(m, n, |_, _| r.random_range(-1.0..1.0))
}

pub fn spikes(data: DMatrix<f64>) -> SpikeMatrix {
    SpikeMatrix::new(data, 0, FS).expect("valid matrix")
}

/// Axis-aligned center at distance `dist` along axis `axis` of an m-space.
pub fn axis_center(m: usize, axis: usize, dist: f64) -> Vec<f64> {
    let mut c = vec![0.0; m];
    c[axis] = dist;
    c
}

/// Two tight 10-D clusters of 200 spikes each plus 8 isolated stragglers,
/// four beside each cluster, each far out along its own axis.
pub fn outlier_fixture(seed: u64) -> DMatrix<f64> {
    let m = 10;
    let (core, _) = blobs(&[axis_center(m, 0, -10.0), axis_center(m, 0, 10.0)], 200, 1.0, seed);
    let mut data = DMatrix::zeros(m, core.ncols() + 8);
    data.columns_mut(0, core.ncols()).copy_from(&core);
    for s in 0..8 {
        let mut col = vec![0.0; m];
        col[1 + s % (m - 1)] = if s % 2 == 0 { 60.0 } else { -60.0 };
        col[0] = if s < 4 { -10.0 } else { 10.0 };
        data.set_column(core.ncols() + s, &nalgebra::DVector::from_vec(col));
    }
    data
}

/// Hard-mode synthetic recording cut at the ground-truth times:
/// (spikes, truth labels, overlap flags).
pub fn hard_set(sigma: f64, seed: u64, duration_s: f64, count: usize) -> (SpikeMatrix, Vec<usize>, Vec<bool>) {
    let cfg = SynthConfig::with_defaults(count, TemplateMode::Hard, duration_s, sigma, seed).expect("config");
    let ds = spikesort_core::synth::generate(&cfg).expect("dataset");
    let (sm, kept) = ds.truth_spikes(&DetectionConfig::default(), 0).expect("windows");
    let truth = kept.iter().map(|&i| ds.truth_labels[i]).collect();
    let overlap = kept.iter().map(|&i| ds.overlap_flags[i]).collect();
    (sm, truth, overlap)
}

/// Standard normal CDF from the complementary error function.
pub fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// A² written directly from its textbook definition, sharing no code with
/// the library: estimated mean and n-1 variance, no correction.
pub fn ad_oracle(values: &[f64]) -> f64 {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut s = 0.0;
    for i in 0..n {
        let lower = phi(z[i]).ln();
        // upper tail through erfc keeps precision for large z
        let upper = (0.5 * libm::erfc(z[n - 1 - i] / std::f64::consts::SQRT_2)).ln();
        s += (2 * i + 1) as f64 * (lower + upper);
    }
    -nf - s / nf
}

/// Minimum SSE over every 2-partition of the columns (both parts non-empty).
pub fn brute_force_sse_k2(points: &DMatrix<f64>) -> f64 {
    let n = points.ncols();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let mut sse = 0.0;
        for side in [true, false] {
            let members: Vec<usize> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
            if members.is_empty() {
                sse = f64::INFINITY;
                break;
            }
            let mean = members
                .iter()
                .fold(nalgebra::DVector::zeros(points.nrows()), |acc, &i| acc + points.column(i))
                / members.len() as f64;
            sse += members.iter().map(|&i| (points.column(i) - &mean).norm_squared()).sum::<f64>();
        }
        best = best.min(sse);
    }
    best
}

/// Angle in degrees between two directions, ignoring sign.
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos().to_degrees()
}

/// Random orthogonal m×m matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(m: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let g = DMatrix::from_fn(m, m, |_, _| normal(&mut r));
    g.qr().q()
}
