//! Scatter matrices, PCA, ratio-trace LDA and the iterative trace-ratio solver.
//!
//! All routines work on an m×n waveform matrix (one spike per column) and
//! center it by its own column mean first, so the between-class scatter
//! `Σ n_k μ_k μ_kᵀ` is measured about the global mean and
//! `within + between = Xc·Xcᵀ` holds exactly.

use nalgebra::{DMatrix, DVector};

use crate::clustering::LabelAssignment;
use crate::error::{Error, Result};
use crate::linalg::{center_columns, orthonormalize, sym_eigen_desc, top_eigenvectors, trace_ratio};

/// Shrinkage applied to the within-class scatter: `S_w + ε·tr(S_w)/m·I`.
pub const WITHIN_SHRINKAGE: f64 = 1e-6;

/// An m×d basis with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub basis: DMatrix<f64>,
}

impl Projection {
    /// Wraps `basis` after checking that its columns are orthonormal within 1e-8.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let d = basis.ncols();
        if d == 0 || d > basis.nrows() {
            return Err(Error::invalid(
                "d",
                format!("need 1 <= d <= m, got d={d}, m={}", basis.nrows()),
            ));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::identity(d, d)).amax();
        if err > 1e-8 {
            return Err(Error::Numerical(format!(
                "basis columns are not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(Self { basis })
    }

    /// First `d` coordinate axes of an m-dimensional space.
    pub fn identity(m: usize, d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(m, d))
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }
}

/// Within- and between-class scatter of a labeled spike set.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub within: DMatrix<f64>,
    pub between: DMatrix<f64>,
    /// Cluster means in centered coordinates, one column per cluster.
    pub centroids: DMatrix<f64>,
    pub counts: Vec<usize>,
    /// Global mean that was removed before accumulating.
    pub mean: DVector<f64>,
}

impl ScatterPair {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.within.nrows()
    }

    /// Total scatter `within + between`.
    pub fn total(&self) -> DMatrix<f64> {
        &self.within + &self.between
    }

    /// Within-class scatter with trace-relative shrinkage so it is invertible.
    pub fn regularized_within(&self) -> DMatrix<f64> {
        let m = self.dim();
        let tr = self.within.trace();
        let shift = if tr > 0.0 {
            WITHIN_SHRINKAGE * tr / m as f64
        } else {
            WITHIN_SHRINKAGE
        };
        let mut sw = self.within.clone();
        for i in 0..m {
            sw[(i, i)] += shift;
        }
        sw
    }

    /// `tr(WᵀS_bW) / tr(WᵀS̃_wW)` with the regularized within scatter.
    pub fn trace_ratio(&self, proj: &Projection) -> f64 {
        trace_ratio(&proj.basis, &self.between, &self.regularized_within())
    }

    /// Between-class scatter negligible against the raw data energy, which
    /// includes the removed mean so centering round-off cannot pass as signal.
    fn is_degenerate(&self) -> bool {
        let b = self.between.trace();
        let w = self.within.trace();
        let n: usize = self.counts.iter().sum();
        let raw = b + w + n as f64 * self.mean.norm_squared();
        b <= 0.0 || b <= 1e-12 * raw
    }
}

/// Scatter matrices of `data` (m×n, spikes as columns) under `labels`.
/// Outlier-labeled spikes are left out of both matrices and of the mean.
pub fn scatter(data: &DMatrix<f64>, labels: &LabelAssignment) -> Result<ScatterPair> {
    let (m, n) = data.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let k = labels.k();
    let members: Vec<usize> = (0..n).filter(|&i| labels.label(i).is_some()).collect();
    if members.is_empty() {
        return Err(Error::EmptyInput);
    }
    let counts = labels.counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(empty));
    }

    let mut mean = DVector::zeros(m);
    for &i in &members {
        mean += data.column(i);
    }
    mean /= members.len() as f64;

    let mut centroids = DMatrix::zeros(m, k);
    for &i in &members {
        let c = labels.label(i).expect("member");
        let mut col = centroids.column_mut(c);
        col += data.column(i) - &mean;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        let mut col = centroids.column_mut(c);
        col /= cnt as f64;
    }

    let mut deviations = DMatrix::zeros(m, members.len());
    for (j, &i) in members.iter().enumerate() {
        let c = labels.label(i).expect("member");
        let dev = data.column(i) - &mean - centroids.column(c);
        deviations.set_column(j, &dev);
    }
    let within = &deviations * deviations.transpose();

    let mut weighted = centroids.clone();
    for (c, &cnt) in counts.iter().enumerate() {
        let mut col = weighted.column_mut(c);
        col *= cnt as f64;
    }
    let between = &weighted * centroids.transpose();

    Ok(ScatterPair {
        within: (&within + within.transpose()) * 0.5,
        between: (&between + between.transpose()) * 0.5,
        centroids,
        counts,
        mean,
    })
}

/// Top-`d` principal directions of the centered spikes, eigenvalue-descending.
pub fn pca_basis(data: &DMatrix<f64>, d: usize) -> Result<Projection> {
    let (m, n) = data.shape();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, given: n });
    }
    if d == 0 || d > m {
        return Err(Error::invalid("d", format!("need 1 <= d <= {m}, got {d}")));
    }
    let (xc, _) = center_columns(data);
    let cov = (&xc * xc.transpose()) / (n - 1) as f64;
    let basis = top_eigenvectors(&cov, d)?;
    Projection::new(basis)
}

/// Ratio-trace LDA: top-`d` eigenvectors of `S̃_w⁻¹ S_b`, re-orthonormalized.
///
/// Returns [`Error::DegenerateScatter`] when the between-class scatter vanishes.
pub fn lda_ratio_trace(scatter: &ScatterPair, d: usize) -> Result<Projection> {
    let k = scatter.k();
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if k < 2 || d > k - 1 {
        return Err(Error::LdaRankLimit {
            d,
            max: k.saturating_sub(1),
        });
    }
    if scatter.is_degenerate() {
        return Err(Error::DegenerateScatter);
    }
    let sw = scatter.regularized_within();
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Numerical("within scatter is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    // S_b v = λ S̃_w v  <=>  (L⁻¹ S_b L⁻ᵀ) u = λ u,  v = L⁻ᵀ u
    let c = &l_inv * &scatter.between * l_inv.transpose();
    let u = top_eigenvectors(&c, d)?;
    let v = l_inv.transpose() * u;
    Projection::new(orthonormalize(&v))
}

/// Solution of the iterative trace-ratio problem.
#[derive(Debug, Clone)]
pub struct TraceRatioSolution {
    pub projection: Projection,
    /// Final trace ratio λ.
    pub ratio: f64,
    /// λ after initialization and after each accepted iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterative trace-ratio (ITR) solver.
///
/// Starts from the ratio-trace solution and alternates
/// `λ ← tr(WᵀS_bW)/tr(WᵀS̃_wW)`, `W ← top-d eigenvectors of (S_b − λ·S̃_w)`
/// until `|Δλ| ≤ tol·max(1, λ)` or `max_iter` iterations. Hitting the
/// iteration cap is reported through `converged = false`, not as an error.
pub fn itr_trace_ratio(
    scatter: &ScatterPair,
    d: usize,
    tol: f64,
    max_iter: usize,
) -> Result<TraceRatioSolution> {
    let init = lda_ratio_trace(scatter, d)?;
    itr_from(scatter, init, tol, max_iter)
}

/// ITR iterations from an arbitrary orthonormal starting basis.
pub fn itr_from(
    scatter: &ScatterPair,
    init: Projection,
    tol: f64,
    max_iter: usize,
) -> Result<TraceRatioSolution> {
    let d = init.dim();
    if init.input_dim() != scatter.dim() {
        return Err(Error::DimensionMismatch {
            expected: scatter.dim(),
            got: init.input_dim(),
        });
    }
    let sw = scatter.regularized_within();
    let sb = &scatter.between;
    let mut w = init;
    let mut lambda = trace_ratio(&w.basis, sb, &sw);
    let mut history = vec![lambda];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let shifted = sb - &sw * lambda;
        let candidate = Projection::new(top_eigenvectors(&shifted, d)?)?;
        let next = trace_ratio(&candidate.basis, sb, &sw);
        if !next.is_finite() {
            return Err(Error::Numerical("trace ratio diverged".into()));
        }
        if next < lambda {
            // Rounding-level regression: the previous basis is already optimal.
            converged = true;
            break;
        }
        let step = next - lambda;
        w = candidate;
        lambda = next;
        history.push(lambda);
        if step <= tol * lambda.max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(TraceRatioSolution {
        projection: w,
        ratio: lambda,
        history,
        iterations,
        converged,
    })
}

/// `Y = Wᵀ·(X − mean(X))`, a d×n feature matrix.
pub fn project(data: &DMatrix<f64>, proj: &Projection) -> Result<DMatrix<f64>> {
    if proj.input_dim() != data.nrows() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            got: proj.input_dim(),
        });
    }
    let (xc, _) = center_columns(data);
    Ok(proj.basis.transpose() * xc)
}

/// Eigenvalues of the centered covariance, descending. Exposed for diagnostics.
pub fn pca_spectrum(data: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = data.ncols();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, given: n });
    }
    let (xc, _) = center_columns(data);
    let cov = (&xc * xc.transpose()) / (n - 1) as f64;
    Ok(sym_eigen_desc(&cov)?.0)
}
