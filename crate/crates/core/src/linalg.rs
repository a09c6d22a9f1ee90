//! Small dense linear-algebra helpers shared by the subspace and clustering code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Subtracts the column mean (mean over spikes) from every column.
pub fn center_columns(data: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.ncols();
    let mean = if n == 0 {
        DVector::zeros(data.nrows())
    } else {
        data.column_mean()
    };
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    (centered, mean)
}

/// Flips `v` so that its largest-magnitude entry is positive (first index wins ties).
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn fix_column_signs(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        fix_sign(col.as_mut_slice());
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenpairs sorted by
/// descending eigenvalue and each eigenvector sign-normalized.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(a.nrows(), a.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    Ok((values, vectors))
}

/// Top-`d` eigenvectors of a symmetric matrix as an m×d matrix.
pub fn top_eigenvectors(a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let (_, vectors) = sym_eigen_desc(a)?;
    Ok(vectors.columns(0, d).into_owned())
}

/// Orthonormal basis for the column span of `w` (thin QR), sign-normalized.
pub fn orthonormalize(w: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = w.clone().qr();
    let mut q = qr.q();
    fix_column_signs(&mut q);
    q
}

/// `tr(Wᵀ A W)`.
pub fn projected_trace(w: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (w.transpose() * a * w).trace()
}

/// Trace ratio `tr(WᵀBW) / tr(WᵀSW)`.
pub fn trace_ratio(w: &DMatrix<f64>, between: &DMatrix<f64>, within: &DMatrix<f64>) -> f64 {
    let num = projected_trace(w, between);
    let den = projected_trace(w, within);
    if den <= 0.0 {
        if num <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}
