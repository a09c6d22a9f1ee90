mod common;

use nalgebra::{DMatrix, DVector};
use spikesort_core::subspace::*;
use spikesort_core::LabelAssignment;

fn labels(v: &[usize], k: usize) -> LabelAssignment {
    LabelAssignment::from_indices(v, k).unwrap()
}

#[test]
fn within_scatter_of_two_pairs() {
    let x = DMatrix::from_row_slice(1, 4, &[0.0, 2.0, 10.0, 12.0]);
    let s = scatter(&x, &labels(&[0, 0, 1, 1], 2)).unwrap();
    assert!((s.within[(0, 0)] - 4.0).abs() < 1e-12);
    assert!((s.between[(0, 0)] - 100.0).abs() < 1e-9);
}

#[test]
fn identical_points_have_zero_scatter() {
    let x = DMatrix::from_element(3, 6, 2.5);
    let s = scatter(&x, &labels(&[0, 1, 2, 0, 1, 2], 3)).unwrap();
    assert!(s.within.amax() < 1e-12);
    assert!(s.between.amax() < 1e-12);
}

#[test]
fn empty_cluster_is_named() {
    let x = common::random_matrix(3, 4, 1);
    let err = scatter(&x, &labels(&[0, 0, 2, 2], 3)).unwrap_err();
    assert!(err.to_string().contains('1'), "{err}");
}

#[test]
fn scatter_matrices_are_symmetric_psd_with_rank_limit() {
    let x = common::random_matrix(6, 40, 2);
    let lab: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let s = scatter(&x, &labels(&lab, 3)).unwrap();
    for m in [&s.within, &s.between] {
        assert!((m - m.transpose()).amax() <= 1e-10);
        let ev = m.clone().symmetric_eigen().eigenvalues;
        let top = ev.max();
        assert!(ev.iter().all(|&e| e >= -1e-9 * top.max(1.0)));
    }
    let ev = s.between.clone().symmetric_eigen().eigenvalues;
    let significant = ev.iter().filter(|&&e| e > 1e-9 * ev.max()).count();
    assert!(significant <= 2);
}

#[test]
fn pca_of_collinear_data_follows_the_line() {
    let dir = DVector::from_vec(vec![1.0, 2.0, -2.0]).normalize();
    let x = DMatrix::from_fn(3, 20, |r, c| dir[r] * (c as f64 - 7.0));
    let p = pca_basis(&x, 1).unwrap();
    let dot = p.basis.column(0).dot(&dir).abs();
    assert!((dot - 1.0).abs() < 1e-8);
}

#[test]
fn pca_of_axis_aligned_data_orders_axes_by_variance() {
    // closed form: covariance diag(4, 1) has the coordinate axes as eigenvectors
    let mut r = common::rng(3);
    let x = DMatrix::from_fn(2, 4000, |row, _| {
        let sd = if row == 0 { 2.0 } else { 1.0 };
        sd * common::normal(&mut r)
    });
    let p = pca_basis(&x, 2).unwrap();
    assert!(common::angle_deg(p.basis.column(0).as_slice(), &[1.0, 0.0]) < 3.0);
    assert!(common::angle_deg(p.basis.column(1).as_slice(), &[0.0, 1.0]) < 3.0);
}

#[test]
fn pca_columns_have_largest_entry_positive() {
    let x = common::random_matrix(8, 50, 4);
    let p = pca_basis(&x, 3).unwrap();
    for col in p.basis.column_iter() {
        let big = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        assert!(big > 0.0);
    }
}

#[test]
fn full_pca_preserves_distances() {
    let x = common::random_matrix(5, 12, 5);
    let p = pca_basis(&x, 5).unwrap();
    let y = project(&x, &p).unwrap();
    for i in 0..12 {
        for j in 0..12 {
            let dx = (x.column(i) - x.column(j)).norm();
            let dy = (y.column(i) - y.column(j)).norm();
            assert!((dx - dy).abs() < 1e-8);
        }
    }
}

#[test]
fn pca_dimension_out_of_range() {
    let x = common::random_matrix(4, 10, 6);
    assert!(pca_basis(&x, 0).is_err());
    assert!(pca_basis(&x, 5).is_err());
}

/// Two elongated Gaussian classes in 10-D whose best separating direction
/// differs from the centroid difference.
fn two_class(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let m = 10;
    let mut r = common::rng(seed);
    let n = 600;
    let mut x = DMatrix::zeros(m, n);
    let mut lab = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        for row in 0..m {
            let sd = 1.0 + row as f64 * 0.4;
            x[(row, i)] = sd * common::normal(&mut r);
        }
        // shared correlated component
        let z = 2.0 * common::normal(&mut r);
        x[(0, i)] += z;
        x[(1, i)] += z;
        if c == 1 {
            x[(0, i)] += 6.0;
            x[(2, i)] += 3.0;
        }
        lab.push(c);
    }
    (x, lab)
}

fn fisher_direction(x: &DMatrix<f64>, lab: &[usize]) -> DVector<f64> {
    // closed-form two-class LDA: S_w⁻¹ (μ₁ − μ₀), computed from raw sums
    let m = x.nrows();
    let mut mu = [DVector::zeros(m), DVector::zeros(m)];
    let mut cnt = [0.0; 2];
    for (i, &c) in lab.iter().enumerate() {
        mu[c] += x.column(i);
        cnt[c] += 1.0;
    }
    mu[0] /= cnt[0];
    mu[1] /= cnt[1];
    let mut sw = DMatrix::zeros(m, m);
    for (i, &c) in lab.iter().enumerate() {
        let d = x.column(i) - &mu[c];
        sw += &d * d.transpose();
    }
    sw.lu().solve(&(&mu[1] - &mu[0])).unwrap()
}

#[test]
fn ratio_trace_matches_two_class_closed_form() {
    let (x, lab) = two_class(7);
    let s = scatter(&x, &labels(&lab, 2)).unwrap();
    let p = lda_ratio_trace(&s, 1).unwrap();
    let oracle = fisher_direction(&x, &lab);
    assert!(common::angle_deg(p.basis.column(0).as_slice(), oracle.as_slice()) < 5.0);
}

#[test]
fn itr_matches_ratio_trace_for_two_classes() {
    let (x, lab) = two_class(8);
    let s = scatter(&x, &labels(&lab, 2)).unwrap();
    let a = lda_ratio_trace(&s, 1).unwrap();
    let b = itr_trace_ratio(&s, 1, 1e-8, 100).unwrap();
    assert!(common::angle_deg(a.basis.column(0).as_slice(), b.projection.basis.column(0).as_slice()) < 5.0);
}

#[test]
fn ratio_trace_beats_pca_on_labeled_data() {
    let (x, lab) = two_class(9);
    let s = scatter(&x, &labels(&lab, 2)).unwrap();
    let lda = lda_ratio_trace(&s, 1).unwrap();
    let pca = pca_basis(&x, 1).unwrap();
    assert!(s.trace_ratio(&lda) >= s.trace_ratio(&pca));
}

#[test]
fn lda_rank_limit_enforced() {
    let (x, lab) = two_class(10);
    let s = scatter(&x, &labels(&lab, 2)).unwrap();
    assert!(lda_ratio_trace(&s, 2).unwrap_err().to_string().contains("LDA rank limit"));
}

#[test]
fn single_cluster_scatter_is_degenerate() {
    let x = common::random_matrix(4, 30, 11);
    let s = scatter(&x, &LabelAssignment::single(30)).unwrap();
    assert!(matches!(lda_ratio_trace(&s, 1), Err(spikesort_core::Error::LdaRankLimit { .. }) | Err(spikesort_core::Error::DegenerateScatter)));
    let two = scatter(&DMatrix::from_element(3, 6, 1.0), &labels(&[0, 0, 0, 1, 1, 1], 2)).unwrap();
    assert!(matches!(lda_ratio_trace(&two, 1), Err(spikesort_core::Error::DegenerateScatter)));
}

#[test]
fn solvers_are_rotation_invariant() {
    let (centers, per) = (
        vec![
            common::axis_center(6, 0, 0.0),
            common::axis_center(6, 1, 5.0),
            common::axis_center(6, 2, 5.0),
        ],
        80,
    );
    let (x, lab) = common::blobs(&centers, per, 1.0, 12);
    let q = common::random_orthogonal(6, 13);
    let xr = &q * &x;
    let l = labels(&lab, 3);
    let s = scatter(&x, &l).unwrap();
    let sr = scatter(&xr, &l).unwrap();
    for d in [1, 2] {
        let a = s.trace_ratio(&lda_ratio_trace(&s, d).unwrap());
        let b = sr.trace_ratio(&lda_ratio_trace(&sr, d).unwrap());
        assert!((a - b).abs() <= 1e-8 * a.max(1.0), "ratio-trace d={d}: {a} vs {b}");
        let a = itr_trace_ratio(&s, d, 1e-12, 200).unwrap().ratio;
        let b = itr_trace_ratio(&sr, d, 1e-12, 200).unwrap().ratio;
        assert!((a - b).abs() <= 1e-8 * a.max(1.0), "itr d={d}: {a} vs {b}");
    }
}

#[test]
fn itr_with_identity_within_recovers_between_eigenvectors() {
    let m = 5;
    let b = {
        let v = common::random_matrix(m, 2, 14);
        &v * v.transpose()
    };
    let s = ScatterPair {
        within: DMatrix::identity(m, m),
        between: b.clone(),
        centroids: DMatrix::zeros(m, 3),
        counts: vec![1, 1, 1],
        mean: DVector::zeros(m),
    };
    let sol = itr_trace_ratio(&s, 2, 1e-12, 100).unwrap();
    let eig = b.symmetric_eigen();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = DMatrix::from_columns(&[eig.eigenvectors.column(idx[0]).into_owned(), eig.eigenvectors.column(idx[1]).into_owned()]);
    // same span: projector difference vanishes
    let pa = &sol.projection.basis * sol.projection.basis.transpose();
    let pb = &top * top.transpose();
    assert!((pa - pb).amax() < 1e-6);
}

#[test]
fn itr_ratio_not_below_ratio_trace() {
    let (x, lab) = common::blobs(
        &[common::axis_center(8, 0, 0.0), common::axis_center(8, 1, 4.0), common::axis_center(8, 2, 3.0), common::axis_center(8, 3, 6.0)],
        60,
        1.0,
        15,
    );
    let s = scatter(&x, &labels(&lab, 4)).unwrap();
    for d in 1..=3 {
        let rt = s.trace_ratio(&lda_ratio_trace(&s, d).unwrap());
        let itr = itr_trace_ratio(&s, d, 1e-8, 100).unwrap();
        assert!(itr.ratio >= rt - 1e-8, "d={d}");
    }
}

#[test]
fn identity_basis_projects_to_centered_data() {
    let x = common::random_matrix(4, 9, 16);
    let y = project(&x, &Projection::identity(4, 4).unwrap()).unwrap();
    let mean = x.column_mean();
    for i in 0..9 {
        assert!((y.column(i) - (x.column(i) - &mean)).amax() < 1e-12);
    }
}

#[test]
fn zero_matrix_projects_to_zero() {
    let p = Projection::identity(4, 2).unwrap();
    assert!(project(&DMatrix::zeros(4, 5), &p).unwrap().amax() == 0.0);
}

#[test]
fn projection_dimension_mismatch() {
    let p = Projection::identity(4, 2).unwrap();
    assert!(project(&DMatrix::zeros(3, 5), &p).is_err());
}
