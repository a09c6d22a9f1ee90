mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::seq::SliceRandom;
use rand::Rng;

use spikesort_core::clustering::{kmeans, kmeans_restarts, partition_sse};
use spikesort_core::density::{ad_statistic, count_peaks, histogram};
use spikesort_core::eval::match_and_score;
use spikesort_core::sorters::{sort_algo2, SplitTree};
use spikesort_core::subspace::{itr_trace_ratio, lda_ratio_trace, pca_basis, project, scatter, Projection};
use spikesort_core::{Algo2Config, Diagnostics, LabelAssignment, OUTLIER};

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

/// Random labels covering every cluster at least once.
fn random_labels(n: usize, k: usize, seed: u64) -> LabelAssignment {
    let mut r = common::rng(seed);
    let mut v: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
    v.shuffle(&mut r);
    LabelAssignment::from_indices(&v, k).unwrap()
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = x.column_mean();
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}

fn gaussian_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| common::normal(&mut r)).collect()
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn total_scatter_identity(m in 2usize..8, n in 12usize..60, k in 2usize..5, seed in any::<u64>()) {
        let x = common::random_matrix(m, n, seed);
        let s = scatter(&x, &random_labels(n, k, seed ^ 1)).unwrap();
        let xc = centered(&x);
        let total = &xc * xc.transpose();
        let err = (&s.within + &s.between - &total).norm() / total.norm();
        prop_assert!(err <= 1e-8, "relative error {err}");
    }

    #[test]
    fn itr_lambda_never_decreases(m in 3usize..9, k in 2usize..5, seed in any::<u64>()) {
        let n = 60;
        let x = common::random_matrix(m, n, seed);
        let s = scatter(&x, &random_labels(n, k, seed ^ 2)).unwrap();
        let d = (k - 1).min(m - 1);
        let sol = itr_trace_ratio(&s, d, 1e-10, 100).unwrap();
        for w in sol.history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{:?}", sol.history);
        }
    }

    #[test]
    fn kmeans_sse_monotone_and_fixed_point(d in 1usize..5, n in 10usize..80, k in 1usize..6, seed in any::<u64>()) {
        let x = common::random_matrix(d, n, seed);
        let r = kmeans(&x, k, seed, 300).unwrap();
        for w in r.sse_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
        let labels = r.labels();
        // centroid = member mean
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            prop_assert!(!members.is_empty());
            let mean = members.iter().fold(nalgebra::DVector::zeros(d), |acc, &i| acc + x.column(i)) / members.len() as f64;
            prop_assert!((mean - r.centroids.column(c)).amax() <= 1e-9);
        }
        // nearest-centroid labels
        for (i, &li) in labels.iter().enumerate() {
            let own = (x.column(i) - r.centroids.column(li)).norm_squared();
            for c in 0..k {
                let other = (x.column(i) - r.centroids.column(c)).norm_squared();
                prop_assert!(own <= other + 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_restarts_never_beat_exhaustive_optimum(n in 3usize..9, seed in any::<u64>()) {
        let x = common::random_matrix(2, n, seed);
        let best = common::brute_force_sse_k2(&x);
        let r = kmeans_restarts(&x, 2, 50, seed).unwrap();
        prop_assert!(r.sse >= best - 1e-9);
    }

    #[test]
    fn ad_affine_invariance(n in 8usize..400, a in 0.01f64..100.0, flip in any::<bool>(), b in -50.0f64..50.0, seed in any::<u64>()) {
        let v = gaussian_samples(n, seed);
        let scale = if flip { -a } else { a };
        let w: Vec<f64> = v.iter().map(|x| scale * x + b).collect();
        let (p, q) = (ad_statistic(&v).unwrap(), ad_statistic(&w).unwrap());
        prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0), "{p} vs {q}");
    }

    #[test]
    fn ad_agrees_with_oracle(n in 8usize..400, shift in 0.0f64..6.0, seed in any::<u64>()) {
        let mut v = gaussian_samples(n, seed);
        // a second mode makes large scores part of the domain
        for x in v.iter_mut().step_by(2) {
            *x += shift;
        }
        let lib = ad_statistic(&v).unwrap();
        let oracle = common::ad_oracle(&v);
        prop_assert!((lib - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{lib} vs {oracle}");
    }

    #[test]
    fn accuracy_ignores_found_label_names(n in 10usize..200, kt in 1usize..5, kf in 1usize..7, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..kt)).collect();
        let found: Vec<i64> = (0..n).map(|_| r.random_range(-1..kf as i64)).collect();
        let overlap: Vec<bool> = (0..n).map(|_| r.random_bool(0.1)).collect();
        let mut perm: Vec<i64> = (0..kf as i64).collect();
        perm.shuffle(&mut r);
        let renamed: Vec<i64> = found.iter().map(|&l| if l == OUTLIER { l } else { perm[l as usize] }).collect();
        let a = LabelAssignment::new(found, kf).unwrap();
        let b = LabelAssignment::new(renamed, kf).unwrap();
        match (match_and_score(&a, &truth, &overlap), match_and_score(&b, &truth, &overlap)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x.accuracy_pct, y.accuracy_pct),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "only one side failed"),
        }
    }

    #[test]
    fn accuracy_of_truth_is_perfect(n in 1usize..200, kt in 1usize..6, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..kt)).collect();
        let found = LabelAssignment::from_indices(&truth, kt).unwrap();
        let report = match_and_score(&found, &truth, &vec![false; n]).unwrap();
        prop_assert_eq!(report.accuracy_pct, 100.0);
    }

    #[test]
    fn relabeling_keeps_sse_and_trace_ratio(m in 2usize..6, k in 2usize..5, seed in any::<u64>()) {
        let n = 40;
        let x = common::random_matrix(m, n, seed);
        let labels = random_labels(n, k, seed ^ 3);
        let mut r = common::rng(seed ^ 4);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let renamed: Vec<usize> = labels.labels().iter().map(|&l| perm[l as usize]).collect();
        let renamed = LabelAssignment::from_indices(&renamed, k).unwrap();
        let (a, b) = (partition_sse(&x, &labels), partition_sse(&x, &renamed));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        let p = pca_basis(&x, 1).unwrap();
        let (sa, sb) = (scatter(&x, &labels).unwrap(), scatter(&x, &renamed).unwrap());
        prop_assert!((sa.trace_ratio(&p) - sb.trace_ratio(&p)).abs() <= 1e-9 * sa.trace_ratio(&p).max(1.0));
    }

    #[test]
    fn learned_bases_are_orthonormal(m in 3usize..10, k in 2usize..5, seed in any::<u64>()) {
        let n = 50;
        let x = common::random_matrix(m, n, seed);
        let s = scatter(&x, &random_labels(n, k, seed ^ 5)).unwrap();
        let d = (k - 1).min(m - 1);
        let bases = [
            pca_basis(&x, d).unwrap(),
            lda_ratio_trace(&s, d).unwrap(),
            itr_trace_ratio(&s, d, 1e-10, 100).unwrap().projection,
        ];
        for p in &bases {
            let gram = p.basis.transpose() * &p.basis;
            prop_assert!((gram - DMatrix::identity(d, d)).amax() <= 1e-8);
        }
    }

    #[test]
    fn projection_contracts_norms(m in 2usize..10, n in 1usize..30, seed in any::<u64>()) {
        let d = 1 + (seed as usize) % (m - 1);
        let q = common::random_orthogonal(m, seed);
        let p = Projection::new(q.columns(0, d).into_owned()).unwrap();
        let x = common::random_matrix(m, n, seed ^ 6);
        let y = project(&x, &p).unwrap();
        let xc = centered(&x);
        for i in 0..n {
            prop_assert!(y.column(i).norm() <= xc.column(i).norm() + 1e-12);
        }
    }

    #[test]
    fn histogram_conserves_mass(n in 10usize..2000, spread in 0.0f64..100.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let v: Vec<f64> = (0..n).map(|_| spread * common::normal(&mut r) + r.random_range(0.0..spread.max(1e-3))).collect();
        let h = histogram(&v).unwrap();
        prop_assert_eq!(h.total(), n as u64);
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        let mass: f64 = h.smoothed.iter().sum();
        prop_assert!((mass - n as f64).abs() <= 1e-9 * n as f64);
    }

    #[test]
    fn peak_count_ignores_height_scale(n in 10usize..1000, sep in 0.0f64..10.0, c in 0.001f64..1000.0, seed in any::<u64>()) {
        let mut v = gaussian_samples(n, seed);
        for x in v.iter_mut().step_by(3) {
            *x += sep;
        }
        let h = histogram(&v).unwrap();
        let mut scaled = h.clone();
        scaled.smoothed.iter_mut().for_each(|s| *s *= c);
        prop_assert_eq!(count_peaks(&h), count_peaks(&scaled));
    }
}

fn two_blob_spikes(seed: u64, sep: f64) -> spikesort_core::SpikeMatrix {
    let (x, _) = common::blobs(&[common::axis_center(8, 0, -sep), common::axis_center(8, 0, sep)], 120, 1.0, seed);
    common::spikes(x)
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn algo2_partitions_every_spike(sep in 0.0f64..8.0, seed in any::<u64>()) {
        let sm = two_blob_spikes(seed, sep);
        let r = sort_algo2(&sm, &Algo2Config { seed, ..Algo2Config::default() }).unwrap();
        prop_assert_eq!(r.assignment.len(), sm.n());
        let Diagnostics::Algo2(tree) = &r.diagnostics else { unreachable!() };
        let tree: &SplitTree = tree;
        let kept: usize = tree.leaves().filter(|l| l.label != Some(OUTLIER)).map(|l| l.size).sum();
        prop_assert_eq!(kept + r.assignment.outlier_count(), sm.n());
        prop_assert!(tree.leaves().filter(|l| l.label != Some(OUTLIER)).all(|l| l.size >= tree.min_cluster_size));
        let distinct: std::collections::BTreeSet<i64> = r.assignment.labels().iter().copied().filter(|&l| l != OUTLIER).collect();
        prop_assert_eq!(distinct.len(), r.detected_k);
    }

    #[test]
    fn algo2_labels_ignore_amplitude(sep in 0.0f64..8.0, c in 0.01f64..100.0, seed in any::<u64>()) {
        let sm = two_blob_spikes(seed, sep);
        let cfg = Algo2Config { seed, ..Algo2Config::default() };
        let a = sort_algo2(&sm, &cfg).unwrap();
        let b = sort_algo2(&sm.scaled(c), &cfg).unwrap();
        prop_assert_eq!(a.assignment, b.assignment);
    }
}
