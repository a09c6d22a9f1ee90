mod common;

use spikesort_core::eval::match_and_score;
use spikesort_core::sorters::*;
use spikesort_core::{Algo1Config, Algo2Config, Diagnostics, LabelAssignment, SortResult, OUTLIER};

fn accuracy(r: &SortResult, truth: &[usize], overlap: &[bool]) -> f64 {
    match_and_score(&r.assignment, truth, overlap).unwrap().accuracy_pct
}

fn trace(r: &SortResult) -> &Algo1Trace {
    match &r.diagnostics {
        Diagnostics::Algo1(t) => t,
        other => panic!("unexpected diagnostics {other:?}"),
    }
}

fn tree(r: &SortResult) -> &SplitTree {
    match &r.diagnostics {
        Diagnostics::Algo2(t) => t,
        other => panic!("unexpected diagnostics {other:?}"),
    }
}

/// Replays the stopping rules over the recorded (K, P_K) pairs.
fn replay_stop(peaks: &[(usize, usize)], pca_peaks: usize, k2_ad: Option<f64>) -> (Algo1Stop, usize) {
    let low_ad = k2_ad.is_some_and(|a| a < DEFAULT_AD_THRESHOLD);
    for (i, &(k, p)) in peaks.iter().enumerate() {
        if k == 2 && (p == 1 || low_ad) && pca_peaks == 1 {
            return (Algo1Stop::SingleCluster, 1);
        }
        if i > 0 {
            let prev = peaks[i - 1].1;
            if p < k && prev < k - 1 {
                break;
            }
            if p == prev && p < k {
                return (Algo1Stop::Predicate, k - 1);
            }
        }
    }
    let best = peaks.iter().filter(|&&(k, p)| p >= k).map(|&(k, _)| k).max().unwrap_or(2);
    let last = peaks.last().unwrap();
    let stop = if peaks.len() >= 2 && last.1 < last.0 && peaks[peaks.len() - 2].1 < last.0 - 1 {
        Algo1Stop::TwiceBelow
    } else {
        Algo1Stop::CapHit
    };
    (stop, best)
}

fn check_algo1_trace(r: &SortResult) {
    let t = trace(r);
    let (stop, k) = replay_stop(&t.peak_counts, t.pca_peaks, t.k2_ad);
    assert_eq!(t.stop, stop, "{t:?}");
    assert_eq!(t.accepted_k, k, "{t:?}");
    assert_eq!(t.flagged, matches!(stop, Algo1Stop::TwiceBelow | Algo1Stop::CapHit));
}

fn check_partition(r: &SortResult, n: usize) {
    assert_eq!(r.assignment.len(), n);
    let distinct: std::collections::BTreeSet<i64> = r.assignment.labels().iter().copied().filter(|&l| l != OUTLIER).collect();
    assert_eq!(distinct.len(), r.detected_k);
    assert_eq!(r.features.ncols(), n);
}

#[test]
fn algo1_finds_three_units_at_low_noise() {
    let (sm, truth, overlap) = common::hard_set(0.05, 1, 60.0, 3);
    let r = sort_algo1(&sm, &Algo1Config::default()).unwrap();
    assert_eq!(r.detected_k, 3);
    assert!(accuracy(&r, &truth, &overlap) >= 97.0);
    assert!(r.projection.dim() <= 2);
    check_algo1_trace(&r);
    check_partition(&r, sm.n());
}

#[test]
fn algo1_single_unit_returns_one_cluster() {
    let (sm, _, _) = common::hard_set(0.1, 2, 30.0, 1);
    let r = sort_algo1(&sm, &Algo1Config::default()).unwrap();
    assert_eq!(r.detected_k, 1);
    let t = trace(&r);
    assert_eq!(t.stop, Algo1Stop::SingleCluster);
    assert_eq!(t.peak_counts.len(), 1);
    check_algo1_trace(&r);
}

#[test]
fn algo1_single_unit_across_noise_levels() {
    for (sigma, seed) in [(0.05, 0), (0.1, 1), (0.2, 3)] {
        let (sm, _, _) = common::hard_set(sigma, seed, 30.0, 1);
        let r = sort_algo1(&sm, &Algo1Config::default()).unwrap();
        assert_eq!(r.detected_k, 1, "sigma {sigma}");
        assert!(r.assignment.labels().iter().all(|&l| l == 0));
    }
}

#[test]
fn algo1_peak_only_rule_is_available() {
    let (sm, _, _) = common::hard_set(0.1, 2, 30.0, 1);
    let cfg = Algo1Config {
        single_cluster_ad: None,
        ..Algo1Config::default()
    };
    let r = sort_algo1(&sm, &cfg).unwrap();
    assert!(trace(&r).k2_ad.is_none());
    check_algo1_trace(&r);
}

#[test]
fn algo1_two_far_blobs() {
    let (x, truth) = common::blobs(&[common::axis_center(10, 0, -10.0), common::axis_center(10, 0, 10.0)], 300, 1.0, 3);
    let r = sort_algo1(&common::spikes(x), &Algo1Config::default()).unwrap();
    assert_eq!(r.detected_k, 2);
    let t = trace(&r);
    assert_eq!(t.peak_counts[0], (2, 2));
    assert!(t.peak_counts[1].1 <= 2);
    assert_eq!(accuracy(&r, &truth, &vec![false; truth.len()]), 100.0);
    check_algo1_trace(&r);
}

#[test]
fn algo1_needs_twenty_spikes() {
    let x = common::random_matrix(8, 19, 4);
    assert!(sort_algo1(&common::spikes(x), &Algo1Config::default()).is_err());
    let bad = Algo1Config {
        k_max: 1,
        ..Algo1Config::default()
    };
    assert!(sort_algo1(&common::spikes(common::random_matrix(8, 40, 4)), &bad).is_err());
}

#[test]
fn algo1_cap_is_flagged() {
    // many well separated blobs with a low cap
    let centers: Vec<Vec<f64>> = (0..6).map(|i| common::axis_center(12, i, 12.0)).collect();
    let (x, _) = common::blobs(&centers, 60, 0.5, 5);
    let cfg = Algo1Config {
        k_max: 3,
        ..Algo1Config::default()
    };
    let r = sort_algo1(&common::spikes(x), &cfg).unwrap();
    let t = trace(&r);
    assert_eq!(t.peak_counts.last().unwrap().0, 3);
    if t.stop == Algo1Stop::CapHit {
        assert!(t.flagged);
    }
    check_algo1_trace(&r);
}

#[test]
fn algo2_single_blob_stays_whole() {
    let (x, _) = common::blobs(&[vec![0.0; 10]], 1000, 1.0, 6);
    let r = sort_algo2(&common::spikes(x), &Algo2Config::default()).unwrap();
    assert_eq!(r.detected_k, 1);
    let t = tree(&r);
    let root = t.node(1).unwrap();
    assert_eq!(root.status, NodeStatus::Final);
    assert!(root.ad_score.unwrap() < t.ad_threshold);
}

#[test]
fn algo2_three_units_at_high_noise() {
    let (sm, truth, overlap) = common::hard_set(0.2, 0, 60.0, 3);
    let r = sort_algo2(&sm, &Algo2Config::default()).unwrap();
    assert_eq!(r.detected_k, 3);
    assert!(accuracy(&r, &truth, &overlap) >= 95.0);
    assert_eq!(r.projection.dim(), 1);
    check_partition(&r, sm.n());
}

#[test]
fn algo2_outlier_fixture() {
    let x = common::outlier_fixture(7);
    let cfg = Algo2Config {
        min_cluster_size: Some(15),
        ..Algo2Config::default()
    };
    let r = sort_algo2(&common::spikes(x), &cfg).unwrap();
    assert_eq!(r.detected_k, 2);
    let out: Vec<usize> = (0..r.assignment.len()).filter(|&i| r.assignment.labels()[i] == OUTLIER).collect();
    assert_eq!(out, (400..408).collect::<Vec<_>>());
}

#[test]
fn algo2_tree_accounts_for_every_spike() {
    let (sm, _, _) = common::hard_set(0.15, 3, 30.0, 3);
    let r = sort_algo2(&sm, &Algo2Config::default()).unwrap();
    let t = tree(&r);
    let finals: usize = t.leaves().filter(|n| n.label != Some(OUTLIER)).map(|n| n.size).sum();
    assert_eq!(finals + r.assignment.outlier_count(), sm.n());
    for leaf in t.leaves().filter(|n| n.label != Some(OUTLIER)) {
        assert!(leaf.size >= t.min_cluster_size);
        let label = leaf.label.unwrap();
        let members = r.assignment.labels().iter().filter(|&&l| l == label).count();
        assert_eq!(members, leaf.size);
    }
    for node in &t.nodes {
        match node.status {
            NodeStatus::Split => assert!(node.ad_score.unwrap() >= t.ad_threshold),
            NodeStatus::Final => assert!(node.ad_score.unwrap() < t.ad_threshold),
            NodeStatus::Outlier => assert!(node.size < t.min_cluster_size),
            _ => {}
        }
    }
}

#[test]
fn algo2_depth_limit_finalizes_remaining_sets() {
    let (x, _) = common::blobs(&[common::axis_center(8, 0, -8.0), common::axis_center(8, 0, 8.0)], 200, 1.0, 8);
    let cfg = Algo2Config {
        max_depth: 1,
        ..Algo2Config::default()
    };
    let r = sort_algo2(&common::spikes(x), &cfg).unwrap();
    let t = tree(&r);
    assert!(t.depth_limit_hit);
    assert_eq!(r.detected_k, 2);
    assert!(t.nodes.iter().filter(|n| n.depth == 1).all(|n| n.status == NodeStatus::DepthLimit));
}

#[test]
fn algo2_distance_rule_flags_far_points() {
    let (x, _) = common::blobs(&[common::axis_center(8, 0, -8.0), common::axis_center(8, 0, 8.0)], 300, 1.0, 9);
    let base = sort_algo2(&common::spikes(x.clone()), &Algo2Config::default()).unwrap();
    let cfg = Algo2Config {
        outlier_sd: Some(2.0),
        ..Algo2Config::default()
    };
    let r = sort_algo2(&common::spikes(x), &cfg).unwrap();
    let flagged = tree(&r).distance_outliers;
    assert!(flagged > 0);
    assert_eq!(r.assignment.outlier_count(), base.assignment.outlier_count() + flagged);
}

#[test]
fn algo2_rejects_bad_config() {
    let sm = common::spikes(common::random_matrix(6, 40, 10));
    let too_big = Algo2Config {
        min_cluster_size: Some(30),
        ..Algo2Config::default()
    };
    assert!(sort_algo2(&sm, &too_big).is_err());
    let bad_threshold = Algo2Config {
        ad_threshold: 0.0,
        ..Algo2Config::default()
    };
    assert!(sort_algo2(&sm, &bad_threshold).is_err());
    let tiny = Algo2Config {
        min_cluster_size: Some(1),
        ..Algo2Config::default()
    };
    assert!(sort_algo2(&sm, &tiny).is_err());
}

#[test]
fn pca_kmeans_on_separable_blobs() {
    let (x, truth) = common::blobs(
        &[common::axis_center(10, 0, 0.0), common::axis_center(10, 1, 10.0), common::axis_center(10, 2, 10.0)],
        100,
        1.0,
        11,
    );
    let r = sort_pca_kmeans(&common::spikes(x), 3, 2, 0, 10).unwrap();
    assert_eq!(accuracy(&r, &truth, &vec![false; 300]), 100.0);
}

#[test]
fn pca_kmeans_with_one_cluster() {
    let r = sort_pca_kmeans(&common::spikes(common::random_matrix(6, 50, 12)), 1, 2, 0, 3).unwrap();
    assert!(r.assignment.labels().iter().all(|&l| l == 0));
    assert!(sort_pca_kmeans(&common::spikes(common::random_matrix(6, 50, 12)), 0, 2, 0, 3).is_err());
}

#[test]
fn pca_kmeans_trails_algo1_on_hard_noise() {
    let (sm, truth, overlap) = common::hard_set(0.2, 1, 60.0, 3);
    let base = accuracy(&sort_pca_kmeans(&sm, 3, 10, 0, 10).unwrap(), &truth, &overlap);
    let a1 = accuracy(&sort_algo1(&sm, &Algo1Config::default()).unwrap(), &truth, &overlap);
    assert!(a1 >= base + 15.0, "algo1 {a1} vs pca-kmeans {base}");
}

#[test]
fn decisions_ignore_amplitude_scale() {
    let (sm, _, _) = common::hard_set(0.1, 4, 20.0, 3);
    let scaled = sm.scaled(7.5);
    let a = sort_algo1(&sm, &Algo1Config::default()).unwrap();
    let b = sort_algo1(&scaled, &Algo1Config::default()).unwrap();
    assert_eq!(a.assignment, b.assignment);
    let a = sort_algo2(&sm, &Algo2Config::default()).unwrap();
    let b = sort_algo2(&scaled, &Algo2Config::default()).unwrap();
    assert_eq!(a.assignment, b.assignment);
}

#[test]
fn sorters_are_deterministic() {
    let (sm, _, _) = common::hard_set(0.15, 5, 20.0, 3);
    let cfg1 = Algo1Config {
        seed: 42,
        ..Algo1Config::default()
    };
    let cfg2 = Algo2Config {
        seed: 42,
        ..Algo2Config::default()
    };
    let a = sort_algo1(&sm, &cfg1).unwrap();
    let b = sort_algo1(&sm, &cfg1).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.features, b.features);
    let a = sort_algo2(&sm, &cfg2).unwrap();
    let b = sort_algo2(&sm, &cfg2).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.features, b.features);
}

#[test]
fn diagnostics_serialize_with_algorithm_tag() {
    let (x, _) = common::blobs(&[common::axis_center(6, 0, -6.0), common::axis_center(6, 0, 6.0)], 100, 1.0, 13);
    let r = sort_algo2(&common::spikes(x), &Algo2Config::default()).unwrap();
    let json = serde_json::to_value(&r.diagnostics).unwrap();
    assert_eq!(json["algorithm"], "algo2");
    assert!(json["nodes"][0]["ad_score"].is_number());
    let single = LabelAssignment::single(3);
    assert_eq!(single.occupied_clusters(), 1);
}
