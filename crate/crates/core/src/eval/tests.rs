use super::*;
use crate::rng::rng_from_seed;
use rand::Rng as _;

#[test]
fn perfect_separation_gives_auc_one() {
    let roc = roc_auc(&[0.0, 1.0], &[0, 1]).unwrap();
    assert_eq!(roc.auc, 1.0);
}

#[test]
fn all_equal_scores_give_auc_half() {
    let roc = roc_auc(&[3.0, 3.0, 3.0, 3.0], &[0, 1, 0, 1]).unwrap();
    assert_eq!(roc.auc, 0.5);
}

#[test]
fn worked_example_auc() {
    // Pairwise oracle by hand: anomaly scores {0.35, 0.8} vs normal
    // {0.1, 0.4}: wins = 3 of 4 pairs -> AUC 0.75.
    let roc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
    assert_eq!(roc.auc, 0.75);
}

#[test]
fn curve_runs_from_origin_to_corner_monotonically() {
    let mut rng = rng_from_seed(1);
    let scores: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..200).map(|_| u8::from(rng.gen_bool(0.3))).collect();
    let roc = roc_auc(&scores, &labels).unwrap();
    assert_eq!(*roc.points.first().unwrap(), (0.0, 0.0));
    assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
    for pair in roc.points.windows(2) {
        assert!(pair[1].0 >= pair[0].0);
        assert!(pair[1].1 >= pair[0].1);
    }
    // AUC equals the trapezoidal integral of the emitted points.
    let mut trap = 0.0;
    for pair in roc.points.windows(2) {
        trap += (pair[1].0 - pair[0].0) * (pair[1].1 + pair[0].1) / 2.0;
    }
    assert!((roc.auc - trap).abs() < 1e-12);
}

#[test]
fn roc_matches_pairwise_oracle_with_ties() {
    let mut rng = rng_from_seed(2);
    for case in 0..1000 {
        let n = rng.gen_range(2..60);
        // Coarse quantization forces plenty of ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.gen_range(0.0f64..1.0) * 8.0).round() / 8.0)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let fast = roc_auc(&scores, &labels).unwrap().auc;
        let oracle = auc_pairwise_oracle(&scores, &labels).unwrap();
        assert!(
            (fast - oracle).abs() < 1e-12,
            "case {case}: {fast} vs {oracle}"
        );
    }
}

#[test]
fn reversed_scores_flip_auc_without_ties() {
    let mut rng = rng_from_seed(3);
    let scores: Vec<f64> = (0..50).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
    let mut labels: Vec<u8> = (0..50).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    labels[0] = 0;
    labels[49] = 1;
    let auc = roc_auc(&scores, &labels).unwrap().auc;
    let rev: Vec<f64> = scores.iter().map(|s| -s).collect();
    let auc_rev = roc_auc(&rev, &labels).unwrap().auc;
    assert!((auc + auc_rev - 1.0).abs() < 1e-12);
}

#[test]
fn all_anomalies_above_all_normals_is_one() {
    let scores = [5.0, 6.0, 1.0, 2.0];
    let labels = [1, 1, 0, 0];
    assert_eq!(auc_pairwise_oracle(&scores, &labels).unwrap(), 1.0);
    assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 1.0);
}

#[test]
fn single_class_input_is_rejected() {
    assert!(roc_auc(&[1.0, 2.0], &[1, 1]).is_err());
    assert!(auc_pairwise_oracle(&[1.0, 2.0], &[0, 0]).is_err());
    assert!(roc_auc(&[f64::NAN, 2.0], &[0, 1]).is_err());
}

#[test]
fn auc_invariant_under_increasing_transforms() {
    let mut rng = rng_from_seed(4);
    let scores: Vec<f64> = (0..100).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut labels: Vec<u8> = (0..100).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let base = roc_auc(&scores, &labels).unwrap().auc;
    for transform in [
        |v: f64| 3.0 * v + 17.0,
        |v: f64| v.exp(),
        |v: f64| v.powi(3) + 0.5 * v,
    ] {
        let mapped: Vec<f64> = scores.iter().map(|&v| transform(v)).collect();
        let auc = roc_auc(&mapped, &labels).unwrap().auc;
        assert!((auc - base).abs() < 1e-12);
    }
}

#[test]
fn aggregate_max_rules() {
    let scores = vec![vec![1.0], vec![1.0, 5.0, 2.0]];
    let agg = aggregate_sample_scores(&scores, AggregateRule::Max).unwrap();
    assert_eq!(agg, vec![1.0, 5.0]);
    assert!(aggregate_sample_scores(&[vec![]], AggregateRule::Max).is_err());
}

#[test]
fn max_aggregation_equals_any_patch_exceeds_rule() {
    let mut rng = rng_from_seed(5);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..8);
        let patches: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: f64 = rng.gen_range(-2.0..2.0);
        let max = aggregate_sample_scores(&[patches.clone()], AggregateRule::Max).unwrap()[0];
        let any_exceeds = patches.iter().any(|&p| p > t);
        assert_eq!(max > t, any_exceeds);
    }
}

#[test]
fn percentile_convention_on_1_to_100() {
    let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
    assert_eq!(percentile(&values, 50.0), 50.5);
    assert_eq!(percentile(&values, 25.0), 25.75);
    assert_eq!(percentile(&values, 75.0), 75.25);
}

#[test]
fn constant_scores_collapse_the_box() {
    let scores = vec![2.0; 10];
    let labels = vec![0u8; 10];
    let clusters = vec![0usize; 10];
    let stats = cluster_boxstats(&scores, &labels, &clusters, Centering::None).unwrap();
    let b = stats.clusters[&0].normal.unwrap();
    assert_eq!(
        (b.p5, b.q1, b.median, b.q3, b.p95),
        (2.0, 2.0, 2.0, 2.0, 2.0)
    );
}

#[test]
fn percentile_ordering_invariant() {
    let mut rng = rng_from_seed(6);
    let scores: Vec<f64> = (0..200).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let labels: Vec<u8> = (0..200).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    let clusters: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
    let stats = cluster_boxstats(&scores, &labels, &clusters, Centering::None).unwrap();
    for cs in stats.clusters.values() {
        for b in [cs.normal, cs.anomalous].into_iter().flatten() {
            assert!(b.p5 <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.p95);
        }
    }
}

#[test]
fn median_centering_zeroes_the_pooled_median() {
    let scores = vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let clusters = vec![0; 6];
    let stats = cluster_boxstats(&scores, &labels, &clusters, Centering::Median).unwrap();
    let cs = &stats.clusters[&0];
    // Pooled median of {1,2,3,10,11,12} is 6.5; recomputing the pooled
    // median after the shift gives 0.
    assert_eq!(cs.pooled_median, 6.5);
    let normal = cs.normal.unwrap();
    let anomalous = cs.anomalous.unwrap();
    let centered_pool_median = (normal.median + anomalous.median) / 2.0;
    assert!((centered_pool_median - 0.0).abs() < 1e-12);
}

#[test]
fn heatmap_constant_scorer_normalizes_to_zero() {
    let img = Tensor::zeros(vec![8, 8]);
    let grid = PatchGrid::new(4, 2);
    let map = render_heatmap(&img, &grid, |_| Ok(7.5)).unwrap();
    assert!(map.normalized.iter().all(|&v| v == 0.0));
    assert_eq!((map.rows, map.cols), grid.dims(8, 8));
}

#[test]
fn heatmap_argmax_lands_on_bright_block() {
    // Scorer = patch mean; one bright block dominates.
    let mut img = Tensor::zeros(vec![12, 12]);
    for r in 6..9 {
        for c in 3..6 {
            img.data_mut()[r * 12 + c] = 1.0;
        }
    }
    let grid = PatchGrid::new(3, 3);
    let map = render_heatmap(&img, &grid, |p| {
        Ok(p.data().iter().sum::<f64>() / p.len() as f64)
    })
    .unwrap();
    assert_eq!(map.argmax(), (2, 1));
}

#[test]
fn heatmap_grid_dims_follow_sliding_count() {
    let img = Tensor::zeros(vec![32, 32]);
    let grid = PatchGrid::new(8, 4);
    let map = render_heatmap(&img, &grid, |_| Ok(0.0)).unwrap();
    assert_eq!((map.rows, map.cols), (7, 7));
}

#[test]
fn heatmap_normalization_is_idempotent() {
    let mut rng = rng_from_seed(7);
    let raw: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..9.0)).collect();
    let map = Heatmap::from_raw(4, 4, raw).unwrap();
    let again = Heatmap::from_raw(4, 4, map.normalized.clone()).unwrap();
    for (a, b) in map.normalized.iter().zip(&again.normalized) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn heatmap_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let map = Heatmap::from_raw(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let pgm = dir.path().join("map.pgm");
    let csv = dir.path().join("map.csv");
    write_heatmap_pgm(&pgm, &map).unwrap();
    write_heatmap_csv(&csv, &map).unwrap();
    // Brighter = lower score: the smallest raw value maps to white.
    let img = crate::data::read_pgm(&pgm).unwrap();
    assert_eq!(img[0], 1.0);
    assert_eq!(img[3], 0.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# raw_min=0 raw_max=3"));
}

#[test]
fn adding_a_constant_leaves_roc_and_auc_unchanged() {
    let mut rng = rng_from_seed(8);
    let scores: Vec<f64> = (0..150).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut labels: Vec<u8> = (0..150).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let base = roc_auc(&scores, &labels).unwrap();
    let shifted: Vec<f64> = scores.iter().map(|s| s + 123.25).collect();
    let moved = roc_auc(&shifted, &labels).unwrap();
    assert_eq!(base.auc, moved.auc);
    assert_eq!(base.points, moved.points);
}

mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        // The sweep and the O(n²) oracle agree on arbitrary tied inputs.
        #[test]
        fn sweep_equals_oracle(
            raw in proptest::collection::vec((0u8..6, proptest::bool::ANY), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(q, _)| *q as f64 / 4.0).collect();
            let mut labels: Vec<u8> = raw.iter().map(|(_, l)| u8::from(*l)).collect();
            let n = labels.len();
            labels[0] = 0;
            labels[n - 1] = 1;
            let fast = roc_auc(&scores, &labels).unwrap().auc;
            let oracle = auc_pairwise_oracle(&scores, &labels).unwrap();
            prop_assert!((fast - oracle).abs() < 1e-12);
        }
    }
}
