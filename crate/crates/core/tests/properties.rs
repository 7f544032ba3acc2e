use deepmmc::constraints::{partition, PairwiseConstraint};
use deepmmc::evaluation::{adjusted_rand_index, clustering_accuracy, roc_auc};
use deepmmc::mmc::{objective_on_codes, violated_sets, ClusterWeights, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;

/// K, d, cluster weights (K·d), codes (N·d) and raw `(i, j, same)` pairs.
type Instance = (usize, usize, Vec<f64>, Vec<f64>, Vec<(usize, usize, bool)>);

fn instance() -> impl Strategy<Value = Instance> {
    (2usize..5, 1usize..4, 3usize..9).prop_flat_map(|(k, d, n)| {
        (
            Just(k),
            Just(d),
            prop::collection::vec(-2.0f64..2.0, k * d),
            prop::collection::vec(0.0f64..1.0, n * d),
            prop::collection::vec((0..n, 0..n, any::<bool>()), 0..6),
        )
    })
}

proptest! {
    #[test]
    fn objective_is_nonnegative_and_sets_are_violated((k, d, w, h, raw) in instance(), beta in 0.0f64..3.0) {
        let n = h.len() / d;
        let pairs: Vec<_> = raw.into_iter().filter(|(i, j, _)| i != j).map(|(i, j, s)| PairwiseConstraint::new(i, j, s).unwrap()).collect();
        let split = partition(&pairs, n).unwrap();
        let w = ClusterWeights::from_blocks(&Array2::from_shape_vec((k, d), w).unwrap().view()).unwrap();
        let codes = Array2::from_shape_vec((n, d), h).unwrap();
        let cfg = TrainConfig { clusters: k, beta, ..TrainConfig::default() };
        let sets = violated_sets(&w, &codes.view(), &split).unwrap();
        prop_assert!(sets.must_link.iter().all(|p| p.margin(true) < 1.0 && p.diff.0 != p.diff.1));
        prop_assert!(sets.cannot_link.iter().all(|p| p.margin(false) < 1.0));
        prop_assert!(sets.unlabeled.iter().all(|u| u.margin >= 0.0 && u.margin < 1.0 && u.top != u.runner_up));
        prop_assert!(objective_on_codes(&w, &codes.view(), &split, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn metrics_ignore_cluster_names(pred in prop::collection::vec(0usize..4, 1..30), shift in 1usize..4) {
        let truth: Vec<usize> = pred.iter().enumerate().map(|(i, &p)| if i % 3 == 0 { (p + 1) % 4 } else { p }).collect();
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % 4).collect();
        prop_assert_eq!(clustering_accuracy(&pred, &truth).unwrap(), clustering_accuracy(&renamed, &truth).unwrap());
        let (a, b) = (adjusted_rand_index(&pred, &truth).unwrap(), adjusted_rand_index(&renamed, &truth).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - adjusted_rand_index(&truth, &pred).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_flips_under_negation(scores in prop::collection::vec(-5.0f64..5.0, 2..40), seed in any::<u64>()) {
        let mut positive: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        positive[0] = true;
        positive[1] = false;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = roc_auc(&scores, &positive).unwrap() + roc_auc(&neg, &positive).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}
