use claimattn::metrics::{aupr, auroc, profit_report};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise count over all positive/negative pairs, in half-units so the sum
/// stays an integer.
fn brute_force_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut halves = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                halves += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    halves as f64 / (2 * pairs) as f64
}

/// Precision at each positive's rank, with ties ordered by index.
fn brute_force_aupr(scores: &[f64], labels: &[u8]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        // items ranked at or above i
        let above: Vec<usize> = (0..scores.len())
            .filter(|&j| scores[j] > si || (scores[j] == si && j <= i))
            .collect();
        let hits = above.iter().filter(|&&j| labels[j] == 1).count();
        total += hits as f64 / above.len() as f64;
    }
    total / n_pos as f64
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=50);
        // coarse scores so ties are common
        let levels = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn auroc_equals_brute_force_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    for _ in 0..200 {
        let (s, l) = random_instance(&mut rng);
        assert_eq!(auroc(&s, &l).unwrap(), brute_force_auroc(&s, &l));
    }
}

#[test]
fn aupr_matches_rank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (s, l) = random_instance(&mut rng);
        let a = aupr(&s, &l).unwrap();
        let b = brute_force_aupr(&s, &l);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn hand_examples() {
    assert_eq!(aupr(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    assert_eq!(aupr(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
    assert_eq!(aupr(&[0.8, 0.7, 0.6, 0.3], &[1, 0, 1, 0]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);

    let r = profit_report(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0], &[100.0, 50.0, 0.0, 0.0], 10.0, 0.5).unwrap();
    assert_eq!((r.benefit, r.cost, r.potential), (90.0, 10.0, 130.0));
    assert!((r.profit - 80.0 / 130.0).abs() < 1e-12);
    assert_eq!(format!("{:.12}", r.profit), format!("{:.12}", 80.0 / 130.0));
}

#[test]
fn no_flags_and_perfect_classifier() {
    let labels = [1, 0, 1, 0];
    let c = [40.0, 0.0, 70.0, 0.0];
    let none = profit_report(&[0.1, 0.2, 0.5, 0.0], &labels, &c, 10.0, 0.5).unwrap();
    assert_eq!((none.benefit, none.cost, none.profit), (0.0, 0.0, 0.0));
    let perfect = profit_report(&[0.9, 0.1, 0.8, 0.2], &labels, &c, 10.0, 0.5).unwrap();
    assert_eq!(perfect.profit, 1.0);
}

#[test]
fn rescaling_costs_keeps_profit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (s, l) = random_instance(&mut rng);
        let c: Vec<f64> = l
            .iter()
            .map(|&y| if y == 1 { 20.5 + rng.random::<f64>() * 500.0 } else { 0.0 })
            .collect();
        let base = profit_report(&s, &l, &c, 20.0, 0.5).unwrap();
        let scaled_c: Vec<f64> = c.iter().map(|x| x * 7.3).collect();
        let scaled = profit_report(&s, &l, &scaled_c, 20.0 * 7.3, 0.5).unwrap();
        assert!((base.profit - scaled.profit).abs() <= 1e-12 * base.profit.abs().max(1.0));
    }
}

proptest! {
    #[test]
    fn auroc_is_invariant_under_monotone_maps(
        pairs in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..60)
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let base = auroc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.atan()).collect();
        prop_assert_eq!(auroc(&affine, &labels).unwrap(), base);
        prop_assert_eq!(auroc(&squashed, &labels).unwrap(), base);
        prop_assert_eq!(base, brute_force_auroc(&scores, &labels));
    }

    #[test]
    fn profit_is_at_most_one(
        rows in prop::collection::vec((0.0f64..1.0, 0u8..2, 21.0f64..1000.0), 1..40),
        k in 0.0f64..20.0,
        threshold in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<u8> = rows.iter().map(|r| r.1).collect();
        let c: Vec<f64> = rows.iter().map(|r| if r.1 == 1 { r.2 } else { 0.0 }).collect();
        prop_assume!(labels.contains(&1));
        let r = profit_report(&scores, &labels, &c, k, threshold).unwrap();
        prop_assert!(r.profit <= 1.0 + 1e-12);
        prop_assert!(r.benefit <= r.potential + 1e-9);
    }
}

#[test]
fn raising_the_threshold_on_a_monotone_case_never_lowers_profit_past_the_positives() {
    // Negatives score below every positive, so profit only drops once the
    // threshold passes positives.
    let scores = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
    let labels = [0, 0, 0, 1, 1, 1];
    let c = [0.0, 0.0, 0.0, 50.0, 60.0, 70.0];
    let mut last = f64::NEG_INFINITY;
    for t in [0.0, 0.05, 0.15, 0.25, 0.35, 0.5, 0.65] {
        let p = profit_report(&scores, &labels, &c, 10.0, t).unwrap().profit;
        assert!(p >= last);
        last = p;
    }
    assert_eq!(last, 1.0);
}
