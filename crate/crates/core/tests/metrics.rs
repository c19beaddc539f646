use linerec::eval::{edit_distance, evaluate_records, PredictionRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain recursion over the three edit choices, no memo table.
fn recursive_distance(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                return recursive_distance(ra, rb);
            }
            1 + recursive_distance(ra, b).min(recursive_distance(a, rb)).min(recursive_distance(ra, rb))
        }
    }
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    let pool = ['a', 'b', 'c', '一', '丁'];
    (0..rng.random_range(0..=6)).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

#[test]
fn matches_recursive_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (a, b) = (random_string(&mut rng), random_string(&mut rng));
        let ac: Vec<char> = a.chars().collect();
        let bc: Vec<char> = b.chars().collect();
        assert_eq!(edit_distance(&a, &b), recursive_distance(&ac, &bc), "{a:?} vs {b:?}");
    }
}

fn recs(pairs: &[(String, f64)]) -> Vec<PredictionRecord> {
    pairs.iter().enumerate().map(|(i, (t, c))| PredictionRecord { id: i.to_string(), text: t.clone(), confidence: *c }).collect()
}

proptest! {
    #[test]
    fn symmetric_and_triangle(a in "[ab一]{0,7}", b in "[ab一]{0,7}", c in "[ab一]{0,7}") {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert_eq!(edit_distance(&a, &a), 0);
    }

    #[test]
    fn exact_never_exceeds_partial(
        rows in proptest::collection::vec(("[abc]{0,4}", "[abc]{0,4}", 0.0f64..=1.0), 1..40),
        threshold in 0usize..3,
    ) {
        let preds = recs(&rows.iter().map(|(p, _, c)| (p.clone(), *c)).collect::<Vec<_>>());
        let gts: Vec<String> = rows.iter().map(|(_, g, _)| g.clone()).collect();
        let r = evaluate_records(&preds, &gts, threshold).unwrap();
        prop_assert!(0.0 <= r.exact_accuracy && r.exact_accuracy <= r.partial_accuracy && r.partial_accuracy <= 1.0);
        prop_assert!((0.0..=1.0).contains(&r.avg_confidence));
    }

    #[test]
    fn permutation_invariant(
        rows in proptest::collection::vec(("[abc]{0,4}", "[abc]{0,4}", 0.0f64..=1.0), 1..30),
        seed in any::<u64>(),
    ) {
        let preds = recs(&rows.iter().map(|(p, _, c)| (p.clone(), *c)).collect::<Vec<_>>());
        let gts: Vec<String> = rows.iter().map(|(_, g, _)| g.clone()).collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p2: Vec<PredictionRecord> = order.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<String> = order.iter().map(|&i| gts[i].clone()).collect();
        let a = evaluate_records(&preds, &gts, 1).unwrap();
        let b = evaluate_records(&p2, &g2, 1).unwrap();
        prop_assert_eq!(a.exact_accuracy, b.exact_accuracy);
        prop_assert_eq!(a.partial_accuracy, b.partial_accuracy);
        prop_assert_eq!(a.total_recognized_chars, b.total_recognized_chars);
        prop_assert!((a.avg_confidence - b.avg_confidence).abs() < 1e-12);
    }
}
