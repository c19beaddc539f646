use linerec::ctc::{ctc_brute_force, ctc_loss_grad, greedy_decode, min_frames, CtcError};
use linerec::{CharDict, FrameLogits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> (FrameLogits, Vec<u32>) {
    loop {
        let frames = rng.random_range(1..=5);
        let vocab = rng.random_range(1..=3usize);
        let classes = vocab + 1;
        let len = rng.random_range(1..=frames);
        let label: Vec<u32> = (0..len).map(|_| rng.random_range(1..=vocab as u32)).collect();
        if min_frames(&label) > frames {
            continue;
        }
        let values = (0..frames * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        return (FrameLogits::new(frames, classes, values).unwrap(), label);
    }
}

#[test]
fn dynamic_program_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (logits, label) = random_instance(&mut rng);
        let dp = ctc_loss_grad(&logits, &label).unwrap().loss;
        let bf = ctc_brute_force(&logits, &label).unwrap();
        assert!((dp - bf).abs() <= 1e-9, "dp {dp} brute {bf} label {label:?}");
    }
}

#[test]
fn infeasible_labels_are_errors_in_both() {
    let logits = FrameLogits::new(2, 2, vec![0.0; 4]).unwrap();
    for label in [vec![1, 1], vec![1, 1, 1]] {
        assert!(matches!(ctc_loss_grad(&logits, &label), Err(CtcError::InfeasibleLabel { .. })));
        assert!(ctc_brute_force(&logits, &label).is_err());
    }
}

proptest! {
    #[test]
    fn gradient_rows_sum_to_zero_and_loss_is_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (logits, label) = random_instance(&mut rng);
        let r = ctc_loss_grad(&logits, &label).unwrap();
        prop_assert!(r.loss >= -1e-12);
        for row in r.grad.chunks(logits.classes()) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn logit_shift_per_frame_leaves_loss_unchanged(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (logits, label) = random_instance(&mut rng);
        let mut shifted = logits.clone();
        shifted.shift_row(0, shift);
        let a = ctc_loss_grad(&logits, &label).unwrap().loss;
        let b = ctc_loss_grad(&shifted, &label).unwrap().loss;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn decoded_text_has_one_probability_per_char(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (logits, _) = random_instance(&mut rng);
        let dict = CharDict::from_chars("abc".chars().take(logits.classes() - 1)).unwrap();
        let p = greedy_decode(&logits, &dict).unwrap();
        prop_assert_eq!(p.per_char.len(), p.text.chars().count());
        prop_assert!((0.0..=1.0).contains(&p.confidence));
        prop_assert_eq!(p.text.is_empty(), p.confidence == 0.0);
    }
}
