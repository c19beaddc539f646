//! Connectionist Temporal Classification.
//!
//! Loss and gradient via log-space forward-backward recursion over the
//! blank-extended label, an exhaustive path-enumeration oracle for testing,
//! and greedy decoding with a per-line confidence score. Class 0 is the
//! blank throughout.

use std::time::Duration;

use thiserror::Error;

use crate::dataset::{CharDict, BLANK_INDEX};

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("logit matrix must have at least one frame and two classes, got {frames}x{classes}")]
    BadShape { frames: usize, classes: usize },
    #[error("logit buffer holds {got} values, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("logits contain a non-finite value")]
    NonFinite,
    #[error("label is empty")]
    EmptyLabel,
    #[error("label index {index} outside 1..={max}")]
    BadLabelIndex { index: u32, max: u32 },
    #[error("label needs at least {needed} frames, only {frames} available")]
    InfeasibleLabel { needed: usize, frames: usize },
    #[error("enumeration over {0} paths is too large")]
    TooLarge(f64),
    #[error("dictionary has {dict} characters but logits have {classes} classes")]
    DictMismatch { dict: usize, classes: usize },
}

/// Row-major `frames x classes` logit matrix; class 0 is the blank.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogits {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl FrameLogits {
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if frames == 0 || classes < 2 {
            return Err(CtcError::BadShape { frames, classes });
        }
        if values.len() != frames * classes {
            return Err(CtcError::LengthMismatch { expected: frames * classes, got: values.len() });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CtcError::NonFinite);
        }
        Ok(Self { frames, classes, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Dictionary size plus one for the blank.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    /// Adds `shift` to every entry of frame `t`.
    pub fn shift_row(&mut self, t: usize, shift: f64) {
        let c = self.classes;
        self.values[t * c..(t + 1) * c].iter_mut().for_each(|v| *v += shift);
    }

    pub fn log_softmax(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for t in 0..self.frames {
            let row = self.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        out
    }
}

/// `ln(exp(a) + exp(b))` without overflow; `-inf` is the identity.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames needed to emit `label`: one per character plus a separating
/// blank between each adjacent repeated pair.
pub fn min_frames(label: &[u32]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_label(logits: &FrameLogits, label: &[u32]) -> Result<(), CtcError> {
    if label.is_empty() {
        return Err(CtcError::EmptyLabel);
    }
    let max = logits.classes as u32 - 1;
    if let Some(&index) = label.iter().find(|&&l| l == BLANK_INDEX || l > max) {
        return Err(CtcError::BadLabelIndex { index, max });
    }
    let needed = min_frames(label);
    if needed > logits.frames {
        return Err(CtcError::InfeasibleLabel { needed, frames: logits.frames });
    }
    Ok(())
}

/// Negative log-likelihood and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct CtcResult {
    pub loss: f64,
    /// `frames x classes`, same layout as the logits.
    pub grad: Vec<f64>,
}

/// CTC loss `-ln p(label | softmax(logits))` with the exact gradient.
pub fn ctc_loss_grad(logits: &FrameLogits, label: &[u32]) -> Result<CtcResult, CtcError> {
    check_label(logits, label)?;
    let (t_len, c) = (logits.frames, logits.classes);
    let lp = logits.log_softmax();
    let lp_at = |t: usize, k: u32| lp[t * c + k as usize];

    // Blank-extended label: blank, l1, blank, l2, ..., blank.
    let ext: Vec<u32> = std::iter::once(BLANK_INDEX)
        .chain(label.iter().flat_map(|&l| [l, BLANK_INDEX]))
        .collect();
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK_INDEX && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    // alpha[t][s]: log mass of prefixes ending at position s at frame t,
    // emissions up to and including t.
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp_at(0, ext[0]);
    alpha[1] = lp_at(0, ext[1]);
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + lp_at(t, ext[s]) };
        }
    }
    let last = (t_len - 1) * s_len;
    let log_p = log_add(alpha[last + s_len - 1], alpha[last + s_len - 2]);
    if log_p == neg {
        return Err(CtcError::InfeasibleLabel { needed: min_frames(label), frames: t_len });
    }

    // beta[t][s]: log mass of suffixes after frame t given position s at t,
    // emissions strictly after t.
    let mut beta = vec![neg; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    beta[last + s_len - 2] = 0.0;
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut acc = next[s] + lp_at(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1] + lp_at(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2] + lp_at(t + 1, ext[s + 2]));
            }
            cur[s] = acc;
        }
    }

    let mut grad = vec![0.0; t_len * c];
    let mut occupancy = vec![neg; c];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = neg);
        for s in 0..s_len {
            let k = ext[s] as usize;
            occupancy[k] = log_add(occupancy[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..c {
            let prob = lp[t * c + k].exp();
            let gamma = if occupancy[k] == neg { 0.0 } else { (occupancy[k] - log_p).exp() };
            grad[t * c + k] = prob - gamma;
        }
    }
    Ok(CtcResult { loss: -log_p, grad })
}

/// Test oracle: sums the probability of every frame path whose collapse
/// equals `label`. Limited to at most one million paths.
pub fn ctc_brute_force(logits: &FrameLogits, label: &[u32]) -> Result<f64, CtcError> {
    let (t_len, c) = (logits.frames, logits.classes);
    let paths = (c as f64).powi(t_len as i32);
    if paths > 1e6 {
        return Err(CtcError::TooLarge(paths));
    }
    if label.is_empty() {
        return Err(CtcError::EmptyLabel);
    }
    let probs: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let row = logits.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    let mut collapsed = Vec::with_capacity(t_len);
    loop {
        collapsed.clear();
        let mut prev = usize::MAX;
        for &k in &path {
            if k != prev && k != 0 {
                collapsed.push(k as u32);
            }
            prev = k;
        }
        if collapsed == label {
            total += path.iter().enumerate().map(|(t, &k)| probs[t][k]).product::<f64>();
        }
        // Odometer increment over all c^T paths.
        let mut i = 0;
        loop {
            if i == t_len {
                return if total > 0.0 {
                    Ok(-total.ln())
                } else {
                    Err(CtcError::InfeasibleLabel { needed: min_frames(label), frames: t_len })
                };
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// A decoded character and the probability of the frame that emitted it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharProb {
    pub ch: char,
    pub p: f64,
}

/// Decoded text line.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub text: String,
    /// Mean max-softmax probability over frames whose argmax is not blank;
    /// zero when nothing was emitted.
    pub confidence: f64,
    pub per_char: Vec<CharProb>,
    pub frames: usize,
    /// Set when preprocessing had to squeeze the image horizontally.
    pub aspect_broken: bool,
    pub elapsed: Duration,
}

impl Prediction {
    /// Equality ignoring wall-clock timing.
    pub fn same_result(&self, other: &Prediction) -> bool {
        self.text == other.text
            && self.confidence == other.confidence
            && self.per_char == other.per_char
            && self.frames == other.frames
            && self.aspect_broken == other.aspect_broken
    }
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_decode(logits: &FrameLogits, dict: &CharDict) -> Result<Prediction, CtcError> {
    if dict.num_classes() != logits.classes {
        return Err(CtcError::DictMismatch { dict: dict.len(), classes: logits.classes });
    }
    let mut text = String::new();
    let mut per_char = Vec::new();
    let mut conf_sum = 0.0;
    let mut conf_frames = 0usize;
    let mut prev = BLANK_INDEX as usize;
    for t in 0..logits.frames {
        let row = logits.row(t);
        let (best, &max) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |acc, (k, v)| if *v > *acc.1 { (k, v) } else { acc });
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let p = 1.0 / z;
        if best != BLANK_INDEX as usize {
            conf_sum += p;
            conf_frames += 1;
            if best != prev {
                let ch = dict.char_at(best as u32).expect("class within dictionary");
                text.push(ch);
                per_char.push(CharProb { ch, p });
            }
        }
        prev = best;
    }
    let confidence = if conf_frames == 0 { 0.0 } else { conf_sum / conf_frames as f64 };
    Ok(Prediction {
        text,
        confidence,
        per_char,
        frames: logits.frames,
        aspect_broken: false,
        elapsed: Duration::ZERO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, classes: usize) -> FrameLogits {
        FrameLogits::new(frames, classes, vec![0.0; frames * classes]).unwrap()
    }

    /// One-hot-ish logits: frame t strongly prefers class `argmax[t]`.
    fn peaked(argmax: &[usize], classes: usize, height: f64) -> FrameLogits {
        let mut v = vec![0.0; argmax.len() * classes];
        for (t, &k) in argmax.iter().enumerate() {
            v[t * classes + k] = height;
        }
        FrameLogits::new(argmax.len(), classes, v).unwrap()
    }

    #[test]
    fn single_frame_uniform() {
        let r = ctc_loss_grad(&uniform(1, 2), &[1]).unwrap();
        assert!((r.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        // Paths a-a, a-blank, blank-a out of four: p = 3/4.
        let r = ctc_loss_grad(&uniform(2, 2), &[1]).unwrap();
        assert!((r.loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((r.loss - 0.287682).abs() < 1e-6);
    }

    #[test]
    fn three_frames_two_labels() {
        let r = ctc_loss_grad(&uniform(3, 3), &[1, 2]).unwrap();
        assert!((r.loss - (27.0f64 / 5.0).ln()).abs() < 1e-12);
        assert!((r.loss - 1.686399).abs() < 1e-6);
    }

    #[test]
    fn brute_force_agrees_on_fixed_cases() {
        for (t, c, label) in [(1, 2, vec![1]), (2, 2, vec![1]), (3, 3, vec![1, 2]), (4, 3, vec![1, 1])] {
            let l = uniform(t, c);
            let a = ctc_loss_grad(&l, &label).unwrap().loss;
            let b = ctc_brute_force(&l, &label).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_path_loss() {
        let l = FrameLogits::new(1, 3, vec![0.3, 1.7, -0.4]).unwrap();
        let lp = l.log_softmax();
        assert!((ctc_loss_grad(&l, &[1]).unwrap().loss + lp[1]).abs() < 1e-12);
        assert!((ctc_brute_force(&l, &[1]).unwrap() + lp[1]).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_a_typed_error() {
        // "aa" needs a blank between the two a's.
        let l = uniform(2, 2);
        assert_eq!(ctc_loss_grad(&l, &[1, 1]), Err(CtcError::InfeasibleLabel { needed: 3, frames: 2 }));
        assert!(matches!(ctc_brute_force(&l, &[1, 1]), Err(CtcError::InfeasibleLabel { .. })));
        assert_eq!(ctc_loss_grad(&l, &[]), Err(CtcError::EmptyLabel));
        assert!(matches!(ctc_loss_grad(&l, &[2]), Err(CtcError::BadLabelIndex { index: 2, .. })));
        assert!(matches!(ctc_brute_force(&uniform(20, 3), &[1]), Err(CtcError::TooLarge(_))));
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let l = uniform(70, 21);
        let label: Vec<u32> = (1..=10).collect();
        let r = ctc_loss_grad(&l, &label).unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
    }

    #[test]
    fn greedy_collapse_rules() {
        let dict = CharDict::from_chars(['a', 'b']).unwrap();
        let p = greedy_decode(&peaked(&[1, 1, 0, 2], 3, 5.0), &dict).unwrap();
        assert_eq!(p.text, "ab");
        assert_eq!(p.per_char.len(), 2);
        let p = greedy_decode(&peaked(&[1, 0, 1], 3, 5.0), &dict).unwrap();
        assert_eq!(p.text, "aa");
        let p = greedy_decode(&peaked(&[0, 0, 0], 3, 5.0), &dict).unwrap();
        assert_eq!(p.text, "");
        assert_eq!(p.confidence, 0.0);
    }

    #[test]
    fn confidence_is_mean_of_emitting_frames() {
        let dict = CharDict::from_chars(['a']).unwrap();
        let l = FrameLogits::new(3, 2, vec![0.0, 1.0, 0.0, 3.0, 5.0, 0.0]).unwrap();
        let p = greedy_decode(&l, &dict).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert_eq!(p.text, "a");
        assert!((p.confidence - (s(1.0) + s(3.0)) / 2.0).abs() < 1e-12);
        assert!((p.per_char[0].p - s(1.0)).abs() < 1e-12);
        let sure = peaked(&[1, 1], 2, 1e3);
        assert_eq!(greedy_decode(&sure, &dict).unwrap().confidence, 1.0);
    }

    #[test]
    fn dict_size_must_match() {
        let dict = CharDict::from_chars(['a']).unwrap();
        assert!(greedy_decode(&uniform(2, 3), &dict).is_err());
    }
}
