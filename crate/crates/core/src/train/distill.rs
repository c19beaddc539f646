use super::TrainError;
use crate::ctc::FrameLogits;

/// Distillation loss value and gradients with respect to both logit sets.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillOutput {
    pub value: f64,
    /// `frames x classes`.
    pub student_grad: Vec<f64>,
    /// Always zero: the teacher's soft targets are treated as constants.
    pub teacher_grad: Vec<f64>,
}

fn softened(row: &[f64], temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = row.iter().map(|v| (v - max) / temperature).collect();
    let lse = scaled.iter().map(|v| v.exp()).sum::<f64>().ln();
    let logp: Vec<f64> = scaled.iter().map(|v| v - lse).collect();
    let p = logp.iter().map(|v| v.exp()).collect();
    (logp, p)
}

/// Frame-averaged `tau^2 * KL(p_teacher || q_student)` with both
/// distributions softened by `temperature`.
pub fn distill_loss(student: &FrameLogits, teacher: &FrameLogits, temperature: f64) -> Result<DistillOutput, TrainError> {
    if student.frames() != teacher.frames() || student.classes() != teacher.classes() {
        return Err(TrainError::ShapeMismatch(format!(
            "student {}x{} vs teacher {}x{}",
            student.frames(),
            student.classes(),
            teacher.frames(),
            teacher.classes()
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(TrainError::ShapeMismatch(format!("temperature {temperature} must be positive")));
    }
    let (frames, classes) = (student.frames(), student.classes());
    let mut value = 0.0;
    let mut student_grad = vec![0.0; frames * classes];
    let scale = temperature / frames as f64;
    for t in 0..frames {
        let (log_q, q) = softened(student.row(t), temperature);
        let (log_p, p) = softened(teacher.row(t), temperature);
        let kl: f64 = p
            .iter()
            .zip(log_p.iter().zip(&log_q))
            .filter(|(pk, _)| **pk > 0.0)
            .map(|(pk, (lp, lq))| pk * (lp - lq))
            .sum();
        value += kl;
        for k in 0..classes {
            student_grad[t * classes + k] = scale * (q[k] - p[k]);
        }
    }
    value *= temperature * temperature / frames as f64;
    Ok(DistillOutput { value, student_grad, teacher_grad: vec![0.0; frames * classes] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(frames: usize, classes: usize, values: &[f64]) -> FrameLogits {
        FrameLogits::new(frames, classes, values.to_vec()).unwrap()
    }

    #[test]
    fn identical_logits_give_zero() {
        let a = logits(2, 3, &[0.1, 0.5, -1.0, 2.0, 0.0, 0.3]);
        let out = distill_loss(&a, &a, 2.0).unwrap();
        assert!(out.value.abs() < 1e-12);
        assert!(out.student_grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn two_class_closed_form() {
        // Teacher (ln 3, 0) softened by 1 gives p = (3/4, 1/4); student uniform.
        let s = logits(1, 2, &[0.0, 0.0]);
        let t = logits(1, 2, &[3f64.ln(), 0.0]);
        let out = distill_loss(&s, &t, 1.0).unwrap();
        let expect = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((out.value - expect).abs() < 1e-12);
        assert!((out.student_grad[0] - (0.5 - 0.75)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = logits(1, 2, &[0.0, 0.0]);
        let b = logits(1, 3, &[0.0, 0.0, 0.0]);
        assert!(distill_loss(&a, &b, 1.0).is_err());
    }
}
