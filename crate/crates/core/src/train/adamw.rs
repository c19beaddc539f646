use super::{TrainConfig, TrainError};
use crate::model::Scalar;

/// One decoupled-weight-decay Adam update over a parameter slice.
///
/// `step` is 1-based. Moments are kept in `f64` regardless of the parameter
/// precision. Nothing is modified when any gradient is non-finite.
pub fn adamw_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    m: &mut [f64],
    v: &mut [f64],
    config: &TrainConfig,
    step: u64,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || m.len() != grads.len() || v.len() != grads.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if step == 0 {
        return Err(TrainError::ShapeMismatch("optimizer steps are numbered from 1".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step });
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let exp = i32::try_from(step).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(exp);
    let c2 = 1.0 - b2.powi(exp);
    let (lr, eps, wd) = (config.learning_rate, config.eps, config.weight_decay);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let p = params[i].as_f64();
        params[i] = F::from_f64(p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p));
    }
    Ok(())
}

/// Optimizer state for a whole parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the step counter and updates only `params[range]`; other
    /// entries and their moments are left untouched.
    pub fn step_ranges<F: Scalar>(
        &mut self,
        params: &mut [F],
        grads: &[F],
        ranges: &[std::ops::Range<usize>],
        config: &TrainConfig,
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::ShapeMismatch("optimizer state sized for a different model".into()));
        }
        let next = self.step + 1;
        for r in ranges {
            if grads[r.clone()].iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient { step: next });
            }
        }
        for r in ranges {
            adamw_step(
                &mut params[r.clone()],
                &grads[r.clone()],
                &mut self.m[r.clone()],
                &mut self.v[r.clone()],
                config,
                next,
            )?;
        }
        self.step = next;
        Ok(())
    }
}
