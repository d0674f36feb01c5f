use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, SmoothingWeights, Tensor, Var};
use crate::text::PAD;

/// Target/non-target weights of the smoothed distribution.
///
/// Standard: target `1−α`, others `α/(V−1)`. With `literal` the two are
/// swapped to target `α`, others `(1−α)/(V−1)`.
pub fn smoothing_weights(alpha: f64, vocab: usize, literal: bool) -> Result<SmoothingWeights> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("label smoothing {alpha} outside [0, 1)")));
    }
    if vocab < 2 {
        return Err(Error::invalid("label smoothing needs at least two classes"));
    }
    let others = (vocab - 1) as f64;
    Ok(if literal {
        SmoothingWeights {
            on: alpha,
            off: (1.0 - alpha) / others,
        }
    } else {
        SmoothingWeights {
            on: 1.0 - alpha,
            off: alpha / others,
        }
    })
}

/// Label-smoothed cross-entropy of `logits[n×V]`, averaged over the
/// positions with a target (`None` marks padding).
pub fn lsce_loss(
    g: &mut Graph<'_>,
    logits: Var,
    targets: &[Option<usize>],
    alpha: f64,
    literal: bool,
) -> Result<Var> {
    let (_, v) = g.value(logits).dims2()?;
    let weights = smoothing_weights(alpha, v, literal)?;
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Err(Error::invalid("every target position is padding"));
    }
    g.smoothed_cross_entropy(logits, targets, weights, count as f64)
}

/// Token ids to loss targets, with [`PAD`] marking excluded positions.
pub fn pad_targets(ids: &[usize]) -> Vec<Option<usize>> {
    ids.iter().map(|&i| (i != PAD).then_some(i)).collect()
}

/// `base · ½(1 + cos(π·step/total))`, zero from `total` onwards.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    (base_lr * 0.5 * (1.0 + (PI * frac).cos())).max(0.0)
}

/// Linear warm-up over the first `warmup` steps, then [`cosine_lr`] over the
/// remaining `total_steps − warmup`.
pub fn warmup_cosine_lr(step: u64, total_steps: u64, warmup: u64, base_lr: f64) -> f64 {
    if step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    cosine_lr(step - warmup, total_steps.saturating_sub(warmup), base_lr)
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((x, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales accumulated gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
