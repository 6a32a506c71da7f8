use crate::error::{Error, Result};
use crate::numerics::RealArray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm the gradients are clipped to; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<RealArray>,
    pub v: Vec<RealArray>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<RealArray> = shapes.into_iter().map(RealArray::zeros).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// A parameter tensor as seen by the optimizer.
pub struct Slot<'p> {
    pub name: &'p str,
    pub value: &'p mut RealArray,
    pub trainable: bool,
}

/// One bias-corrected Adam update after global-norm clipping.
///
/// Frozen slots keep their moments untouched and are left out of the norm.
/// Returns the gradient norm before clipping. Nothing is modified when a
/// gradient is non-finite.
pub fn adam_step(slots: &mut [Slot<'_>], grads: &[RealArray], state: &mut AdamState, cfg: &AdamConfig) -> Result<f64> {
    assert_eq!(slots.len(), grads.len(), "one gradient per slot");
    assert_eq!(slots.len(), state.m.len(), "one moment pair per slot");
    for (slot, g) in slots.iter().zip(grads) {
        if g.shape() != slot.value.shape() {
            return Err(Error::shape("adam_step", slot.value.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(slot.name.to_string()));
        }
    }
    let norm = slots
        .iter()
        .zip(grads)
        .filter(|(s, _)| s.trainable)
        .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let scale = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (slot, g)) in slots.iter_mut().zip(grads).enumerate() {
        if !slot.trainable {
            continue;
        }
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((theta, &gi), mi), vi) in slot.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            let gi = gi * scale;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}
