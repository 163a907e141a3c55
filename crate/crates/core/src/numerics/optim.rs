//! SGD with momentum, coupled weight decay and a cosine-annealed learning rate.

use super::Matrix;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
pub struct OptimState {
    /// One buffer per parameter tensor, same shapes.
    pub velocity: Vec<Matrix>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Per-tensor switch for weight decay (e.g. off for biases).
    pub decay_mask: Vec<bool>,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl OptimState {
    /// Zero velocity for the given parameter shapes; decay applies to every tensor.
    pub fn new(
        shapes: &[(usize, usize)],
        base_lr: f64,
        momentum: f64,
        weight_decay: f64,
        total_epochs: usize,
    ) -> Self {
        Self {
            velocity: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            base_lr,
            momentum,
            weight_decay,
            decay_mask: vec![true; shapes.len()],
            epoch: 0,
            total_epochs,
        }
    }

    pub fn lr(&self) -> Result<f64> {
        cosine_lr(self.epoch, self.total_epochs, self.base_lr)
    }
}

/// `base_lr · ½ · (1 + cos(π · epoch / total))`.
pub fn cosine_lr(epoch: usize, total: usize, base_lr: f64) -> Result<f64> {
    if epoch >= total {
        return Err(Error::BadEpoch { epoch, total });
    }
    let progress = epoch as f64 / total as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One momentum-SGD update:
/// `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut [&mut Matrix], grads: &[&Matrix], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(shape_err(format!(
            "{} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if !p.same_shape(g) || !p.same_shape(v) {
            return Err(shape_err(format!(
                "tensor {i}: param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let lr = state.lr()?;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = if state.decay_mask.get(i).copied().unwrap_or(true) {
            state.weight_decay
        } else {
            0.0
        };
        let v = &mut state.velocity[i];
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = state.momentum * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
