use super::param::Param;
use crate::error::{Error, Result};

/// Global L2 norm over all gradients.
pub fn grad_norm(params: &[&mut Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// One plain SGD update with global-norm clipping.
///
/// The gradients are rescaled so their joint norm is at most `clip_norm`
/// before `value -= lr * grad` is applied. Returns the pre-clipping norm.
pub fn sgd_step(params: &mut [&mut Param], lr: f64, clip_norm: f64) -> Result<f64> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::Config(format!("clip norm must be positive, got {clip_norm}")));
    }
    for p in params.iter() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { param: p.name().to_string() });
        }
    }
    let norm = grad_norm(params);
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    for p in params.iter_mut() {
        let Param { value, grad, .. } = &mut **p;
        for (v, g) in value.iter_mut().zip(grad.iter()) {
            *v -= lr * scale * g;
        }
    }
    if let Some(p) = params.iter().find(|p| !p.is_finite()) {
        return Err(Error::Training(format!("parameter `{}` became non-finite", p.name())));
    }
    Ok(norm)
}

/// Constant learning rate, halved whenever the monitored metric fails to improve.
#[derive(Clone, Debug)]
pub struct HalvingSchedule {
    lr: f64,
    best: f64,
    stale: usize,
}

impl HalvingSchedule {
    pub fn new(lr: f64) -> Self {
        Self { lr, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Number of consecutive non-improving observations.
    pub fn stale(&self) -> usize {
        self.stale
    }

    /// Records a metric (lower is better); returns `true` on improvement.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best {
            self.best = metric;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            self.lr *= 0.5;
            false
        }
    }
}
