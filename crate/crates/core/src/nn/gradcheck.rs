use rand::seq::index::sample;

use super::param::Parameterized;
use crate::seed;

/// Compares reverse-mode gradients against fourth-order central differences.
///
/// `loss` must zero the gradients, run forward and backward, and return the
/// loss value. If `max_coords` is set, that many coordinates are sampled per
/// parameter (seeded); otherwise every coordinate is checked. Returns the
/// worst relative error `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, epsilon: f64, max_coords: Option<usize>) -> f64
where
    M: Parameterized,
    F: FnMut(&mut M) -> f64,
{
    loss(model);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let mut rng = seed::rng(0x6772_6164);
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < grads.len() => sample(&mut rng, grads.len(), m).into_vec(),
            _ => (0..grads.len()).collect(),
        };
        for k in coords {
            let orig = model.params()[pi].value[k];
            let mut at = |offset: f64| {
                model.params_mut()[pi].value[k] = orig + offset;
                loss(model)
            };
            let (p2, p1, m1, m2) = (at(2.0 * epsilon), at(epsilon), at(-epsilon), at(-2.0 * epsilon));
            model.params_mut()[pi].value[k] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
            let a = grads[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
    }
    model.zero_grad();
    worst
}
