/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central differences `(f(p + h·e) − f(p − h·e)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss_fn(&p);
        p[i] = orig - h;
        let down = loss_fn(&p);
        p[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = super::norm(a).max(super::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
