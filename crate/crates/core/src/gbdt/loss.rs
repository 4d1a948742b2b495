//! Logistic loss on the margin (log-odds) scale.

pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the logistic loss with respect to the margin.
pub fn logistic_grad_hess(margin: f64, label: bool) -> (f64, f64) {
    let p = sigmoid(margin);
    let y = if label { 1.0 } else { 0.0 };
    (p - y, p * (1.0 - p))
}

/// Negative log-likelihood of one example, computed stably.
pub fn log_loss(margin: f64, label: bool) -> f64 {
    // -log(sigmoid(m)) = log(1 + exp(-m)) = softplus(-m)
    let z = if label { -margin } else { margin };
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn mean_log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| log_loss(m, y))
        .sum();
    total / margins.len() as f64
}
