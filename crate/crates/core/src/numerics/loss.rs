//! Softmax and label-smoothed cross entropy, computed in log-space.

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let log_p = log_softmax(logits)?;
    Ok(log_p.iter().map(|l| l.exp()).collect())
}

/// Log-softmax with max-subtraction.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits
        .iter()
        .map(|z| (z - max).exp())
        .sum::<f64>()
        .ln();
    Ok(logits.iter().map(|z| z - max - log_sum).collect())
}

/// Cross entropy against the smoothed target `(1 - eps) * e_y + eps / L`.
pub fn label_smoothed_ce(logits: &[f64], y: usize, epsilon: f64) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::Index {
            what: "label",
            index: y,
            bound: logits.len(),
        });
    }
    let l = logits.len() as f64;
    let log_p = log_softmax(logits)?;
    let uniform = epsilon / l;
    let mut loss = 0.0;
    for (i, lp) in log_p.iter().enumerate() {
        let target = if i == y { 1.0 - epsilon + uniform } else { uniform };
        loss -= target * lp;
    }
    Ok(loss)
}

/// Gradient of [`label_smoothed_ce`] with respect to the logits: `p - y~`.
pub fn smoothed_ce_grad(logits: &[f64], y: usize, epsilon: f64) -> Result<Vec<f64>> {
    if y >= logits.len() {
        return Err(Error::Index {
            what: "label",
            index: y,
            bound: logits.len(),
        });
    }
    let l = logits.len() as f64;
    let p = softmax(logits)?;
    let uniform = epsilon / l;
    Ok(p
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let target = if i == y { 1.0 - epsilon + uniform } else { uniform };
            pi - target
        })
        .collect())
}
