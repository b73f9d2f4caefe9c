//! Forward passes. All paths are deterministic given (params, input, mode).

use crate::error::{Error, Result};
use crate::model::params::{AdaptationParams, ClassifierParams, ExtractorParams, ModelParams};
use crate::numerics::label_smoothed_ce;

/// Whether the adaptation layer normalizes with batch statistics (train)
/// or with the stored running statistics (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExtractorCache {
    /// Input to each layer (first entry is the network input).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pub pre_activations: Vec<Vec<f64>>,
}

/// Run the rectifier stack; returns the embedding and the layer cache.
pub fn extractor_forward(
    phi: &ExtractorParams,
    input: &[f64],
) -> Result<(Vec<f64>, ExtractorCache)> {
    if input.len() != phi.input_dim() {
        return Err(Error::Shape(format!(
            "extractor input dim {} expected {}",
            input.len(),
            phi.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(phi.layers.len());
    let mut pre_activations = Vec::with_capacity(phi.layers.len());
    let mut act = input.to_vec();
    let last = phi.layers.len() - 1;
    for (idx, layer) in phi.layers.iter().enumerate() {
        let mut pre = layer.weights.matvec(&act)?;
        for (p, b) in pre.iter_mut().zip(&layer.bias) {
            *p += b;
        }
        inputs.push(act);
        pre_activations.push(pre.clone());
        act = if idx < last {
            pre.iter().map(|v| v.max(0.0)).collect()
        } else {
            pre
        };
    }
    Ok((act, ExtractorCache { inputs, pre_activations }))
}

/// Batch statistics of the linear outputs `h`: per-dimension mean and
/// guarded standard deviation `max(sqrt(var), bn_epsilon)` with biased
/// variance. The guard keeps sigma positive without perturbing the
/// normalization when the batch actually varies.
pub(crate) fn batch_stats(h: &[Vec<f64>], bn_epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let m = h[0].len();
    let n = h.len() as f64;
    let mut mean = vec![0.0; m];
    for row in h {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for acc in &mut mean {
        *acc /= n;
    }
    let mut sigma = vec![0.0; m];
    for row in h {
        for d in 0..m {
            let c = row[d] - mean[d];
            sigma[d] += c * c;
        }
    }
    for s in &mut sigma {
        *s = (*s / n).sqrt().max(bn_epsilon);
    }
    (mean, sigma)
}

pub(crate) fn adaptation_linear(psi: &AdaptationParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut h = psi.w.matvec(x)?;
    for v in &mut h {
        *v += psi.b;
    }
    Ok(h)
}

fn normalize(h: &[f64], mu: &[f64], sigma: &[f64], psi: &AdaptationParams) -> Vec<f64> {
    h.iter()
        .enumerate()
        .map(|(d, v)| (v - mu[d]) / sigma[d] * psi.gamma[d] + psi.beta[d])
        .collect()
}

/// Adaptation layer over a whole batch. In train mode the batch statistics
/// normalize and the running statistics are advanced by exponential moving
/// average; in eval mode the stored statistics are used.
pub fn adaptation_forward_batch(
    psi: &mut AdaptationParams,
    batch: &[Vec<f64>],
    mode: ForwardMode,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::Empty("adaptation batch"));
    }
    let m = psi.dim();
    if batch.iter().any(|x| x.len() != m) {
        return Err(Error::Shape("adaptation batch dim".into()));
    }
    let h: Vec<Vec<f64>> = batch
        .iter()
        .map(|x| adaptation_linear(psi, x))
        .collect::<Result<_>>()?;
    match mode {
        ForwardMode::Train => {
            if batch.len() < 2 {
                return Err(Error::Statistics(batch.len()));
            }
            let (mu_b, sigma_b) = batch_stats(&h, psi.bn_epsilon);
            let rho = psi.bn_momentum;
            for d in 0..m {
                psi.mu[d] = (1.0 - rho) * psi.mu[d] + rho * mu_b[d];
                psi.sigma[d] = ((1.0 - rho) * psi.sigma[d] + rho * sigma_b[d]).max(psi.bn_epsilon);
            }
            Ok(h.iter().map(|row| normalize(row, &mu_b, &sigma_b, psi)).collect())
        }
        ForwardMode::Eval => Ok(h
            .iter()
            .map(|row| normalize(row, &psi.mu, &psi.sigma, psi))
            .collect()),
    }
}

/// Adaptation layer for one embedding. Train mode draws its statistics
/// from `batch` (>= 2 embeddings) and advances the running statistics;
/// eval mode uses the stored ones and ignores `batch`.
pub fn adaptation_forward(
    psi: &mut AdaptationParams,
    x: &[f64],
    mode: ForwardMode,
    batch: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    if x.len() != psi.dim() {
        return Err(Error::Shape(format!(
            "adaptation input dim {} expected {}",
            x.len(),
            psi.dim()
        )));
    }
    match mode {
        ForwardMode::Eval => {
            let h = adaptation_linear(psi, x)?;
            Ok(normalize(&h, &psi.mu, &psi.sigma, psi))
        }
        ForwardMode::Train => {
            let batch = batch.ok_or(Error::Statistics(0))?;
            if batch.len() < 2 {
                return Err(Error::Statistics(batch.len()));
            }
            let h_batch: Vec<Vec<f64>> = batch
                .iter()
                .map(|e| adaptation_linear(psi, e))
                .collect::<Result<_>>()?;
            let (mu_b, sigma_b) = batch_stats(&h_batch, psi.bn_epsilon);
            let rho = psi.bn_momentum;
            for d in 0..psi.dim() {
                psi.mu[d] = (1.0 - rho) * psi.mu[d] + rho * mu_b[d];
                psi.sigma[d] = ((1.0 - rho) * psi.sigma[d] + rho * sigma_b[d]).max(psi.bn_epsilon);
            }
            let h = adaptation_linear(psi, x)?;
            Ok(normalize(&h, &mu_b, &sigma_b, psi))
        }
    }
}

/// Classification head: `logits = weights * z + bias`.
pub fn classifier_forward(nu: &ClassifierParams, z: &[f64]) -> Result<Vec<f64>> {
    let mut logits = nu.weights.matvec(z)?;
    for (l, b) in logits.iter_mut().zip(&nu.bias) {
        *l += b;
    }
    Ok(logits)
}

/// Embedding function: extractor then adaptation layer in eval mode.
/// This is the representation used for prototypes, nearest-prototype
/// inference and stream selection.
pub fn embed(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    let (x_ring, _) = extractor_forward(&params.phi, input)?;
    let h = adaptation_linear(&params.psi, &x_ring)?;
    Ok(normalize(&h, &params.psi.mu, &params.psi.sigma, &params.psi))
}

/// Mean label-smoothed cross entropy over a batch without any state
/// mutation (running statistics are left untouched even in train mode).
pub fn batch_loss(
    params: &ModelParams,
    batch: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
    mode: ForwardMode,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if batch.len() != labels.len() {
        return Err(Error::Shape("batch/labels length".into()));
    }
    let embeddings: Vec<Vec<f64>> = batch
        .iter()
        .map(|x| extractor_forward(&params.phi, x).map(|(e, _)| e))
        .collect::<Result<_>>()?;
    let h: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| adaptation_linear(&params.psi, e))
        .collect::<Result<_>>()?;
    let (mu, sigma) = match mode {
        ForwardMode::Train => {
            if batch.len() < 2 {
                return Err(Error::Statistics(batch.len()));
            }
            batch_stats(&h, params.psi.bn_epsilon)
        }
        ForwardMode::Eval => (params.psi.mu.clone(), params.psi.sigma.clone()),
    };
    let mut total = 0.0;
    for (row, &label) in h.iter().zip(labels) {
        let z = normalize(row, &mu, &sigma, &params.psi);
        let logits = classifier_forward(&params.nu, &z)?;
        total += label_smoothed_ce(&logits, label, epsilon)?;
    }
    Ok(total / batch.len() as f64)
}
