//! Analytic gradients of the mean label-smoothed cross entropy, including
//! the pathways through the train-mode batch statistics, plus the
//! optimizer plumbing that applies them to unfrozen groups.

use crate::error::{Error, Result};
use crate::model::forward::{adaptation_linear, batch_stats, classifier_forward, extractor_forward};
use crate::model::params::{ModelParams, OptimConfig};
use crate::numerics::{
    label_smoothed_ce, sgd_momentum_step, smoothed_ce_grad, Matrix, OptimState,
};

/// Gradient of one extractor layer.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient of the adaptation layer (trainable fields only; the running
/// statistics are not optimized by gradient descent).
#[derive(Debug, Clone)]
pub struct PsiGrad {
    pub w: Matrix,
    pub b: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradient of the classifier head.
#[derive(Debug, Clone)]
pub struct NuGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for the unfrozen parameter groups. Frozen groups yield
/// `None`; the adaptation layer is always trainable.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub phi: Option<Vec<LayerGrad>>,
    pub psi: Option<PsiGrad>,
    pub nu: Option<NuGrad>,
}

pub(crate) struct BackwardFull {
    pub grads: Gradients,
    pub loss: f64,
    pub batch_mu: Vec<f64>,
    pub batch_sigma: Vec<f64>,
}

/// Train-mode forward + backward. Pure: running statistics are not
/// advanced here (see [`train_step`]). The adaptation layer has no
/// freeze flag, so at least one group always receives gradients.
pub fn model_backward(
    params: &ModelParams,
    batch: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
) -> Result<(Gradients, f64)> {
    let full = backward_full(params, batch, labels, epsilon)?;
    Ok((full.grads, full.loss))
}

pub(crate) fn backward_full(
    params: &ModelParams,
    batch: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
) -> Result<BackwardFull> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    if batch.len() != labels.len() {
        return Err(Error::Shape("batch/labels length".into()));
    }
    if batch.len() < 2 {
        return Err(Error::Statistics(batch.len()));
    }
    let n = batch.len();
    let m = params.psi.dim();
    let class_count = params.nu.class_count();
    if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::Index {
            what: "label",
            index: bad,
            bound: class_count,
        });
    }

    // ---- forward with caches ----
    let mut embeddings = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for x in batch {
        let (e, cache) = extractor_forward(&params.phi, x)?;
        embeddings.push(e);
        caches.push(cache);
    }
    let h: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| adaptation_linear(&params.psi, e))
        .collect::<Result<_>>()?;
    let (mu, sigma) = batch_stats(&h, params.psi.bn_epsilon);
    // Dimensions where the epsilon guard clipped sigma are constants in
    // the backward pass.
    let guarded: Vec<bool> = {
        let nf = n as f64;
        (0..m)
            .map(|d| {
                let var = h.iter().map(|r| (r[d] - mu[d]) * (r[d] - mu[d])).sum::<f64>() / nf;
                var.sqrt() < params.psi.bn_epsilon
            })
            .collect()
    };
    let x_hat: Vec<Vec<f64>> = h
        .iter()
        .map(|row| {
            (0..m)
                .map(|d| (row[d] - mu[d]) / sigma[d])
                .collect()
        })
        .collect();
    let z: Vec<Vec<f64>> = x_hat
        .iter()
        .map(|row| {
            (0..m)
                .map(|d| row[d] * params.psi.gamma[d] + params.psi.beta[d])
                .collect()
        })
        .collect();
    let logits: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| classifier_forward(&params.nu, zi))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        loss += label_smoothed_ce(row, y, epsilon)?;
    }
    loss /= n as f64;

    // ---- backward ----
    let mut d_nu_w = Matrix::zeros(class_count, m);
    let mut d_nu_b = vec![0.0; class_count];
    let mut dz = vec![vec![0.0; m]; n];
    for i in 0..n {
        let mut dlogits = smoothed_ce_grad(&logits[i], labels[i], epsilon)?;
        for g in &mut dlogits {
            *g /= n as f64;
        }
        for (r, &dl) in dlogits.iter().enumerate() {
            d_nu_b[r] += dl;
            for c in 0..m {
                d_nu_w.set(r, c, d_nu_w.get(r, c) + dl * z[i][c]);
            }
        }
        dz[i] = params.nu.weights.matvec_t(&dlogits)?;
    }

    let mut d_gamma = vec![0.0; m];
    let mut d_beta = vec![0.0; m];
    let mut dx_hat = vec![vec![0.0; m]; n];
    for i in 0..n {
        for d in 0..m {
            d_gamma[d] += dz[i][d] * x_hat[i][d];
            d_beta[d] += dz[i][d];
            dx_hat[i][d] = dz[i][d] * params.psi.gamma[d];
        }
    }

    // Batch-norm backward through mu and sigma.
    let nf = n as f64;
    let mut dh = vec![vec![0.0; m]; n];
    for d in 0..m {
        let s = sigma[d];
        if guarded[d] {
            // sigma is the epsilon constant here; only the mean path remains.
            let dmu: f64 = -dx_hat.iter().map(|r| r[d]).sum::<f64>() / s;
            for i in 0..n {
                dh[i][d] = dx_hat[i][d] / s + dmu / nf;
            }
        } else {
            let dvar: f64 = dx_hat
                .iter()
                .zip(&h)
                .map(|(dxh, hr)| dxh[d] * (hr[d] - mu[d]))
                .sum::<f64>()
                * (-0.5)
                / (s * s * s);
            let dmu: f64 = -dx_hat.iter().map(|r| r[d]).sum::<f64>() / s;
            for i in 0..n {
                dh[i][d] =
                    dx_hat[i][d] / s + dvar * 2.0 * (h[i][d] - mu[d]) / nf + dmu / nf;
            }
        }
    }

    let mut d_psi_w = Matrix::zeros(m, m);
    let mut d_psi_b = 0.0;
    for i in 0..n {
        for r in 0..m {
            let g = dh[i][r];
            d_psi_b += g;
            for c in 0..m {
                d_psi_w.set(r, c, d_psi_w.get(r, c) + g * embeddings[i][c]);
            }
        }
    }

    let phi_grads = if params.frozen_phi {
        None
    } else {
        let layer_count = params.phi.layers.len();
        let mut acc: Vec<LayerGrad> = params
            .phi
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        for i in 0..n {
            let mut delta = params.psi.w.matvec_t(&dh[i])?;
            let cache = &caches[i];
            for layer_idx in (0..layer_count).rev() {
                if layer_idx < layer_count - 1 {
                    // Undo the rectifier applied after this layer.
                    for (g, pre) in delta.iter_mut().zip(&cache.pre_activations[layer_idx]) {
                        if *pre <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                let input = &cache.inputs[layer_idx];
                let grad = &mut acc[layer_idx];
                for (r, &g) in delta.iter().enumerate() {
                    grad.bias[r] += g;
                    for (c, &a) in input.iter().enumerate() {
                        grad.weights.set(r, c, grad.weights.get(r, c) + g * a);
                    }
                }
                if layer_idx > 0 {
                    delta = params.phi.layers[layer_idx].weights.matvec_t(&delta)?;
                }
            }
        }
        Some(acc)
    };

    let grads = Gradients {
        phi: phi_grads,
        psi: Some(PsiGrad {
            w: d_psi_w,
            b: d_psi_b,
            gamma: d_gamma,
            beta: d_beta,
        }),
        nu: if params.frozen_nu {
            None
        } else {
            Some(NuGrad {
                weights: d_nu_w,
                bias: d_nu_b,
            })
        },
    };
    Ok(BackwardFull {
        grads,
        loss,
        batch_mu: mu,
        batch_sigma: sigma,
    })
}

/// Momentum buffers for every tensor in the model.
#[derive(Debug, Clone)]
pub struct ModelOptim {
    layers: Vec<(OptimState, OptimState)>,
    psi_w: OptimState,
    psi_b: OptimState,
    psi_gamma: OptimState,
    psi_beta: OptimState,
    nu_w: OptimState,
    nu_b: OptimState,
}

impl ModelOptim {
    pub fn new(params: &ModelParams, cfg: &OptimConfig) -> Result<Self> {
        let mk = |len| OptimState::new(len, cfg.lr, cfg.momentum, cfg.weight_decay);
        let layers = params
            .phi
            .layers
            .iter()
            .map(|l| Ok((mk(l.weights.data().len())?, mk(l.bias.len())?)))
            .collect::<Result<Vec<_>>>()?;
        let m = params.psi.dim();
        Ok(ModelOptim {
            layers,
            psi_w: mk(m * m)?,
            psi_b: mk(1)?,
            psi_gamma: mk(m)?,
            psi_beta: mk(m)?,
            nu_w: mk(params.nu.weights.data().len())?,
            nu_b: mk(params.nu.bias.len())?,
        })
    }

    /// Set the learning rate on every buffer (schedules drive this).
    pub fn set_lr(&mut self, lr: f64) {
        for (w, b) in &mut self.layers {
            w.lr = lr;
            b.lr = lr;
        }
        for st in [
            &mut self.psi_w,
            &mut self.psi_b,
            &mut self.psi_gamma,
            &mut self.psi_beta,
            &mut self.nu_w,
            &mut self.nu_b,
        ] {
            st.lr = lr;
        }
    }
}

/// One optimization step: backward, advance running statistics, apply
/// momentum SGD to every unfrozen group. Returns the batch loss.
pub fn train_step(
    params: &mut ModelParams,
    optim: &mut ModelOptim,
    batch: &[Vec<f64>],
    labels: &[usize],
    epsilon: f64,
) -> Result<f64> {
    let full = backward_full(params, batch, labels, epsilon)?;

    let rho = params.psi.bn_momentum;
    for d in 0..params.psi.dim() {
        params.psi.mu[d] = (1.0 - rho) * params.psi.mu[d] + rho * full.batch_mu[d];
        params.psi.sigma[d] = ((1.0 - rho) * params.psi.sigma[d] + rho * full.batch_sigma[d])
            .max(params.psi.bn_epsilon);
    }

    if let Some(phi) = &full.grads.phi {
        for (layer, (grad, (opt_w, opt_b))) in params
            .phi
            .layers
            .iter_mut()
            .zip(phi.iter().zip(optim.layers.iter_mut()))
        {
            sgd_momentum_step(layer.weights.data_mut(), grad.weights.data(), opt_w)?;
            sgd_momentum_step(&mut layer.bias, &grad.bias, opt_b)?;
        }
    }
    if let Some(psi) = &full.grads.psi {
        sgd_momentum_step(params.psi.w.data_mut(), psi.w.data(), &mut optim.psi_w)?;
        let mut b = [params.psi.b];
        sgd_momentum_step(&mut b, &[psi.b], &mut optim.psi_b)?;
        params.psi.b = b[0];
        sgd_momentum_step(&mut params.psi.gamma, &psi.gamma, &mut optim.psi_gamma)?;
        sgd_momentum_step(&mut params.psi.beta, &psi.beta, &mut optim.psi_beta)?;
    }
    if let Some(nu) = &full.grads.nu {
        sgd_momentum_step(params.nu.weights.data_mut(), nu.weights.data(), &mut optim.nu_w)?;
        sgd_momentum_step(&mut params.nu.bias, &nu.bias, &mut optim.nu_b)?;
    }
    Ok(full.loss)
}
