//! Server side: source pre-training, parameter transmission strategies,
//! weighted adapter aggregation, and the per-connection session machine.

use crate::data::{augment, transform_inference, Dataset};
use crate::error::{Error, Result};
use crate::federation::delta::{adaptation_values, make_delta, set_adaptation_values};
use crate::federation::message::{
    AdaptedUpload, ClientHello, Message, RoundConfig, ACK_DONE, ACK_NEED_PROTOTYPES, ACK_OK,
    ACK_READY,
};
use crate::model::{
    embed, train_step, AdaptationParams, ModelConfig, ModelOptim, ModelParams, OptimConfig,
};
use crate::numerics::{derive_seed, lr_schedule, LrSchedule, Rng};
use crate::prototypes::{compute_prototypes, fuse_prototypes, PrototypeSet};
use std::collections::BTreeMap;

/// Parameter transmission strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    OnDemand,
    PreConfigured,
    DifferentialSync,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::OnDemand,
        Strategy::PreConfigured,
        Strategy::DifferentialSync,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::OnDemand => "on_demand",
            Strategy::PreConfigured => "pre_configured",
            Strategy::DifferentialSync => "differential_sync",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "on_demand" => Ok(Strategy::OnDemand),
            "pre_configured" => Ok(Strategy::PreConfigured),
            "differential_sync" => Ok(Strategy::DifferentialSync),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected on_demand, pre_configured or differential_sync)"
            ))),
        }
    }
}

/// Pre-training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Early stopping patience on the training loss; disabled by default.
    pub patience: Option<usize>,
}

/// Result of source pre-training.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams,
    pub source_protos: PrototypeSet,
    pub loss_curve: Vec<f64>,
}

/// Shuffled batch index lists; a trailing singleton is folded into the
/// previous batch so train-mode statistics always see >= 2 samples.
pub(crate) fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let batch_size = batch_size.max(2);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().map(Vec::len) == Some(1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Epoch/batch pre-training loop over the source data: transform, compute
/// the smoothed cross entropy, update with momentum SGD under the step
/// schedule. Afterwards the source prototypes come from the trained
/// embedding over the untransformed training samples.
pub fn server_pretrain(train: &Dataset, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.model.validate()?;
    for class in 0..cfg.model.class_count {
        if !train.samples.iter().any(|s| s.label == class) {
            return Err(Error::Scarcity {
                class,
                requested: 1,
                available: 0,
            });
        }
    }
    let mut init_rng = Rng::new(derive_seed(cfg.seed, 0x1217));
    let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x5f1e));
    let mut params = ModelParams::init(&cfg.model, &mut init_rng)?;
    let mut optim = ModelOptim::new(&params, &cfg.optim)?;
    let mut aug_rng = Rng::new(derive_seed(cfg.seed, 0xa9b6));
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        optim.set_lr(lr_schedule(epoch, cfg.optim.lr, &cfg.schedule));
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in batch_indices(train.len(), cfg.batch_size, &mut shuffle_rng) {
            let mut inputs = Vec::with_capacity(batch_idx.len());
            let mut labels = Vec::with_capacity(batch_idx.len());
            for &i in &batch_idx {
                let s = augment(&train.samples[i], train.height, train.width, &mut aug_rng);
                inputs.push(s.pixels);
                labels.push(s.label);
            }
            let loss = train_step(&mut params, &mut optim, &inputs, &labels, cfg.label_smoothing)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        let mean = epoch_loss / seen as f64;
        loss_curve.push(mean);
        if let Some(patience) = cfg.patience {
            if mean + 1e-12 < best {
                best = mean;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > patience {
                    break;
                }
            }
        }
    }
    let embeddings: Vec<(Vec<f64>, usize)> = train
        .samples
        .iter()
        .map(|s| {
            let t = transform_inference(s);
            embed(&params, &t.pixels).map(|e| (e, s.label))
        })
        .collect::<Result<_>>()?;
    let source_protos = compute_prototypes(&embeddings)?;
    Ok(PretrainOutcome {
        params,
        source_protos,
        loss_curve,
    })
}

/// Round parameters the server pushes to each participating client.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub k: usize,
    pub classes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// What the aggregation barrier did at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub version: u64,
    pub aggregated: bool,
    pub fused_classes: usize,
    pub uploads: usize,
    pub delta_fallbacks: u64,
}

/// Server-side federation state. The baseline snapshot is immutable after
/// pre-training; the version counter strictly increases on every global
/// update.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ModelParams,
    pub version: u64,
    pub baseline: ModelParams,
    pub baseline_version: u64,
    pub source_protos: PrototypeSet,
    pub fused_protos: Option<PrototypeSet>,
    pub registry: BTreeMap<u64, u64>,
    pub pending_uploads: Vec<AdaptedUpload>,
    pub strategy: Strategy,
    pub plan: RoundPlan,
    /// Differential-sync requests that had to fall back to a full model.
    pub delta_fallbacks: u64,
}

impl ServerState {
    pub fn new(outcome: PretrainOutcome, strategy: Strategy, plan: RoundPlan) -> Self {
        ServerState {
            baseline: outcome.params.clone(),
            baseline_version: 1,
            global: outcome.params,
            version: 1,
            source_protos: outcome.source_protos,
            fused_protos: None,
            registry: BTreeMap::new(),
            pending_uploads: Vec::new(),
            strategy,
            plan,
            delta_fallbacks: 0,
        }
    }

    /// Aggregation barrier: fuse uploaded prototypes and average the
    /// adapter parameters, weighted by support counts. Uploads without
    /// support (k = 0 echoes) carry no weight and are skipped.
    pub fn finish_round(&mut self) -> Result<RoundSummary> {
        let uploads = std::mem::take(&mut self.pending_uploads);
        let weighted: Vec<&AdaptedUpload> =
            uploads.iter().filter(|u| u.total_support() > 0).collect();
        let mut aggregated = false;
        let mut fused_classes = 0;
        if !weighted.is_empty() {
            let psi = fedavg_psi(&weighted.iter().map(|u| (*u).clone()).collect::<Vec<_>>())?;
            self.global.psi = psi;
            self.version += 1;
            let sets: Vec<PrototypeSet> =
                weighted.iter().map(|u| u.prototypes.clone()).collect();
            let fused = fuse_prototypes(&sets)?;
            fused_classes = fused.len();
            self.fused_protos = Some(fused);
            aggregated = true;
        }
        Ok(RoundSummary {
            version: self.version,
            aggregated,
            fused_classes,
            uploads: uploads.len(),
            delta_fallbacks: self.delta_fallbacks,
        })
    }
}

/// Answer a hello according to the transmission strategy.
pub fn transmit_params(
    server: &mut ServerState,
    hello: &ClientHello,
    strategy: Strategy,
) -> Result<Message> {
    let reply = match strategy {
        Strategy::OnDemand => Message::ModelFull {
            version: server.version,
            params: server.global.clone(),
        },
        Strategy::PreConfigured => {
            if !hello.has_baseline {
                return Err(Error::Protocol(format!(
                    "pre-configured strategy but client {} reports no baseline",
                    hello.client_id
                )));
            }
            Message::Ack { code: ACK_OK }
        }
        Strategy::DifferentialSync => {
            if hello.has_baseline && hello.baseline_version == server.baseline_version {
                Message::ModelDelta {
                    base_version: server.baseline_version,
                    version: server.version,
                    groups: make_delta(&server.baseline, &server.global)?,
                }
            } else {
                // Unknown base: fall back to a full transfer.
                server.delta_fallbacks += 1;
                Message::ModelFull {
                    version: server.version,
                    params: server.global.clone(),
                }
            }
        }
    };
    server.registry.insert(hello.client_id, server.version);
    Ok(reply)
}

/// Support-count-weighted mean of every adapter field across uploads.
/// Anchored at the first upload so identical inputs pass through exactly.
pub fn fedavg_psi(uploads: &[AdaptedUpload]) -> Result<AdaptationParams> {
    if uploads.is_empty() {
        return Err(Error::Empty("uploads"));
    }
    let dim = uploads[0].psi.dim();
    if uploads.iter().any(|u| u.psi.dim() != dim) {
        return Err(Error::Shape("adapter dims differ across uploads".into()));
    }
    let weights: Vec<f64> = uploads.iter().map(|u| u.total_support() as f64).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    let anchor = adaptation_values(&uploads[0].psi);
    let flats: Vec<Vec<f64>> = uploads.iter().map(|u| adaptation_values(&u.psi)).collect();
    let mut fused = anchor.clone();
    for (j, base) in anchor.iter().enumerate() {
        let mut offset = 0.0;
        for (flat, w) in flats.iter().zip(&weights) {
            offset += w * (flat[j] - base);
        }
        fused[j] = base + offset / total;
    }
    let mut out = uploads[0].psi.clone();
    set_adaptation_values(&mut out, &fused)?;
    Ok(out)
}

/// Per-connection protocol stage.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    AwaitHello,
    AwaitReady { client_id: u64 },
    AwaitFinal { client_id: u64 },
    Done,
}

/// Server-side session state machine; one per client connection. Both
/// transports drive it through [`ServerSession::handle_frame`], so the
/// byte streams are identical.
pub struct ServerSession<'a> {
    server: &'a mut ServerState,
    stage: Stage,
}

impl<'a> ServerSession<'a> {
    pub fn new(server: &'a mut ServerState) -> Self {
        ServerSession {
            server,
            stage: Stage::AwaitHello,
        }
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    pub fn handle(&mut self, msg: &Message) -> Result<Message> {
        match (self.stage, msg) {
            (Stage::AwaitHello, Message::ClientHello(hello)) => {
                let strategy = self.server.strategy;
                let reply = transmit_params(self.server, hello, strategy)?;
                self.stage = Stage::AwaitReady {
                    client_id: hello.client_id,
                };
                Ok(reply)
            }
            (Stage::AwaitReady { client_id }, Message::Ack { code: ACK_READY }) => {
                let plan = &self.server.plan;
                let reply = Message::RoundConfig(RoundConfig {
                    k: plan.k,
                    classes: plan.classes.clone(),
                    epochs: plan.epochs,
                    lr: plan.lr,
                    seed: derive_seed(plan.seed, client_id),
                });
                self.stage = Stage::AwaitFinal { client_id };
                Ok(reply)
            }
            (Stage::AwaitFinal { .. }, Message::Ack { code: ACK_NEED_PROTOTYPES }) => Ok(
                Message::SourcePrototypes(self.server.source_protos.clone()),
            ),
            (Stage::AwaitFinal { client_id }, Message::AdaptedUpload(upload)) => {
                if upload.client_id != client_id {
                    return Err(Error::Protocol(format!(
                        "upload from client {} inside session of client {}",
                        upload.client_id, client_id
                    )));
                }
                self.server.pending_uploads.push(upload.clone());
                self.stage = Stage::Done;
                Ok(Message::Ack { code: ACK_OK })
            }
            (Stage::AwaitFinal { .. }, Message::Ack { code: ACK_DONE }) => {
                self.stage = Stage::Done;
                Ok(Message::Ack { code: ACK_OK })
            }
            (stage, other) => Err(Error::Protocol(format!(
                "unexpected {} in stage {stage:?}",
                other.kind()
            ))),
        }
    }

    /// Frame-level entry point used by both transports.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Result<Vec<u8>> {
        let msg = crate::federation::message::decode_message(frame)?;
        let reply = self.handle(&msg)?;
        Ok(crate::federation::message::encode_message(&reply))
    }
}
