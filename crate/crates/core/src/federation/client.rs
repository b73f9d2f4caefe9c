//! Client side: parameter installation, adapter-only fine-tuning on the
//! k-shot support set, prototype creation, upload and inference.

use crate::data::{augment, build_support_set, transform_inference, Dataset, Sample, SupportSet};
use crate::error::{Error, Result};
use crate::federation::delta::apply_delta;
use crate::federation::message::{AdaptedUpload, Message, RoundConfig};
use crate::model::{
    batch_loss, embed, freeze, train_step, ForwardMode, ModelOptim, ModelParams, OptimConfig,
    ParamGroup,
};
use crate::numerics::{derive_seed, lr_schedule, LrSchedule, Rng};
use crate::prototypes::{compute_prototypes, nearest_prototype, PrototypeSet};
use crate::sampler::{
    populate_support, SamplerConfig, SamplerReport, SamplerState, SliceStream, TelemetryRow,
};
use std::collections::BTreeMap;

/// Client-local hyperparameters that do not travel on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub schedule: LrSchedule,
    /// When set, the support set is populated from the local stream by
    /// the selection sampler instead of drawn statically.
    pub sampling: Option<SamplerConfig>,
    pub upstream: bool,
}

/// One federated client: its local target-domain data, the frozen model
/// and the prototypes it classifies with.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u64,
    pub config: ClientConfig,
    pub train: Dataset,
    pub test: Dataset,
    /// Pre-installed snapshot (version, params) for the pre-configured
    /// and differential-sync strategies.
    pub baseline: Option<(u64, ModelParams)>,
    pub model: Option<ModelParams>,
    pub support: Option<SupportSet>,
    pub protos: Option<PrototypeSet>,
    pub sampler: Option<SamplerState>,
}

/// Local adaptation outcome for metrics.
#[derive(Debug, Clone, Default)]
pub struct AdaptMetrics {
    /// Eval-mode support loss before and after fine-tuning (absent for k = 0).
    pub pre_loss: Option<f64>,
    pub post_loss: Option<f64>,
    pub epoch_losses: Vec<f64>,
    pub labels_requested: usize,
    pub labels_discarded: usize,
    pub sampler_telemetry: Vec<TelemetryRow>,
}

impl ClientState {
    pub fn new(client_id: u64, config: ClientConfig, train: Dataset, test: Dataset) -> Self {
        ClientState {
            client_id,
            config,
            train,
            test,
            baseline: None,
            model: None,
            support: None,
            protos: None,
            sampler: None,
        }
    }

    pub fn install_baseline(&mut self, version: u64, params: ModelParams) {
        self.baseline = Some((version, params));
    }

    /// Install the model announced by the server and freeze the extractor
    /// and classifier before any local training.
    pub fn apply_params_message(&mut self, msg: &Message) -> Result<()> {
        let mut params = match msg {
            Message::ModelFull { params, .. } => params.clone(),
            Message::ModelDelta { base_version, groups, .. } => {
                let Some((installed_version, baseline)) = &self.baseline else {
                    return Err(Error::Protocol(
                        "delta received but no baseline installed".into(),
                    ));
                };
                if installed_version != base_version {
                    return Err(Error::Protocol(format!(
                        "delta base {base_version} does not match installed baseline {installed_version}"
                    )));
                }
                apply_delta(baseline, groups)?
            }
            Message::Ack { .. } => {
                let Some((_, baseline)) = &self.baseline else {
                    return Err(Error::Protocol(
                        "pre-configured ack but no baseline installed".into(),
                    ));
                };
                baseline.clone()
            }
            other => {
                return Err(Error::Protocol(format!(
                    "expected parameters, got {}",
                    other.kind()
                )))
            }
        };
        params.frozen_phi = false;
        params.frozen_nu = false;
        freeze(&mut params, &[ParamGroup::Extractor, ParamGroup::Classifier])?;
        self.model = Some(params);
        Ok(())
    }

    pub fn set_source_prototypes(&mut self, protos: PrototypeSet) {
        self.protos = Some(protos);
    }

    fn support_inputs(support: &SupportSet) -> (Vec<Sample>, Vec<usize>) {
        let samples: Vec<Sample> = support.flattened().into_iter().cloned().collect();
        let labels = samples.iter().map(|s| s.label).collect();
        (samples, labels)
    }

    fn eval_support_loss(&self, samples: &[Sample], labels: &[usize]) -> Result<f64> {
        let model = self.model.as_ref().expect("model installed");
        let inputs: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| transform_inference(s).pixels)
            .collect();
        batch_loss(model, &inputs, labels, self.config.label_smoothing, ForwardMode::Eval)
    }

    /// Local adaptation per the received round config: build the support
    /// set (statically or via the stream sampler), fine-tune the adapter
    /// over the frozen extractor and classifier, recompute prototypes
    /// with the fine-tuned embedding, and assemble the upload.
    pub fn client_adapt(
        &mut self,
        round: &RoundConfig,
    ) -> Result<(Option<AdaptedUpload>, AdaptMetrics)> {
        let mut metrics = AdaptMetrics::default();
        if self.model.is_none() {
            return Err(Error::NotReady("no model installed"));
        }

        if round.k == 0 {
            // No labeled target data: serve the source prototypes as-is.
            let Some(protos) = self.protos.clone() else {
                return Err(Error::NotReady("no source prototypes for k = 0"));
            };
            let upload = self.config.upstream.then(|| AdaptedUpload {
                client_id: self.client_id,
                psi: self.model.as_ref().unwrap().psi.clone(),
                prototypes: protos,
                support_counts: round.classes.iter().map(|&c| (c, 0)).collect(),
            });
            return Ok((upload, metrics));
        }

        let mut rng = Rng::new(round.seed);
        let support = if let Some(sampler_cfg) = self.config.sampling.clone() {
            let model = self.model.as_ref().unwrap();
            let mut state = SamplerState::new(model.embedding_dim(), sampler_cfg)?;
            let mut stream_rng = rng.fork(0x57e0);
            let mut stream = SliceStream::shuffled(self.train.samples.clone(), &mut stream_rng);
            let mut draw_rng = rng.fork(0xd0a1);
            let (support, report): (SupportSet, SamplerReport) = populate_support(
                &mut stream,
                model,
                round.k,
                &round.classes,
                |s| s.label,
                &mut state,
                &mut draw_rng,
            )?;
            metrics.labels_requested = report.labels_requested;
            metrics.labels_discarded = report.discarded;
            metrics.sampler_telemetry = report.telemetry;
            self.sampler = Some(state);
            support
        } else {
            let mut draw_rng = rng.fork(0x5b17);
            build_support_set(&self.train, round.k, &round.classes, &mut draw_rng)?
        };
        support.validate()?;

        let (samples, labels) = Self::support_inputs(&support);
        if samples.is_empty() {
            return Err(Error::Scarcity {
                class: *round.classes.first().unwrap_or(&0),
                requested: round.k,
                available: 0,
            });
        }
        metrics.pre_loss = Some(self.eval_support_loss(&samples, &labels)?);

        let model = self.model.as_mut().unwrap();
        let optim_cfg = OptimConfig {
            lr: round.lr,
            ..self.config.optim.clone()
        };
        let mut optim = ModelOptim::new(model, &optim_cfg)?;
        let mut shuffle_rng = rng.fork(0xba7c);
        let mut aug_rng = rng.fork(0xa901);
        for epoch in 0..round.epochs {
            optim.set_lr(lr_schedule(epoch, optim_cfg.lr, &self.config.schedule));
            let mut epoch_loss = 0.0;
            let mut seen = 0usize;
            for batch_idx in super::server::batch_indices(
                samples.len(),
                self.config.batch_size,
                &mut shuffle_rng,
            ) {
                let mut inputs = Vec::with_capacity(batch_idx.len());
                let mut batch_labels = Vec::with_capacity(batch_idx.len());
                for &i in &batch_idx {
                    let s = augment(&samples[i], self.train.height, self.train.width, &mut aug_rng);
                    inputs.push(s.pixels);
                    batch_labels.push(s.label);
                }
                let loss = train_step(
                    model,
                    &mut optim,
                    &inputs,
                    &batch_labels,
                    self.config.label_smoothing,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                epoch_loss += loss * batch_idx.len() as f64;
                seen += batch_idx.len();
            }
            metrics.epoch_losses.push(epoch_loss / seen as f64);
        }

        // Prototypes from the fine-tuned embedding over the support set.
        let model = self.model.as_ref().unwrap();
        let embeddings: Vec<(Vec<f64>, usize)> = samples
            .iter()
            .zip(&labels)
            .map(|(s, &l)| {
                let t = transform_inference(s);
                embed(model, &t.pixels).map(|e| (e, l))
            })
            .collect::<Result<_>>()?;
        let protos = compute_prototypes(&embeddings)?;
        metrics.post_loss = Some(self.eval_support_loss(&samples, &labels)?);

        let support_counts: BTreeMap<usize, usize> =
            round.classes.iter().map(|&c| (c, round.k)).collect();
        self.support = Some(support);
        self.protos = Some(protos.clone());
        let upload = self.config.upstream.then(|| AdaptedUpload {
            client_id: self.client_id,
            psi: model.psi.clone(),
            prototypes: protos,
            support_counts,
        });
        Ok((upload, metrics))
    }

    /// Nearest-prototype inference over the deterministic transform; the
    /// classifier head is not consulted.
    pub fn client_infer(&self, x: &Sample) -> Result<usize> {
        let model = self.model.as_ref().ok_or(Error::NotReady("no model installed"))?;
        let protos = self.protos.as_ref().ok_or(Error::NotReady("no prototypes"))?;
        let t = transform_inference(x);
        let tau = embed(model, &t.pixels)?;
        Ok(nearest_prototype(&tau, protos)?.0)
    }

    /// Hold-back accuracy over test samples of the classes covered by the
    /// prototypes.
    pub fn evaluate_accuracy(&self) -> Result<f64> {
        let protos = self.protos.as_ref().ok_or(Error::NotReady("no prototypes"))?;
        let classes = protos.classes();
        let eligible: Vec<&Sample> = self
            .test
            .samples
            .iter()
            .filter(|s| classes.contains(&s.label))
            .collect();
        if eligible.is_empty() {
            return Err(Error::Empty("test samples for covered classes"));
        }
        let mut correct = 0usize;
        for s in &eligible {
            if self.client_infer(s)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / eligible.len() as f64)
    }
}

/// Seed for a client's local draws inside a round.
pub fn client_round_seed(experiment_seed: u64, round: usize, client_id: u64) -> u64 {
    derive_seed(derive_seed(experiment_seed, round as u64), client_id)
}
