//! Streaming selection of informative samples to populate the k-shot
//! support set from an unlabeled stream.
//!
//! Each observed sample is embedded and selected for labelling with
//! probability proportional to its determinantal contribution
//! `tau' S^-1 tau`, where `S` is the ridge-initialized covariance of the
//! embeddings selected so far, normalized by the trace term over all
//! observed samples. A proportional controller keeps the labelling
//! frequency near the configured budget. The covariance inverse advances
//! by rank-one updates.

use crate::data::{transform_inference, Sample, SupportSet};
use crate::error::{Error, Result};
use crate::model::{embed, ModelParams};
use crate::numerics::{sherman_morrison_update, Matrix, Rng};

/// Sampler knobs. The ridge prior makes the covariance invertible before
/// any selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Target long-run selection rate in (0, 1].
    pub budget: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Floor for the empirical rate inside the controller.
    pub rate_floor: f64,
    pub ridge_lambda: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            budget: 0.2,
            q_min: 0.01,
            q_max: 1.0,
            rate_floor: 1e-3,
            ridge_lambda: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            bad.push("budget outside (0, 1]");
        }
        if !(self.q_min > 0.0 && self.q_min <= self.q_max && self.q_max <= 1.0) {
            bad.push("q bounds must satisfy 0 < q_min <= q_max <= 1");
        }
        if self.rate_floor <= 0.0 {
            bad.push("rate_floor <= 0");
        }
        if self.ridge_lambda <= 0.0 {
            bad.push("ridge_lambda <= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join(", ")))
        }
    }
}

/// Running sampler state for one stream.
#[derive(Debug, Clone)]
pub struct SamplerState {
    /// Inverse of the ridge-initialized covariance over selected embeddings.
    pub inv_cov: Matrix,
    /// Running sum of outer products over all observed embeddings.
    pub sum_outer: Matrix,
    /// Stream clock: samples observed so far.
    pub t: usize,
    /// Samples selected for labelling so far.
    pub selected: usize,
    /// Current labelling frequency.
    pub q: f64,
    pub config: SamplerConfig,
}

impl SamplerState {
    pub fn new(dim: usize, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(SamplerState {
            inv_cov: Matrix::scaled_identity(dim, 1.0 / config.ridge_lambda),
            sum_outer: Matrix::zeros(dim, dim),
            t: 0,
            selected: 0,
            q: config.budget.clamp(config.q_min, config.q_max),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.inv_cov.rows()
    }

    pub fn empirical_rate(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.selected as f64 / self.t as f64
        }
    }
}

/// Outcome of one stream observation.
#[derive(Debug, Clone)]
pub struct StreamDecision {
    pub keep: bool,
    pub probability: f64,
    pub embedding: Vec<f64>,
}

/// Telemetry row recorded per observation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TelemetryRow {
    pub t: usize,
    pub selected: usize,
    pub q: f64,
    pub p: f64,
    pub kept: bool,
}

/// Labelling cost accounting for one populate run.
#[derive(Debug, Clone, Default)]
pub struct SamplerReport {
    pub labels_requested: usize,
    /// Labeled samples thrown away because their class quota was already met
    /// (or the class was not requested).
    pub discarded: usize,
    pub telemetry: Vec<TelemetryRow>,
}

/// Selection probability of an embedding given the current state:
/// `q * (tau' S^-1 tau) / tr((1/t) S^-1 sum_outer)`, clamped to [0, 1].
/// The trace normalizer runs over all observed samples.
pub fn selection_probability(state: &SamplerState, tau: &[f64]) -> Result<f64> {
    if state.t == 0 {
        return Err(Error::Empty("stream observations"));
    }
    if tau.len() != state.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs sampler dim {}",
            tau.len(),
            state.dim()
        )));
    }
    let trace = state.inv_cov.trace_product(&state.sum_outer)? / state.t as f64;
    if trace <= 1e-12 {
        return Err(Error::DegenerateStream(trace));
    }
    let sv = state.inv_cov.matvec(tau)?;
    let quad: f64 = tau.iter().zip(&sv).map(|(a, b)| a * b).sum();
    Ok((state.q * quad / trace).clamp(0.0, 1.0))
}

/// Proportional controller on the labelling frequency: over-selection
/// lowers q, under-selection raises it, clamped to the configured bounds.
pub fn update_label_frequency(state: &mut SamplerState) {
    if state.t == 0 {
        return;
    }
    let rate = state.empirical_rate().max(state.config.rate_floor);
    state.q = (state.q * state.config.budget / rate)
        .clamp(state.config.q_min, state.config.q_max);
}

/// Observe one embedding: advance the clock and outer-product sum, adapt
/// q, draw the Bernoulli decision, and on keep apply the rank-one inverse
/// update.
pub fn observe_embedding(
    state: &mut SamplerState,
    tau: &[f64],
    rng: &mut Rng,
) -> Result<StreamDecision> {
    if tau.len() != state.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs sampler dim {}",
            tau.len(),
            state.dim()
        )));
    }
    state.t += 1;
    state.sum_outer.add_assign(&Matrix::outer(tau, tau))?;
    update_label_frequency(state);
    let p = selection_probability(state, tau)?;
    let keep = p > 0.0 && rng.bernoulli(p);
    if keep {
        state.inv_cov = sherman_morrison_update(&state.inv_cov, tau)?;
        state.selected += 1;
    }
    Ok(StreamDecision {
        keep,
        probability: p,
        embedding: tau.to_vec(),
    })
}

/// Observe one raw sample: transform, embed, then decide.
pub fn observe(
    state: &mut SamplerState,
    sample: &Sample,
    model: &ModelParams,
    rng: &mut Rng,
) -> Result<StreamDecision> {
    let transformed = transform_inference(sample);
    let tau = embed(model, &transformed.pixels)?;
    observe_embedding(state, &tau, rng)
}

/// A source of stream samples.
pub trait SampleStream {
    fn next_sample(&mut self) -> Option<Sample>;
}

/// Finite in-memory stream.
pub struct SliceStream {
    samples: Vec<Sample>,
    pos: usize,
}

impl SliceStream {
    pub fn new(samples: Vec<Sample>) -> Self {
        SliceStream { samples, pos: 0 }
    }

    /// Stream over a dataset's samples in seeded shuffled order.
    pub fn shuffled(samples: Vec<Sample>, rng: &mut Rng) -> Self {
        let mut samples = samples;
        rng.shuffle(&mut samples);
        SliceStream { samples, pos: 0 }
    }
}

impl SampleStream for SliceStream {
    fn next_sample(&mut self) -> Option<Sample> {
        let s = self.samples.get(self.pos).cloned();
        if s.is_some() {
            self.pos += 1;
        }
        s
    }
}

/// Endless in-memory seeded generator: each draw renders a fresh sample
/// of a uniformly chosen class under the domain transform.
pub struct DomainStream {
    domain: crate::data::DomainConfig,
    class_count: usize,
    height: usize,
    width: usize,
    rng: Rng,
    counter: usize,
}

impl DomainStream {
    pub fn new(
        domain: crate::data::DomainConfig,
        class_count: usize,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Self {
        DomainStream {
            domain,
            class_count,
            height,
            width,
            rng: Rng::new(seed),
            counter: 0,
        }
    }
}

impl SampleStream for DomainStream {
    fn next_sample(&mut self) -> Option<Sample> {
        let class = self.rng.index(self.class_count);
        // Offset past any finite dataset indices so stream samples carry
        // their own glyph jitter.
        let index = (1 << 32) + self.counter;
        self.counter += 1;
        Some(crate::data::generate_sample(
            class,
            self.class_count,
            &self.domain,
            index,
            self.height,
            self.width,
        ))
    }
}

/// Run the sampler until every requested class holds exactly k labeled
/// samples. Labels may be requested for samples whose class quota is
/// already met (labels are unknown before the oracle); those are
/// discarded and counted.
pub fn populate_support<F>(
    stream: &mut dyn SampleStream,
    model: &ModelParams,
    k: usize,
    classes: &[usize],
    mut label_oracle: F,
    state: &mut SamplerState,
    rng: &mut Rng,
) -> Result<(SupportSet, SamplerReport)>
where
    F: FnMut(&Sample) -> usize,
{
    let mut support = SupportSet::new(k, classes.to_vec());
    let mut report = SamplerReport::default();
    if k == 0 {
        return Ok((support, report));
    }
    loop {
        if support.is_balanced() {
            return Ok((support, report));
        }
        let Some(sample) = stream.next_sample() else {
            let fill: Vec<String> = classes
                .iter()
                .map(|c| {
                    format!(
                        "class {} has {}/{}",
                        c,
                        support.per_class.get(c).map(Vec::len).unwrap_or(0),
                        k
                    )
                })
                .collect();
            return Err(Error::StreamExhausted(fill.join(", ")));
        };
        let decision = observe(state, &sample, model, rng)?;
        report.telemetry.push(TelemetryRow {
            t: state.t,
            selected: state.selected,
            q: state.q,
            p: decision.probability,
            kept: decision.keep,
        });
        if decision.keep {
            let label = label_oracle(&sample);
            report.labels_requested += 1;
            match support.per_class.get_mut(&label) {
                Some(bucket) if bucket.len() < k => bucket.push(sample),
                _ => report.discarded += 1,
            }
        }
    }
}

/// CSV rendering of sampler telemetry.
pub fn telemetry_csv(rows: &[TelemetryRow]) -> String {
    let mut out = String::from("t,selected,q,p,kept\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t, r.selected, r.q, r.p, r.kept as u8
        ));
    }
    out
}
