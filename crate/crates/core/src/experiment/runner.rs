//! Experiment orchestration: world construction per repetition, the
//! pre-train / adapt / infer pipeline over the chosen transport, k
//! sweeps, strategy comparison and embedding export.

use crate::data::{generate_domain, split, transform_inference, Dataset};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::metrics::{
    mean, std_dev, ClientRepMetrics, ClientSummary, RepMetrics, RunMetrics, StrategyReport,
    StrategyRow, SweepReport, SweepRow, Timing,
};
use crate::federation::{
    run_federation, transmit_params, ClientConfig, ClientHello, ClientState,
    PretrainConfig, PretrainOutcome, RoundPlan, ServerState, Strategy,
};
use crate::model::{embed, ModelParams};
use crate::numerics::{derive_seed, Rng};
use crate::prototypes::{nearest_prototype, PrototypeSet};
use std::collections::BTreeMap;
use std::time::Instant;

const TAG_SOURCE_DOMAIN: u64 = 0x01;
const TAG_SOURCE_SPLIT: u64 = 0x02;
const TAG_PRETRAIN: u64 = 0x03;
const TAG_SUBSET: u64 = 0x04;
const TAG_ROUND: u64 = 0x05;
const TAG_CLIENT_DOMAIN: u64 = 0x100;
const TAG_CLIENT_SPLIT: u64 = 0x200;

/// Everything shared by the runs of one repetition.
pub struct World {
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub pretrain: PretrainOutcome,
    /// Per client: (train, test) target splits.
    pub targets: Vec<(Dataset, Dataset)>,
    /// Class subset used for fine-tuning this repetition.
    pub classes: Vec<usize>,
}

/// Generate data and pre-train the source model for one repetition seed.
pub fn build_world(cfg: &ExperimentConfig, rep_seed: u64) -> Result<World> {
    let mut source_domain = cfg.source_domain.clone();
    source_domain.seed = derive_seed(rep_seed, TAG_SOURCE_DOMAIN);
    let source = generate_domain(
        cfg.class_count,
        &source_domain,
        cfg.source_n_per_class,
        cfg.height,
        cfg.width,
        "source",
    )?;
    let fractions = (1.0 - cfg.test_fraction, cfg.test_fraction);
    let mut split_rng = Rng::new(derive_seed(rep_seed, TAG_SOURCE_SPLIT));
    let (source_train, source_test) = split(&source, fractions, &mut split_rng)?;

    let pretrain_cfg = PretrainConfig {
        model: cfg.model_config(),
        optim: cfg.server_optim(),
        schedule: cfg.server_schedule(),
        epochs: cfg.server_epochs,
        batch_size: cfg.server_batch_size,
        label_smoothing: cfg.label_smoothing,
        seed: derive_seed(rep_seed, TAG_PRETRAIN),
        patience: cfg.patience,
    };
    let pretrain = crate::federation::server_pretrain(&source_train, &pretrain_cfg)?;

    let mut targets = Vec::with_capacity(cfg.client_domains.len());
    for (i, domain) in cfg.client_domains.iter().enumerate() {
        let mut domain = domain.clone();
        domain.seed = derive_seed(rep_seed, TAG_CLIENT_DOMAIN + i as u64);
        let target = generate_domain(
            cfg.class_count,
            &domain,
            cfg.target_n_per_class,
            cfg.height,
            cfg.width,
            &format!("target{i}"),
        )?;
        let mut rng = Rng::new(derive_seed(rep_seed, TAG_CLIENT_SPLIT + i as u64));
        targets.push(split(&target, fractions, &mut rng)?);
    }

    let classes = if cfg.classes_per_client < cfg.class_count {
        let mut all: Vec<usize> = (0..cfg.class_count).collect();
        let mut rng = Rng::new(derive_seed(rep_seed, TAG_SUBSET));
        rng.shuffle(&mut all);
        let mut subset: Vec<usize> = all.into_iter().take(cfg.classes_per_client).collect();
        subset.sort_unstable();
        subset
    } else {
        (0..cfg.class_count).collect()
    };

    Ok(World {
        source_train,
        source_test,
        pretrain,
        targets,
        classes,
    })
}

/// The (train, test) target split client `index` would see in the run
/// with this repetition seed; lets a separate client process generate
/// bit-identical local data.
pub fn client_target_split(
    cfg: &ExperimentConfig,
    rep_seed: u64,
    index: usize,
) -> Result<(Dataset, Dataset)> {
    let Some(domain) = cfg.client_domains.get(index) else {
        return Err(Error::Config(format!(
            "no [client.{index}] domain section (have {})",
            cfg.client_domains.len()
        )));
    };
    let mut domain = domain.clone();
    domain.seed = derive_seed(rep_seed, TAG_CLIENT_DOMAIN + index as u64);
    let target = generate_domain(
        cfg.class_count,
        &domain,
        cfg.target_n_per_class,
        cfg.height,
        cfg.width,
        &format!("target{index}"),
    )?;
    let mut rng = Rng::new(derive_seed(rep_seed, TAG_CLIENT_SPLIT + index as u64));
    split(&target, (1.0 - cfg.test_fraction, cfg.test_fraction), &mut rng)
}

/// Client-side hyperparameters derived from the experiment config.
pub fn client_config(cfg: &ExperimentConfig) -> ClientConfig {
    ClientConfig {
        optim: cfg.client_optim(),
        batch_size: cfg.client_batch_size,
        label_smoothing: cfg.label_smoothing,
        schedule: cfg.client_schedule(),
        sampling: cfg.sampling_enabled.then(|| cfg.sampler.clone()),
        upstream: cfg.upstream,
    }
}

/// Round plans for one repetition seed.
pub fn plans_for(cfg: &ExperimentConfig, classes: Vec<usize>, k: usize, rep_seed: u64) -> Vec<RoundPlan> {
    (0..cfg.rounds)
        .map(|r| RoundPlan {
            k,
            classes: classes.clone(),
            epochs: cfg.client_epochs,
            lr: cfg.client_lr,
            seed: derive_seed(derive_seed(rep_seed, TAG_ROUND), r as u64),
        })
        .collect()
}

/// Nearest-prototype accuracy of `params` + `protos` over the samples of
/// `test` whose label the prototypes cover.
pub fn prototype_accuracy(
    params: &ModelParams,
    protos: &PrototypeSet,
    test: &Dataset,
) -> Result<f64> {
    let classes = protos.classes();
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in &test.samples {
        if !classes.contains(&s.label) {
            continue;
        }
        let t = transform_inference(s);
        let tau = embed(params, &t.pixels)?;
        let (pred, _) = nearest_prototype(&tau, protos)?;
        correct += (pred == s.label) as usize;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("test samples for covered classes"));
    }
    Ok(correct as f64 / total as f64)
}

fn subset_protos(protos: &PrototypeSet, classes: &[usize]) -> PrototypeSet {
    PrototypeSet {
        prototypes: protos
            .prototypes
            .iter()
            .filter(|(c, _)| classes.contains(c))
            .map(|(c, p)| (*c, p.clone()))
            .collect(),
        embedding_dim: protos.embedding_dim,
    }
}

/// One repetition at a given k and strategy over an existing world.
pub fn run_rep(
    cfg: &ExperimentConfig,
    world: &World,
    k: usize,
    strategy: Strategy,
    rep: usize,
    rep_seed: u64,
) -> Result<(RepMetrics, ServerState)> {
    let plans = plans_for(cfg, world.classes.clone(), k, rep_seed);
    let server = ServerState::new(world.pretrain.clone(), strategy, plans[0].clone());
    let source_subset = subset_protos(&world.pretrain.source_protos, &world.classes);

    let mut clients = Vec::with_capacity(world.targets.len());
    let mut zero_shots = Vec::with_capacity(world.targets.len());
    for (i, (train, test)) in world.targets.iter().enumerate() {
        let mut frozen = world.pretrain.params.clone();
        frozen.frozen_phi = true;
        frozen.frozen_nu = true;
        zero_shots.push(prototype_accuracy(&frozen, &source_subset, test)?);
        let mut client = ClientState::new(i as u64, client_config(cfg), train.clone(), test.clone());
        client.install_baseline(1, world.pretrain.params.clone());
        clients.push(client);
    }

    let (server, run) = run_federation(server, &mut clients, &plans, cfg.transport)?;
    let last_round = run.rounds.last().expect("at least one round");
    let clients_metrics = last_round
        .clients
        .iter()
        .enumerate()
        .map(|(i, outcome)| match &outcome.outcome {
            Ok(m) => ClientRepMetrics {
                client_id: m.client_id,
                accuracy: Some(m.accuracy),
                zero_shot_accuracy: zero_shots[i],
                pre_loss: m.pre_loss,
                post_loss: m.post_loss,
                epoch_losses: m.epoch_losses.clone(),
                bytes_to_server: m.bytes_to_server,
                bytes_from_server: m.bytes_from_server,
                params_response_bytes: m.params_response_bytes,
                params_response_kind: m.params_response_kind.clone(),
                labels_requested: m.labels_requested,
                labels_discarded: m.labels_discarded,
                error: None,
                sampler_telemetry: m.sampler_telemetry.clone(),
            },
            Err(e) => ClientRepMetrics {
                client_id: outcome.client_id,
                accuracy: None,
                zero_shot_accuracy: zero_shots[i],
                pre_loss: None,
                post_loss: None,
                epoch_losses: Vec::new(),
                bytes_to_server: 0,
                bytes_from_server: 0,
                params_response_bytes: 0,
                params_response_kind: String::new(),
                labels_requested: 0,
                labels_discarded: 0,
                error: Some(e.clone()),
                sampler_telemetry: Vec::new(),
            },
        })
        .collect();
    Ok((
        RepMetrics {
            rep,
            seed: rep_seed,
            pretrain_loss: world.pretrain.loss_curve.clone(),
            final_version: run.final_version,
            clients: clients_metrics,
        },
        server,
    ))
}

fn summarize(cfg: &ExperimentConfig, k: usize, strategy: Strategy, reps: Vec<RepMetrics>) -> RunMetrics {
    let client_count = cfg.client_domains.len();
    let clients = (0..client_count)
        .map(|i| {
            let accuracies: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.clients.get(i).and_then(|c| c.accuracy))
                .collect();
            let zero: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.clients.get(i).map(|c| c.zero_shot_accuracy))
                .collect();
            ClientSummary {
                client_id: i as u64,
                accuracy_mean: mean(&accuracies),
                accuracy_std: std_dev(&accuracies),
                zero_shot_mean: mean(&zero),
                accuracies,
            }
        })
        .collect();
    RunMetrics {
        k,
        strategy: strategy.name().to_string(),
        transport: cfg.transport.name().to_string(),
        repetitions: cfg.repetitions,
        clients,
        reps,
    }
}

/// Run the configured experiment: `repetitions` runs with seeds
/// `seed + run_index`, fresh worlds (and support draws) per run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunMetrics, Timing)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut reps = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let rep_seed = cfg.seed.wrapping_add(rep as u64);
        let world = build_world(cfg, rep_seed)?;
        let (metrics, _) = run_rep(cfg, &world, cfg.k, cfg.strategy, rep, rep_seed)?;
        reps.push(metrics);
    }
    Ok((
        summarize(cfg, cfg.k, cfg.strategy, reps),
        Timing {
            total_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Run the same seeded experiment across several k values, sharing the
/// per-repetition worlds.
pub fn sweep_k(cfg: &ExperimentConfig, ks: &[usize]) -> Result<(SweepReport, Vec<RunMetrics>, Timing)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut all_reps: BTreeMap<usize, Vec<RepMetrics>> = ks.iter().map(|&k| (k, Vec::new())).collect();
    for rep in 0..cfg.repetitions {
        let rep_seed = cfg.seed.wrapping_add(rep as u64);
        let world = build_world(cfg, rep_seed)?;
        for &k in ks {
            let (metrics, _) = run_rep(cfg, &world, k, cfg.strategy, rep, rep_seed)?;
            all_reps.get_mut(&k).unwrap().push(metrics);
        }
    }
    let mut runs = Vec::with_capacity(ks.len());
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let run = summarize(cfg, k, cfg.strategy, all_reps.remove(&k).unwrap());
        let per_rep = run.per_rep_accuracies();
        rows.push(SweepRow {
            k,
            accuracy_mean: mean(&per_rep),
            accuracy_std: std_dev(&per_rep),
            zero_shot_mean: run.overall_zero_shot_mean(),
            per_rep_accuracy: per_rep,
        });
        runs.push(run);
    }
    Ok((
        SweepReport { rows },
        runs,
        Timing {
            total_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Run the same seeded experiment under all three transmission
/// strategies; byte counts differ, final accuracies must not.
pub fn compare_strategies(cfg: &ExperimentConfig) -> Result<(StrategyReport, Timing)> {
    cfg.validate()?;
    let start = Instant::now();
    let order = [
        Strategy::PreConfigured,
        Strategy::DifferentialSync,
        Strategy::OnDemand,
    ];
    let mut reps: BTreeMap<&'static str, Vec<RepMetrics>> =
        order.iter().map(|s| (s.name(), Vec::new())).collect();
    let mut post_agg: BTreeMap<&'static str, u64> = BTreeMap::new();
    for rep in 0..cfg.repetitions {
        let rep_seed = cfg.seed.wrapping_add(rep as u64);
        let world = build_world(cfg, rep_seed)?;
        for &strategy in &order {
            let (metrics, mut server) = run_rep(cfg, &world, cfg.k, strategy, rep, rep_seed)?;
            reps.get_mut(strategy.name()).unwrap().push(metrics);
            // Params frame a late joiner would receive after aggregation.
            let hello = ClientHello {
                client_id: u64::MAX,
                has_baseline: true,
                baseline_version: server.baseline_version,
            };
            let reply = transmit_params(&mut server, &hello, strategy)?;
            let bytes = crate::federation::encode_message(&reply).len() as u64;
            post_agg.insert(strategy.name(), bytes);
        }
    }

    let mut rows = Vec::with_capacity(order.len());
    for &strategy in &order {
        let rep_metrics = &reps[strategy.name()];
        let accuracies: Vec<f64> = rep_metrics
            .iter()
            .flat_map(|r| r.clients.iter().filter_map(|c| c.accuracy))
            .collect();
        let first_contact = rep_metrics
            .first()
            .and_then(|r| r.clients.first())
            .map(|c| c.params_response_bytes)
            .unwrap_or(0);
        let (to_srv, from_srv) = rep_metrics
            .iter()
            .flat_map(|r| r.clients.iter())
            .fold((0u64, 0u64), |(a, b), c| {
                (a + c.bytes_to_server, b + c.bytes_from_server)
            });
        rows.push(StrategyRow {
            strategy: strategy.name().to_string(),
            first_contact_bytes: first_contact,
            post_aggregation_params_bytes: post_agg[strategy.name()],
            total_bytes_from_server: from_srv,
            total_bytes_to_server: to_srv,
            accuracy_mean: mean(&accuracies),
            accuracies,
        });
    }
    let accuracies_identical = rows
        .windows(2)
        .all(|w| w[0].accuracies == w[1].accuracies);
    Ok((
        StrategyReport {
            rows,
            accuracies_identical,
        },
        Timing {
            total_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// CSV of embeddings for external projection: one row per sample with the
/// embedding columns, the label and a stage tag.
pub fn embeddings_csv(params: &ModelParams, dataset: &Dataset, stage: &str) -> Result<String> {
    let m = params.embedding_dim();
    let mut out = String::new();
    for d in 0..m {
        out.push_str(&format!("e{d},"));
    }
    out.push_str("label,stage\n");
    for s in &dataset.samples {
        let t = transform_inference(s);
        let tau = embed(params, &t.pixels)?;
        for v in &tau {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{stage}\n", s.label));
    }
    Ok(out)
}
