//! Acceptance suite. Each test prints one PASS/FAIL line for its
//! criterion and asserts it, including the runtime bound.

mod common;

use common::{gauss_inverse, random_spd, random_vector};
use fedadapt_core::data::Dataset;
use fedadapt_core::experiment::{
    build_world, client_config, compare_strategies, plans_for, run_experiment, sweep_k,
    ExperimentConfig, RunMetrics, SweepReport,
};
use fedadapt_core::federation::{
    apply_delta, decode_message, encode_message, run_federation, transmit_params, AdaptedUpload,
    ClientHello, ClientState, Message, RoundConfig, ServerState, Strategy, TransportMode,
};
use fedadapt_core::model::{
    batch_loss, model_backward, serialize_classifier, serialize_extractor, ForwardMode,
    ModelConfig, ModelParams,
};
use fedadapt_core::numerics::{sherman_morrison_update, Matrix, Rng};
use fedadapt_core::prototypes::{compute_prototypes, nearest_prototype, PrototypeSet};
use fedadapt_core::sampler::{observe_embedding, SamplerConfig, SamplerState};
use std::sync::OnceLock;
use std::time::Instant;

fn report(name: &str, pass: bool, detail: &str, elapsed: f64, budget: f64) {
    let verdict = if pass && elapsed < budget { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {name}: {verdict} ({detail}; {elapsed:.1}s < {budget:.0}s)");
    assert!(pass, "{name}: {detail}");
    assert!(
        elapsed < budget,
        "{name}: runtime {elapsed:.1}s exceeds {budget:.0}s"
    );
}

// ---------------------------------------------------------------- gradients

/// Guarded relative error; entries below the floor compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn finite_difference_worst(params: &ModelParams, batch: &[Vec<f64>], labels: &[usize]) -> f64 {
    let eps = 0.1;
    let h = 1e-5;
    let (grads, _) = model_backward(params, batch, labels, eps).unwrap();
    let mut worst = 0.0f64;
    let mut check = |setter: &mut dyn FnMut(&mut ModelParams, f64), analytic: f64| {
        let mut plus = params.clone();
        setter(&mut plus, h);
        let mut minus = params.clone();
        setter(&mut minus, -h);
        let fd = (batch_loss(&plus, batch, labels, eps, ForwardMode::Train).unwrap()
            - batch_loss(&minus, batch, labels, eps, ForwardMode::Train).unwrap())
            / (2.0 * h);
        worst = worst.max(rel_err(analytic, fd));
    };

    let phi = grads.phi.as_ref().unwrap();
    for (li, lg) in phi.iter().enumerate() {
        for idx in 0..lg.weights.data().len() {
            check(
                &mut |p, d| p.phi.layers[li].weights.data_mut()[idx] += d,
                lg.weights.data()[idx],
            );
        }
        for idx in 0..lg.bias.len() {
            check(&mut |p, d| p.phi.layers[li].bias[idx] += d, lg.bias[idx]);
        }
    }
    let psi = grads.psi.as_ref().unwrap();
    for idx in 0..psi.w.data().len() {
        check(&mut |p, d| p.psi.w.data_mut()[idx] += d, psi.w.data()[idx]);
    }
    check(&mut |p, d| p.psi.b += d, psi.b);
    for idx in 0..psi.gamma.len() {
        check(&mut |p, d| p.psi.gamma[idx] += d, psi.gamma[idx]);
        check(&mut |p, d| p.psi.beta[idx] += d, psi.beta[idx]);
    }
    let nu = grads.nu.as_ref().unwrap();
    for idx in 0..nu.weights.data().len() {
        check(&mut |p, d| p.nu.weights.data_mut()[idx] += d, nu.weights.data()[idx]);
    }
    for idx in 0..nu.bias.len() {
        check(&mut |p, d| p.nu.bias[idx] += d, nu.bias[idx]);
    }
    worst
}

#[test]
fn acceptance_gradient_correctness() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xacce97);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = 4 + rng.index(13); // <= 16
        let m = 2 + rng.index(7); // <= 8
        let l = 2 + rng.index(4); // <= 5
        let hidden = if rng.bernoulli(0.5) { vec![3 + rng.index(6)] } else { vec![] };
        let cfg = ModelConfig {
            input_dim: d,
            hidden,
            embedding_dim: m,
            class_count: l,
            init_std: 0.3,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        };
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let batch_size = 2 + rng.index(7); // <= 8
        let batch: Vec<Vec<f64>> = (0..batch_size)
            .map(|_| (0..d).map(|_| rng.normal()).collect())
            .collect();
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.index(l)).collect();
        worst = worst.max(finite_difference_worst(&params, &batch, &labels));
    }
    report(
        "gradient-correctness",
        worst <= 1e-4,
        &format!("max relative error {worst:.2e} over 20 configs"),
        t0.elapsed().as_secs_f64(),
        30.0,
    );
}

// ------------------------------------------------------------------ freezing

#[test]
fn acceptance_freezing_contract() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        repetitions: 1,
        server_epochs: 30,
        client_epochs: 30,
        ..ExperimentConfig::default()
    };
    let world = build_world(&cfg, 1001).unwrap();
    let (train, test) = world.targets[0].clone();
    let mut client = ClientState::new(0, client_config(&cfg), train, test);
    client
        .apply_params_message(&Message::ModelFull {
            version: 1,
            params: world.pretrain.params.clone(),
        })
        .unwrap();
    let before = client.model.clone().unwrap();
    let round = RoundConfig {
        k: 5,
        classes: (0..10).collect(),
        epochs: 30,
        lr: 0.1,
        seed: 7,
    };
    client.client_adapt(&round).unwrap();
    let after = client.model.clone().unwrap();
    let phi_same = serialize_extractor(&after.phi) == serialize_extractor(&before.phi);
    let nu_same = serialize_classifier(&after.nu) == serialize_classifier(&before.nu);
    let psi_moved = after.psi != before.psi;
    report(
        "freezing-contract",
        phi_same && nu_same && psi_moved,
        &format!("phi byte-identical: {phi_same}, nu byte-identical: {nu_same}, psi changed: {psi_moved}"),
        t0.elapsed().as_secs_f64(),
        10.0,
    );
}

// ------------------------------------------------------- prototype equations

#[test]
fn acceptance_prototype_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0x9a77);
    let dim = 8;
    let classes = 7;
    let embeddings: Vec<(Vec<f64>, usize)> = (0..400)
        .map(|i| (random_vector(dim, &mut rng), i % classes))
        .collect();
    let set = compute_prototypes(&embeddings).unwrap();

    // Brute-force per-class means.
    let mut max_diff = 0.0f64;
    for class in 0..classes {
        let members: Vec<&Vec<f64>> = embeddings
            .iter()
            .filter(|(_, l)| *l == class)
            .map(|(v, _)| v)
            .collect();
        for d in 0..dim {
            let mean = members.iter().map(|v| v[d]).sum::<f64>() / members.len() as f64;
            max_diff = max_diff.max((set.prototypes[&class].vector[d] - mean).abs());
        }
    }

    // 1000 queries against the exhaustive argmin oracle.
    let mut agree = 0usize;
    for _ in 0..1000 {
        let q = random_vector(dim, &mut rng);
        let (pred, _) = nearest_prototype(&q, &set).unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        for (&c, p) in &set.prototypes {
            let d2: f64 = q
                .iter()
                .zip(&p.vector)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.1 {
                best = (c, d2);
            }
        }
        agree += (pred == best.0) as usize;
    }
    report(
        "prototype-oracle-equivalence",
        max_diff < 1e-12 && agree == 1000,
        &format!("mean max diff {max_diff:.2e}, argmin agreement {agree}/1000"),
        t0.elapsed().as_secs_f64(),
        10.0,
    );
}

// ------------------------------------------------------------ stream sampler

#[test]
fn acceptance_selection_oracle_equivalence() {
    let t0 = Instant::now();
    let dim = 8;
    let mut state = SamplerState::new(dim, SamplerConfig::default()).unwrap();
    let cfg = state.config.clone();
    let mut rng = Rng::new(0x6a11);
    let mut draw = Rng::new(0x6a12);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut sum_outer = Matrix::zeros(dim, dim);
    let mut q = state.q;
    let mut worst_p = 0.0f64;
    for step in 1..=1000usize {
        let tau = random_vector(dim, &mut rng);
        // From-scratch oracle: full re-inversion and re-summation.
        sum_outer.add_assign(&Matrix::outer(&tau, &tau)).unwrap();
        let rate = (kept.len() as f64 / step as f64).max(cfg.rate_floor);
        q = (q * cfg.budget / rate).clamp(cfg.q_min, cfg.q_max);
        let mut cov = Matrix::scaled_identity(dim, cfg.ridge_lambda);
        for v in &kept {
            cov.add_assign(&Matrix::outer(v, v)).unwrap();
        }
        let inv = gauss_inverse(&cov);
        let trace = inv.trace_product(&sum_outer).unwrap() / step as f64;
        let sv = inv.matvec(&tau).unwrap();
        let quad: f64 = tau.iter().zip(&sv).map(|(a, b)| a * b).sum();
        let oracle_p = (q * quad / trace).clamp(0.0, 1.0);

        let decision = observe_embedding(&mut state, &tau, &mut draw).unwrap();
        worst_p = worst_p.max((decision.probability - oracle_p).abs());
        if decision.keep {
            kept.push(tau);
        }
    }

    // Rank-one inverse update against direct inversion.
    let mut worst_sm = 0.0f64;
    for trial in 0..100 {
        let n = 2 + (trial % 15);
        let spd = random_spd(n, &mut rng);
        let inv = gauss_inverse(&spd);
        let v = random_vector(n, &mut rng);
        let updated = sherman_morrison_update(&inv, &v).unwrap();
        let mut direct = spd.clone();
        direct.add_assign(&Matrix::outer(&v, &v)).unwrap();
        let oracle = gauss_inverse(&direct);
        let frobenius: f64 = updated
            .data()
            .iter()
            .zip(oracle.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst_sm = worst_sm.max(frobenius);
    }
    report(
        "selection-oracle-equivalence",
        worst_p < 1e-10 && worst_sm < 1e-8,
        &format!("max p deviation {worst_p:.2e} over 1000 steps, max inverse deviation {worst_sm:.2e}"),
        t0.elapsed().as_secs_f64(),
        60.0,
    );
}

// ------------------------------------------------------- k-scaling and gain

fn sweep_results() -> &'static (SweepReport, Vec<RunMetrics>) {
    static SWEEP: OnceLock<(SweepReport, Vec<RunMetrics>)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.repetitions, 5);
        let (report, runs, _) = sweep_k(&cfg, &[0, 3, 5, 10]).unwrap();
        (report, runs)
    })
}

#[test]
fn acceptance_k_scaling_trend() {
    let t0 = Instant::now();
    let (report, _) = sweep_results();
    let means: Vec<f64> = report.rows.iter().map(|r| r.accuracy_mean).collect();
    let non_decreasing = means.windows(2).all(|w| w[1] >= w[0]);
    let gain = means[3] - means[0];
    self::report(
        "k-scaling-trend",
        non_decreasing && gain >= 0.10,
        &format!(
            "means over k {{0,3,5,10}}: {:.3?}, gain {:.1} points",
            means,
            gain * 100.0
        ),
        t0.elapsed().as_secs_f64(),
        300.0,
    );
}

#[test]
fn acceptance_adaptation_gain() {
    let t0 = Instant::now();
    let (_, runs) = sweep_results();
    let k5 = runs.iter().find(|r| r.k == 5).unwrap();
    let mut wins = 0usize;
    let mut pairs = Vec::new();
    for rep in &k5.reps {
        let adapted = rep.clients[0].accuracy.unwrap();
        let zero = rep.clients[0].zero_shot_accuracy;
        wins += (adapted >= zero) as usize;
        pairs.push((zero, adapted));
    }
    report(
        "adaptation-gain",
        wins >= 4,
        &format!("adapted >= zero-shot in {wins}/5 seeds: {pairs:.3?}"),
        t0.elapsed().as_secs_f64(),
        300.0,
    );
}

// --------------------------------------------------------- protocol soundness

fn random_message(rng: &mut Rng) -> Message {
    let model = |rng: &mut Rng| {
        let cfg = ModelConfig {
            input_dim: 4 + rng.index(4),
            hidden: vec![3 + rng.index(3)],
            embedding_dim: 2 + rng.index(3),
            class_count: 2 + rng.index(3),
            init_std: 0.2,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        };
        ModelParams::init(&cfg, rng).unwrap()
    };
    let protos = |rng: &mut Rng| -> PrototypeSet {
        let dim = 2 + rng.index(4);
        let classes = 1 + rng.index(5);
        let emb: Vec<(Vec<f64>, usize)> = (0..classes * 2)
            .map(|i| (random_vector(dim, rng), i % classes))
            .collect();
        compute_prototypes(&emb).unwrap()
    };
    match rng.index(7) {
        0 => Message::ClientHello(ClientHello {
            client_id: rng.next_u64(),
            has_baseline: rng.bernoulli(0.5),
            baseline_version: rng.next_u64() % 16,
        }),
        1 => Message::ModelFull {
            version: rng.next_u64() % 100,
            params: model(rng),
        },
        2 => {
            let base = model(rng);
            let mut cur = base.clone();
            for v in cur.psi.w.data_mut() {
                *v += rng.normal() * 0.1;
            }
            Message::ModelDelta {
                base_version: 1,
                version: 2,
                groups: fedadapt_core::federation::make_delta(&base, &cur).unwrap(),
            }
        }
        3 => Message::RoundConfig(RoundConfig {
            k: rng.index(11),
            classes: (0..1 + rng.index(8)).collect(),
            epochs: rng.index(200),
            lr: rng.uniform(),
            seed: rng.next_u64(),
        }),
        4 => Message::AdaptedUpload(AdaptedUpload {
            client_id: rng.next_u64(),
            psi: model(rng).psi,
            prototypes: protos(rng),
            support_counts: (0..1 + rng.index(4)).map(|c| (c, rng.index(11))).collect(),
        }),
        5 => Message::SourcePrototypes(protos(rng)),
        _ => Message::Ack {
            code: rng.index(4) as u16,
        },
    }
}

#[test]
fn acceptance_protocol_soundness() {
    let t0 = Instant::now();

    // 1. Message fuzz round-trip, byte-exact re-encoding.
    let mut rng = Rng::new(0xf42);
    let mut fuzz_ok = true;
    for _ in 0..1000 {
        let msg = random_message(&mut rng);
        let frame = encode_message(&msg);
        let back = decode_message(&frame).unwrap();
        fuzz_ok &= back == msg && encode_message(&back) == frame;
    }

    // 2. baseline (+) delta = global, byte-exact, after a real training
    //    history (client adaptation plus aggregation).
    let cfg = ExperimentConfig {
        repetitions: 1,
        server_epochs: 25,
        client_epochs: 15,
        strategy: Strategy::DifferentialSync,
        ..ExperimentConfig::default()
    };
    let world = build_world(&cfg, 2001).unwrap();
    let plans = plans_for(&cfg, world.classes.clone(), 5, 2001);
    let server = ServerState::new(world.pretrain.clone(), Strategy::DifferentialSync, plans[0].clone());
    let (train, test) = world.targets[0].clone();
    let mut clients = vec![{
        let mut c = ClientState::new(0, client_config(&cfg), train, test);
        c.install_baseline(1, world.pretrain.params.clone());
        c
    }];
    let (mut server, _) = run_federation(server, &mut clients, &plans, TransportMode::InProcess).unwrap();
    let hello = ClientHello {
        client_id: 9,
        has_baseline: true,
        baseline_version: 1,
    };
    let reply = transmit_params(&mut server, &hello, Strategy::DifferentialSync).unwrap();
    let delta_ok = match &reply {
        Message::ModelDelta { groups, .. } => {
            let rebuilt = apply_delta(&server.baseline, groups).unwrap();
            fedadapt_core::model::encode_model(&rebuilt)
                == fedadapt_core::model::encode_model(&server.global)
        }
        _ => false,
    };

    // 3. In-process vs socket: bit-identical metrics under equal seeds.
    let transport_cfg = ExperimentConfig {
        repetitions: 1,
        server_epochs: 25,
        client_epochs: 15,
        ..ExperimentConfig::default()
    };
    let (metrics_a, _) = run_experiment(&transport_cfg).unwrap();
    let socket_cfg = ExperimentConfig {
        transport: TransportMode::Socket,
        ..transport_cfg.clone()
    };
    let (mut metrics_b, _) = run_experiment(&socket_cfg).unwrap();
    // The transport label itself legitimately differs.
    let transport_ok = {
        metrics_b.transport = metrics_a.transport.clone();
        metrics_a == metrics_b
    };

    // 4. Strategy equivalence and first-contact byte ordering on the
    //    seeded default run.
    let strat_cfg = ExperimentConfig {
        repetitions: 1,
        server_epochs: 25,
        client_epochs: 15,
        ..ExperimentConfig::default()
    };
    let (strategies, _) = compare_strategies(&strat_cfg).unwrap();
    let by_name = |n: &str| strategies.rows.iter().find(|r| r.strategy == n).unwrap();
    let pre = by_name("pre_configured");
    let diff = by_name("differential_sync");
    let on = by_name("on_demand");
    let ordering_ok = pre.first_contact_bytes < diff.first_contact_bytes
        && diff.first_contact_bytes < on.first_contact_bytes
        && pre.post_aggregation_params_bytes < diff.post_aggregation_params_bytes
        && diff.post_aggregation_params_bytes < on.post_aggregation_params_bytes;
    let strategies_ok = strategies.accuracies_identical && ordering_ok;

    report(
        "protocol-soundness",
        fuzz_ok && delta_ok && transport_ok && strategies_ok,
        &format!(
            "fuzz 1000 byte-exact: {fuzz_ok}, baseline+delta=global: {delta_ok}, \
             transport bit-equality: {transport_ok}, strategies identical + bytes {} < {} < {}: {strategies_ok}",
            pre.first_contact_bytes, diff.first_contact_bytes, on.first_contact_bytes
        ),
        t0.elapsed().as_secs_f64(),
        120.0,
    );
}

// ------------------------------------------------------- upload compactness

#[test]
fn acceptance_upload_compactness() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        repetitions: 1,
        server_epochs: 20,
        client_epochs: 5,
        ..ExperimentConfig::default()
    };
    let world = build_world(&cfg, 3001).unwrap();
    let mut sizes = Vec::new();
    for k in [3usize, 5, 10] {
        let (train, test): (Dataset, Dataset) = world.targets[0].clone();
        let mut client = ClientState::new(0, client_config(&cfg), train, test);
        client
            .apply_params_message(&Message::ModelFull {
                version: 1,
                params: world.pretrain.params.clone(),
            })
            .unwrap();
        let round = RoundConfig {
            k,
            classes: (0..10).collect(),
            epochs: 5,
            lr: 0.1,
            seed: 4,
        };
        let (upload, _) = client.client_adapt(&round).unwrap();
        sizes.push(encode_message(&Message::AdaptedUpload(upload.unwrap())).len());
    }
    report(
        "upload-compactness",
        sizes[0] == sizes[1] && sizes[1] == sizes[2],
        &format!("upload bytes for k in {{3,5,10}}: {sizes:?}"),
        t0.elapsed().as_secs_f64(),
        10.0,
    );
}

// -------------------------------------------------------- sampler budgeting

#[test]
fn acceptance_sampler_budget_tracking() {
    let t0 = Instant::now();
    let dim = 6;
    let budget = 0.2;
    let mut state = SamplerState::new(
        dim,
        SamplerConfig {
            budget,
            ..SamplerConfig::default()
        },
    )
    .unwrap();
    let mut rng = Rng::new(0xd6e7);
    let mut draw = Rng::new(0xd6e8);
    let steps = 10_000usize;
    for _ in 0..steps {
        let tau = random_vector(dim, &mut rng);
        observe_embedding(&mut state, &tau, &mut draw).unwrap();
    }
    let rate = state.selected as f64 / steps as f64;
    let deviation = (rate - budget).abs() / budget;
    report(
        "sampler-budget-tracking",
        deviation <= 0.20,
        &format!("long-run rate {rate:.4} vs budget {budget} (deviation {:.1}%)", deviation * 100.0),
        t0.elapsed().as_secs_f64(),
        60.0,
    );
}
