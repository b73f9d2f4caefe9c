//! Experiment runner CLI: pre-training, socket server/client, in-process
//! simulation, k sweeps, strategy comparison and embedding export.

use clap::{Parser, Subcommand};
use fedadapt_core::data::{read_dataset, split, write_dataset, write_manifest_csv};
use fedadapt_core::error::Error;
use fedadapt_core::experiment::{
    apply_overrides, build_world, client_config, client_target_split, compare_strategies,
    embeddings_csv, metrics_csv, plans_for, render_config, run_experiment, strategy_csv,
    summary_json, sweep_csv, sweep_k, ExperimentConfig, Timing,
};
use fedadapt_core::federation::{
    run_client_session, serve_sessions, ClientState, ServerState, TcpChannel,
};
use fedadapt_core::model::{decode_model, encode_model, model_text_dump, ModelParams};
use fedadapt_core::numerics::Rng;
use fedadapt_core::prototypes::{encode_prototype_set, prototype_set_csv};
use fedadapt_core::sampler::telemetry_csv;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fedadapt", about = "Federated few-shot domain adaptation at CPU scale")]
struct Cli {
    /// Config file in the sectioned key-value format; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override config keys, e.g. --set experiment.k=10 (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the source model and write it plus the source prototypes.
    Pretrain {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Pre-train, then serve federation rounds over a TCP socket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7000")]
        addr: String,
        /// Expected clients per round (defaults to the configured domains).
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run one client session against a running server.
    Client {
        #[arg(long)]
        addr: String,
        #[arg(long, default_value_t = 0)]
        client_id: usize,
        /// Load local target data from a dataset container instead of
        /// generating it from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Baseline model file (enables pre-configured / differential sync).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Full in-process (or socket) experiment with metrics files.
    Simulate {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the experiment across several k values.
    SweepK {
        #[arg(long, default_value = "0,3,5,10", value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Same seeded run under all three transmission strategies.
    CompareStrategies {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Export embeddings of client 0's target test set to CSV.
    ExportEmbeddings {
        /// Model stage: baseline, pretrained or finetuned.
        #[arg(long, default_value = "pretrained")]
        stage: String,
        #[arg(long, default_value = "out/embeddings.csv")]
        out: PathBuf,
    },
    /// Write the effective config (defaults + file + overrides) to stdout.
    ShowConfig,
    /// Generate the configured datasets and write them as containers.
    ExportData {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Scarcity { .. }
        | Error::Stratification { .. }
        | Error::StreamExhausted(_)
        | Error::Empty(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io(_) | Error::Protocol(_) | Error::Decode(_) => 5,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> fedadapt_core::Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path)?,
        None => String::new(),
    };
    apply_overrides(&text, &cli.overrides)
}

fn ensure_dir(dir: &Path) -> fedadapt_core::Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write(path: &Path, content: &str) -> fedadapt_core::Result<()> {
    fs::write(path, content)?;
    Ok(())
}

fn print_timing(timing: &Timing) {
    eprintln!("wall clock: {:.2}s", timing.total_seconds);
}

fn cmd_pretrain(cfg: &ExperimentConfig, out_dir: &Path) -> fedadapt_core::Result<()> {
    ensure_dir(out_dir)?;
    let world = build_world(cfg, cfg.seed)?;
    fs::write(out_dir.join("model.bin"), encode_model(&world.pretrain.params))?;
    fs::write(
        out_dir.join("source_protos.bin"),
        encode_prototype_set(&world.pretrain.source_protos),
    )?;
    write(out_dir.join("model.txt").as_path(), &model_text_dump(&world.pretrain.params))?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in world.pretrain.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{e},{l}\n"));
    }
    write(out_dir.join("pretrain_loss.csv").as_path(), &curve)?;
    println!(
        "pretrained {} epochs, final loss {:.6}, wrote {}",
        world.pretrain.loss_curve.len(),
        world.pretrain.loss_curve.last().copied().unwrap_or(f64::NAN),
        out_dir.display()
    );
    Ok(())
}

fn cmd_serve(
    cfg: &ExperimentConfig,
    addr: &str,
    clients: Option<usize>,
    out_dir: Option<&Path>,
) -> fedadapt_core::Result<()> {
    let world = build_world(cfg, cfg.seed)?;
    let plans = plans_for(cfg, world.classes.clone(), cfg.k, cfg.seed);
    let mut server = ServerState::new(world.pretrain.clone(), cfg.strategy, plans[0].clone());
    let listener = std::net::TcpListener::bind(addr)?;
    let bound = listener.local_addr()?;
    let clients_per_round = clients.unwrap_or(cfg.client_domains.len());
    println!("serving on {bound}: {} round(s) x {clients_per_round} client(s)", plans.len());
    for (i, plan) in plans.iter().enumerate() {
        server.plan = plan.clone();
        let failures = serve_sessions(&listener, &mut server, clients_per_round)?;
        for (c, f) in failures.iter().enumerate() {
            if let Some(err) = f {
                eprintln!("round {i} session {c} failed: {err}");
            }
        }
        let summary = server.finish_round()?;
        println!(
            "round {i}: version {} aggregated={} uploads={} fused_classes={}",
            summary.version, summary.aggregated, summary.uploads, summary.fused_classes
        );
    }
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        fs::write(dir.join("model_final.bin"), encode_model(&server.global))?;
        if let Some(fused) = &server.fused_protos {
            write(dir.join("fused_protos.csv").as_path(), &prototype_set_csv(fused))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_client(
    cfg: &ExperimentConfig,
    addr: &str,
    client_id: usize,
    data: Option<&Path>,
    baseline: Option<&Path>,
    out_dir: Option<&Path>,
) -> fedadapt_core::Result<()> {
    let (train, test) = match data {
        Some(path) => {
            let ds = read_dataset(path)?;
            let mut rng = Rng::new(cfg.seed);
            split(&ds, (1.0 - cfg.test_fraction, cfg.test_fraction), &mut rng)?
        }
        None => client_target_split(cfg, cfg.seed, client_id)?,
    };
    let mut client = ClientState::new(client_id as u64, client_config(cfg), train, test);
    if let Some(path) = baseline {
        let params = decode_model(&fs::read(path)?)?;
        client.install_baseline(1, params);
    }
    let mut channel = TcpChannel::connect(addr)?;
    let metrics = run_client_session(&mut client, &mut channel)?;
    println!(
        "client {client_id}: accuracy {:.4}, {} bytes down, {} bytes up",
        metrics.accuracy, metrics.bytes_from_server, metrics.bytes_to_server
    );
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        if let Some(protos) = &client.protos {
            write(
                dir.join(format!("client{client_id}_protos.csv")).as_path(),
                &prototype_set_csv(protos),
            )?;
        }
        if !metrics.sampler_telemetry.is_empty() {
            write(
                dir.join(format!("client{client_id}_sampler.csv")).as_path(),
                &telemetry_csv(&metrics.sampler_telemetry),
            )?;
        }
    }
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> fedadapt_core::Result<()> {
    ensure_dir(out_dir)?;
    let (metrics, timing) = run_experiment(cfg)?;
    write(out_dir.join("metrics.csv").as_path(), &metrics_csv(&metrics))?;
    write(out_dir.join("summary.json").as_path(), &summary_json(&metrics, &timing))?;
    for c in &metrics.clients {
        println!(
            "client {}: accuracy {:.4} +- {:.4} (zero-shot {:.4})",
            c.client_id, c.accuracy_mean, c.accuracy_std, c.zero_shot_mean
        );
    }
    // Sampler telemetry per (rep, client) when stream sampling ran.
    for rep in &metrics.reps {
        for c in &rep.clients {
            if !c.sampler_telemetry.is_empty() {
                write(
                    out_dir
                        .join(format!("sampler_rep{}_client{}.csv", rep.rep, c.client_id))
                        .as_path(),
                    &telemetry_csv(&c.sampler_telemetry),
                )?;
            }
        }
    }
    print_timing(&timing);
    Ok(())
}

fn cmd_sweep_k(cfg: &ExperimentConfig, ks: &[usize], out_dir: &Path) -> fedadapt_core::Result<()> {
    ensure_dir(out_dir)?;
    let (report, runs, timing) = sweep_k(cfg, ks)?;
    write(out_dir.join("sweep_k.csv").as_path(), &sweep_csv(&report))?;
    for run in &runs {
        write(
            out_dir.join(format!("metrics_k{}.csv", run.k)).as_path(),
            &metrics_csv(run),
        )?;
    }
    for row in &report.rows {
        println!(
            "k={}: accuracy {:.4} +- {:.4} (zero-shot {:.4})",
            row.k, row.accuracy_mean, row.accuracy_std, row.zero_shot_mean
        );
    }
    print_timing(&timing);
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig, out_dir: &Path) -> fedadapt_core::Result<()> {
    ensure_dir(out_dir)?;
    let (report, timing) = compare_strategies(cfg)?;
    write(out_dir.join("strategies.csv").as_path(), &strategy_csv(&report))?;
    for row in &report.rows {
        println!(
            "{}: first contact {} B, post-aggregation params {} B, accuracy {:.4}",
            row.strategy, row.first_contact_bytes, row.post_aggregation_params_bytes, row.accuracy_mean
        );
    }
    println!("accuracies identical across strategies: {}", report.accuracies_identical);
    print_timing(&timing);
    Ok(())
}

fn cmd_export_embeddings(
    cfg: &ExperimentConfig,
    stage: &str,
    out: &Path,
) -> fedadapt_core::Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let world = build_world(cfg, cfg.seed)?;
    let (_, test) = &world.targets[0];
    let params: ModelParams = match stage {
        "baseline" => {
            let mut rng = Rng::new(cfg.seed);
            ModelParams::init(&cfg.model_config(), &mut rng)?
        }
        "pretrained" => world.pretrain.params.clone(),
        "finetuned" => {
            let plans = plans_for(cfg, world.classes.clone(), cfg.k, cfg.seed);
            let (train, test) = world.targets[0].clone();
            let mut client = ClientState::new(0, client_config(cfg), train, test);
            client.install_baseline(1, world.pretrain.params.clone());
            let full = fedadapt_core::federation::Message::ModelFull {
                version: 1,
                params: world.pretrain.params.clone(),
            };
            client.apply_params_message(&full)?;
            let round = fedadapt_core::federation::RoundConfig {
                k: plans[0].k,
                classes: plans[0].classes.clone(),
                epochs: plans[0].epochs,
                lr: plans[0].lr,
                seed: plans[0].seed,
            };
            client.client_adapt(&round)?;
            client.model.clone().expect("model installed")
        }
        other => {
            return Err(Error::Config(format!(
                "unknown stage '{other}' (expected baseline, pretrained or finetuned)"
            )))
        }
    };
    let csv = embeddings_csv(&params, test, stage)?;
    write(out, &csv)?;
    println!("wrote {} rows to {}", test.len(), out.display());
    Ok(())
}

fn cmd_export_data(cfg: &ExperimentConfig, out_dir: &Path) -> fedadapt_core::Result<()> {
    ensure_dir(out_dir)?;
    let world = build_world(cfg, cfg.seed)?;
    let mut full_source = world.source_train.clone();
    full_source.samples.extend(world.source_test.samples.iter().cloned());
    write_dataset(&out_dir.join("source.bin"), &full_source)?;
    write_manifest_csv(&out_dir.join("source.csv"), &full_source)?;
    for (i, (train, test)) in world.targets.iter().enumerate() {
        let mut full = train.clone();
        full.samples.extend(test.samples.iter().cloned());
        write_dataset(&out_dir.join(format!("target{i}.bin")), &full)?;
        write_manifest_csv(&out_dir.join(format!("target{i}.csv")), &full)?;
    }
    println!("wrote datasets to {}", out_dir.display());
    Ok(())
}

fn run(cli: &Cli) -> fedadapt_core::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Pretrain { out_dir } => cmd_pretrain(&cfg, out_dir),
        Command::Serve { addr, clients, out_dir } => {
            cmd_serve(&cfg, addr, *clients, out_dir.as_deref())
        }
        Command::Client { addr, client_id, data, baseline, out_dir } => cmd_client(
            &cfg,
            addr,
            *client_id,
            data.as_deref(),
            baseline.as_deref(),
            out_dir.as_deref(),
        ),
        Command::Simulate { out_dir } => cmd_simulate(&cfg, out_dir),
        Command::SweepK { ks, out_dir } => cmd_sweep_k(&cfg, ks, out_dir),
        Command::CompareStrategies { out_dir } => cmd_compare(&cfg, out_dir),
        Command::ExportEmbeddings { stage, out } => cmd_export_embeddings(&cfg, stage, out),
        Command::ShowConfig => {
            print!("{}", render_config(&cfg));
            Ok(())
        }
        Command::ExportData { out_dir } => cmd_export_data(&cfg, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
