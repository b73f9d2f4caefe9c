//! End-to-end round orchestration over either transport: hello, parameter
//! transmission, optional sampler fill, local adaptation, upload, and the
//! collect-then-aggregate barrier.

use crate::error::{Error, Result};
use crate::federation::client::ClientState;
use crate::federation::message::{
    ClientHello, Message, ACK_DONE, ACK_NEED_PROTOTYPES, ACK_OK, ACK_READY,
};
use crate::federation::server::{RoundPlan, RoundSummary, ServerState};
use crate::federation::transport::{InProcessChannel, MessageChannel, TcpChannel};
use std::net::TcpListener;

/// Which channel carries the round protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    InProcess,
    Socket,
}

impl TransportMode {
    pub fn parse(s: &str) -> Result<TransportMode> {
        match s {
            "in_process" => Ok(TransportMode::InProcess),
            "socket" => Ok(TransportMode::Socket),
            other => Err(Error::Config(format!(
                "unknown transport '{other}' (expected in_process or socket)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransportMode::InProcess => "in_process",
            TransportMode::Socket => "socket",
        }
    }
}

/// Everything one client reports about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundMetrics {
    pub client_id: u64,
    pub accuracy: f64,
    pub pre_loss: Option<f64>,
    pub post_loss: Option<f64>,
    pub epoch_losses: Vec<f64>,
    pub bytes_to_server: u64,
    pub bytes_from_server: u64,
    /// Frame size of the parameter-transmission response.
    pub params_response_bytes: u64,
    pub params_response_kind: String,
    pub labels_requested: usize,
    pub labels_discarded: usize,
    pub sampler_telemetry: Vec<crate::sampler::TelemetryRow>,
}

/// Per-client result; failed clients are recorded and the round proceeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub client_id: u64,
    pub outcome: std::result::Result<ClientRoundMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub clients: Vec<ClientOutcome>,
    pub summary: RoundSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationRun {
    pub rounds: Vec<RoundRecord>,
    pub final_version: u64,
}

/// Drive one full client session over an established channel.
pub fn run_client_session(
    client: &mut ClientState,
    channel: &mut dyn MessageChannel,
) -> Result<ClientRoundMetrics> {
    let hello = Message::ClientHello(ClientHello {
        client_id: client.client_id,
        has_baseline: client.baseline.is_some(),
        baseline_version: client.baseline.as_ref().map(|(v, _)| *v).unwrap_or(0),
    });
    let params_msg = channel.exchange(&hello)?;
    let params_response_bytes = channel.last_response_bytes();
    let params_response_kind = params_msg.kind().to_string();
    client.apply_params_message(&params_msg)?;

    let reply = channel.exchange(&Message::Ack { code: ACK_READY })?;
    let Message::RoundConfig(round) = reply else {
        return Err(Error::Protocol(format!(
            "expected round config, got {}",
            reply.kind()
        )));
    };

    if round.k == 0 {
        let reply = channel.exchange(&Message::Ack { code: ACK_NEED_PROTOTYPES })?;
        let Message::SourcePrototypes(protos) = reply else {
            return Err(Error::Protocol(format!(
                "expected source prototypes, got {}",
                reply.kind()
            )));
        };
        client.set_source_prototypes(protos);
    }

    let (upload, adapt) = client.client_adapt(&round)?;
    let reply = match upload {
        Some(u) => channel.exchange(&Message::AdaptedUpload(u))?,
        None => channel.exchange(&Message::Ack { code: ACK_DONE })?,
    };
    match reply {
        Message::Ack { code: ACK_OK } => {}
        other => {
            return Err(Error::Protocol(format!(
                "expected final ack, got {}",
                other.kind()
            )))
        }
    }

    let accuracy = client.evaluate_accuracy()?;
    Ok(ClientRoundMetrics {
        client_id: client.client_id,
        accuracy,
        pre_loss: adapt.pre_loss,
        post_loss: adapt.post_loss,
        epoch_losses: adapt.epoch_losses,
        bytes_to_server: channel.bytes_sent(),
        bytes_from_server: channel.bytes_received(),
        params_response_bytes,
        params_response_kind,
        labels_requested: adapt.labels_requested,
        labels_discarded: adapt.labels_discarded,
        sampler_telemetry: adapt.sampler_telemetry,
    })
}

/// One in-process round: sequential sessions, then the aggregation
/// barrier.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    plan: RoundPlan,
) -> Result<RoundRecord> {
    server.plan = plan;
    let mut outcomes = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        let mut channel = InProcessChannel::new(server);
        let outcome = run_client_session(client, &mut channel)
            .map_err(|e| e.to_string());
        outcomes.push(ClientOutcome {
            client_id: client.client_id,
            outcome,
        });
    }
    let summary = server.finish_round()?;
    Ok(RoundRecord {
        clients: outcomes,
        summary,
    })
}

/// Run a full schedule of rounds over the chosen transport. The server is
/// moved in and handed back so the socket path can own it on a thread.
pub fn run_federation(
    mut server: ServerState,
    clients: &mut [ClientState],
    plans: &[RoundPlan],
    mode: TransportMode,
) -> Result<(ServerState, FederationRun)> {
    match mode {
        TransportMode::InProcess => {
            let mut rounds = Vec::with_capacity(plans.len());
            for plan in plans {
                rounds.push(run_round(&mut server, clients, plan.clone())?);
            }
            let final_version = server.version;
            Ok((server, FederationRun { rounds, final_version }))
        }
        TransportMode::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?.to_string();
            let plans_for_server = plans.to_vec();
            let clients_per_round = clients.len();
            let server_thread = std::thread::spawn(move || -> Result<(ServerState, Vec<RoundSummary>)> {
                let mut summaries = Vec::with_capacity(plans_for_server.len());
                for plan in plans_for_server {
                    server.plan = plan;
                    crate::federation::transport::serve_sessions(
                        &listener,
                        &mut server,
                        clients_per_round,
                    )?;
                    summaries.push(server.finish_round()?);
                }
                Ok((server, summaries))
            });

            let mut per_round_clients = Vec::with_capacity(plans.len());
            for _ in plans {
                let mut outcomes = Vec::with_capacity(clients.len());
                for client in clients.iter_mut() {
                    let outcome = TcpChannel::connect(&addr)
                        .and_then(|mut channel| run_client_session(client, &mut channel))
                        .map_err(|e| e.to_string());
                    outcomes.push(ClientOutcome {
                        client_id: client.client_id,
                        outcome,
                    });
                }
                per_round_clients.push(outcomes);
            }

            let (server, summaries) = server_thread
                .join()
                .map_err(|_| Error::Protocol("server thread panicked".into()))??;
            let rounds = per_round_clients
                .into_iter()
                .zip(summaries)
                .map(|(clients, summary)| RoundRecord { clients, summary })
                .collect();
            let final_version = server.version;
            Ok((server, FederationRun { rounds, final_version }))
        }
    }
}
