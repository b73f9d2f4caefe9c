//! Client-server protocol: pre-training, three parameter-transmission
//! strategies, adapter fine-tuning rounds, prototype upstreaming and
//! weighted aggregation, over an in-process channel or TCP.

pub mod client;
pub mod delta;
pub mod message;
pub mod round;
pub mod server;
pub mod transport;

pub use client::{AdaptMetrics, ClientConfig, ClientState};
pub use delta::{apply_delta, make_delta, GroupDelta, GroupTag};
pub use message::{
    decode_message, encode_message, AdaptedUpload, ClientHello, Message, RoundConfig,
    ACK_DONE, ACK_NEED_PROTOTYPES, ACK_OK, ACK_READY,
};
pub use round::{
    run_client_session, run_federation, run_round, ClientOutcome, ClientRoundMetrics,
    FederationRun, RoundRecord, TransportMode,
};
pub use server::{
    fedavg_psi, server_pretrain, transmit_params, PretrainConfig, PretrainOutcome, RoundPlan,
    RoundSummary, ServerState, Strategy,
};
pub use transport::{serve_sessions, InProcessChannel, MessageChannel, TcpChannel};
