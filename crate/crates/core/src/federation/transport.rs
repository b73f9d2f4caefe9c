//! Request/response channels between client and server: an in-process
//! channel and a TCP channel. Both serialize every message through the
//! same frame codec, so byte counts and server behavior are identical.

use crate::error::{Error, Result};
use crate::federation::message::{decode_message, encode_message, Message};
use crate::federation::server::{ServerSession, ServerState};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

/// Client-side view of a session channel.
pub trait MessageChannel {
    fn exchange(&mut self, msg: &Message) -> Result<Message>;
    fn bytes_sent(&self) -> u64;
    fn bytes_received(&self) -> u64;
    /// Size of the most recent response frame.
    fn last_response_bytes(&self) -> u64;
}

/// Direct in-process channel; frames still round-trip through the codec.
pub struct InProcessChannel<'a> {
    session: ServerSession<'a>,
    sent: u64,
    received: u64,
    last: u64,
}

impl<'a> InProcessChannel<'a> {
    pub fn new(server: &'a mut ServerState) -> Self {
        InProcessChannel {
            session: ServerSession::new(server),
            sent: 0,
            received: 0,
            last: 0,
        }
    }
}

impl MessageChannel for InProcessChannel<'_> {
    fn exchange(&mut self, msg: &Message) -> Result<Message> {
        let frame = encode_message(msg);
        self.sent += frame.len() as u64;
        let reply = self.session.handle_frame(&frame)?;
        self.received += reply.len() as u64;
        self.last = reply.len() as u64;
        decode_message(&reply)
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }

    fn last_response_bytes(&self) -> u64 {
        self.last
    }
}

fn read_frame(reader: &mut impl Read) -> Result<Vec<u8>> {
    let mut header = [0u8; 4];
    reader.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len == 0 {
        return Err(Error::Decode("empty frame".into()));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&header);
    reader.read_exact(&mut frame[4..])?;
    Ok(frame)
}

/// TCP channel speaking the framed protocol.
pub struct TcpChannel {
    stream: TcpStream,
    sent: u64,
    received: u64,
    last: u64,
}

impl TcpChannel {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel {
            stream,
            sent: 0,
            received: 0,
            last: 0,
        })
    }
}

impl MessageChannel for TcpChannel {
    fn exchange(&mut self, msg: &Message) -> Result<Message> {
        let frame = encode_message(msg);
        self.stream.write_all(&frame)?;
        self.sent += frame.len() as u64;
        let reply = read_frame(&mut self.stream)?;
        self.received += reply.len() as u64;
        self.last = reply.len() as u64;
        decode_message(&reply)
    }

    fn bytes_sent(&self) -> u64 {
        self.sent
    }

    fn bytes_received(&self) -> u64 {
        self.received
    }

    fn last_response_bytes(&self) -> u64 {
        self.last
    }
}

/// Serve one accepted connection until the session completes or the peer
/// disconnects.
pub fn serve_connection(stream: &mut TcpStream, server: &mut ServerState) -> Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    stream.set_nodelay(true)?;
    let mut session = ServerSession::new(server);
    while !session.is_done() {
        let frame = read_frame(stream)?;
        let reply = session.handle_frame(&frame)?;
        stream.write_all(&reply)?;
    }
    Ok(())
}

/// Accept and serve exactly `sessions` connections, one at a time.
/// Session failures are tolerated (client churn); the count still
/// advances because each client connects once.
pub fn serve_sessions(
    listener: &TcpListener,
    server: &mut ServerState,
    sessions: usize,
) -> Result<Vec<Option<String>>> {
    let mut failures = Vec::with_capacity(sessions);
    for _ in 0..sessions {
        let (mut stream, _) = listener.accept()?;
        match serve_connection(&mut stream, server) {
            Ok(()) => failures.push(None),
            Err(e) => failures.push(Some(e.to_string())),
        }
    }
    Ok(failures)
}
