//! Protocol messages and their wire codec.
//!
//! Frame layout: 4-byte big-endian length prefix covering the 1-byte type
//! tag plus the versioned payload. Payload integers and floats are
//! little-endian. Every variant round-trips byte-exactly.

use crate::error::{Error, Result};
use crate::federation::delta::GroupDelta;
use crate::model::{AdaptationParams, ModelParams};
use crate::model::{decode_model, encode_model};
use crate::model::{decode_adaptation, encode_adaptation};
use crate::prototypes::{decode_prototype_set, encode_prototype_set, PrototypeSet};
use crate::wire::{ByteReader, ByteWriter};
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const PROTOCOL_VERSION: u8 = 1;

/// Ack codes.
pub const ACK_OK: u16 = 0;
pub const ACK_READY: u16 = 1;
pub const ACK_NEED_PROTOTYPES: u16 = 2;
pub const ACK_DONE: u16 = 3;

/// Client introduction at session start.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientHello {
    pub client_id: u64,
    pub has_baseline: bool,
    pub baseline_version: u64,
}

/// Fine-tuned adapter parameters plus prototypes; never carries samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedUpload {
    pub client_id: u64,
    pub psi: AdaptationParams,
    pub prototypes: PrototypeSet,
    pub support_counts: BTreeMap<usize, usize>,
}

impl AdaptedUpload {
    pub fn total_support(&self) -> usize {
        self.support_counts.values().sum()
    }
}

/// Round parameters pushed from server to client.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub k: usize,
    pub classes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Protocol unit exchanged between server and clients.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ClientHello(ClientHello),
    ModelFull {
        version: u64,
        params: ModelParams,
    },
    ModelDelta {
        base_version: u64,
        version: u64,
        groups: Vec<GroupDelta>,
    },
    RoundConfig(RoundConfig),
    AdaptedUpload(AdaptedUpload),
    SourcePrototypes(PrototypeSet),
    Ack {
        code: u16,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::ClientHello(_) => "client_hello",
            Message::ModelFull { .. } => "model_full",
            Message::ModelDelta { .. } => "model_delta",
            Message::RoundConfig(_) => "round_config",
            Message::AdaptedUpload(_) => "adapted_upload",
            Message::SourcePrototypes(_) => "source_prototypes",
            Message::Ack { .. } => "ack",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Message::ClientHello(_) => 1,
            Message::ModelFull { .. } => 2,
            Message::ModelDelta { .. } => 3,
            Message::RoundConfig(_) => 4,
            Message::AdaptedUpload(_) => 5,
            Message::SourcePrototypes(_) => 6,
            Message::Ack { .. } => 7,
        }
    }
}

fn payload(msg: &Message) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_u8(PROTOCOL_VERSION);
    match msg {
        Message::ClientHello(h) => {
            w.put_u64(h.client_id);
            w.put_u8(h.has_baseline as u8);
            w.put_u64(h.baseline_version);
        }
        Message::ModelFull { version, params } => {
            w.put_u64(*version);
            let blob = encode_model(params);
            w.put_u64(blob.len() as u64);
            w.put_bytes(&blob);
        }
        Message::ModelDelta {
            base_version,
            version,
            groups,
        } => {
            w.put_u64(*base_version);
            w.put_u64(*version);
            w.put_u8(groups.len() as u8);
            for g in groups {
                w.put_u8(g.group as u8);
                w.put_u64(g.bits.len() as u64);
                for b in &g.bits {
                    w.put_u64(*b);
                }
            }
        }
        Message::RoundConfig(rc) => {
            w.put_u32(rc.k as u32);
            w.put_u32(rc.classes.len() as u32);
            for c in &rc.classes {
                w.put_u32(*c as u32);
            }
            w.put_u32(rc.epochs as u32);
            w.put_f64(rc.lr);
            w.put_u64(rc.seed);
        }
        Message::AdaptedUpload(u) => {
            w.put_u64(u.client_id);
            let psi = encode_adaptation(&u.psi);
            w.put_u64(psi.len() as u64);
            w.put_bytes(&psi);
            let protos = encode_prototype_set(&u.prototypes);
            w.put_u64(protos.len() as u64);
            w.put_bytes(&protos);
            w.put_u32(u.support_counts.len() as u32);
            for (&class, &count) in &u.support_counts {
                w.put_u32(class as u32);
                w.put_u64(count as u64);
            }
        }
        Message::SourcePrototypes(set) => {
            let blob = encode_prototype_set(set);
            w.put_u64(blob.len() as u64);
            w.put_bytes(&blob);
        }
        Message::Ack { code } => {
            w.put_u16(*code);
        }
    }
    w.into_bytes()
}

/// Encode a full frame: big-endian length, type tag, payload.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let body = payload(msg);
    let mut frame = Vec::with_capacity(5 + body.len());
    frame.extend_from_slice(&(1 + body.len() as u32).to_be_bytes());
    frame.push(msg.tag());
    frame.extend_from_slice(&body);
    frame
}

fn parse_payload(tag: u8, bytes: &[u8]) -> Result<Message> {
    let mut r = ByteReader::new(bytes);
    let version = r.take_u8()?;
    if version != PROTOCOL_VERSION {
        return Err(Error::Decode(format!("unsupported protocol version {version}")));
    }
    let msg = match tag {
        1 => Message::ClientHello(ClientHello {
            client_id: r.take_u64()?,
            has_baseline: r.take_u8()? != 0,
            baseline_version: r.take_u64()?,
        }),
        2 => {
            let version = r.take_u64()?;
            let len = r.take_u64()? as usize;
            let params = decode_model(r.take_bytes(len)?)?;
            Message::ModelFull { version, params }
        }
        3 => {
            let base_version = r.take_u64()?;
            let version = r.take_u64()?;
            let count = r.take_u8()? as usize;
            let mut groups = Vec::with_capacity(count);
            for _ in 0..count {
                let group = crate::federation::delta::GroupTag::from_u8(r.take_u8()?)?;
                let n = r.take_u64()? as usize;
                let mut bits = Vec::with_capacity(n);
                for _ in 0..n {
                    bits.push(r.take_u64()?);
                }
                groups.push(GroupDelta { group, bits });
            }
            Message::ModelDelta {
                base_version,
                version,
                groups,
            }
        }
        4 => {
            let k = r.take_u32()? as usize;
            let n = r.take_u32()? as usize;
            let classes = (0..n)
                .map(|_| r.take_u32().map(|c| c as usize))
                .collect::<Result<_>>()?;
            Message::RoundConfig(RoundConfig {
                k,
                classes,
                epochs: r.take_u32()? as usize,
                lr: r.take_f64()?,
                seed: r.take_u64()?,
            })
        }
        5 => {
            let client_id = r.take_u64()?;
            let psi_len = r.take_u64()? as usize;
            let psi = decode_adaptation(r.take_bytes(psi_len)?)?;
            let proto_len = r.take_u64()? as usize;
            let prototypes = decode_prototype_set(r.take_bytes(proto_len)?)?;
            let n = r.take_u32()? as usize;
            let mut support_counts = BTreeMap::new();
            for _ in 0..n {
                let class = r.take_u32()? as usize;
                let count = r.take_u64()? as usize;
                support_counts.insert(class, count);
            }
            Message::AdaptedUpload(AdaptedUpload {
                client_id,
                psi,
                prototypes,
                support_counts,
            })
        }
        6 => {
            let len = r.take_u64()? as usize;
            Message::SourcePrototypes(decode_prototype_set(r.take_bytes(len)?)?)
        }
        7 => Message::Ack { code: r.take_u16()? },
        other => return Err(Error::Decode(format!("unknown message tag {other}"))),
    };
    r.finish()?;
    Ok(msg)
}

/// Decode exactly one full frame.
pub fn decode_message(frame: &[u8]) -> Result<Message> {
    if frame.len() < 5 {
        return Err(Error::Decode("frame shorter than header".into()));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if frame.len() != 4 + len {
        return Err(Error::Decode(format!(
            "frame length {} does not match prefix {}",
            frame.len() - 4,
            len
        )));
    }
    parse_payload(frame[4], &frame[5..])
}

/// Read one framed message from a stream.
pub fn read_message(reader: &mut impl Read) -> Result<(Message, u64)> {
    let mut header = [0u8; 4];
    reader.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len == 0 {
        return Err(Error::Decode("empty frame".into()));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    Ok((parse_payload(body[0], &body[1..])?, 4 + len as u64))
}

/// Write one framed message to a stream; returns bytes written.
pub fn write_message(writer: &mut impl Write, msg: &Message) -> Result<u64> {
    let frame = encode_message(msg);
    writer.write_all(&frame)?;
    Ok(frame.len() as u64)
}
