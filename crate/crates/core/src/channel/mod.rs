//! Infrastructure-to-vehicle link: message encoding with exact byte
//! accounting, lossy grid compression, latency models, and BPS.

pub mod codec;

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::sensing::{FeatureFlow, FeatureGrid, PointCloud};
use crate::seeds;
use codec::{DecodedGrid, GridKind};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Arrivals within this many seconds of `t_now` count as arrived.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    RawPoints,
    Detections,
    Feature,
    FeatureWithFlow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Content {
    RawPoints(PointCloud),
    Detections(Vec<Detection>),
    Feature(FeatureGrid),
    FeatureWithFlow(FeatureGrid, FeatureFlow),
}

impl Content {
    pub fn kind(&self) -> MessageKind {
        match self {
            Content::RawPoints(_) => MessageKind::RawPoints,
            Content::Detections(_) => MessageKind::Detections,
            Content::Feature(_) => MessageKind::Feature,
            Content::FeatureWithFlow(..) => MessageKind::FeatureWithFlow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Quantize and run-length code grids; raw points and boxes are never compressed.
    pub enabled: bool,
    /// Reject payloads larger than this many bytes.
    pub max_payload_bytes: Option<usize>,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_payload_bytes: None,
        }
    }
}

/// A payload as the receiver sees it, after the wire roundtrip.
#[derive(Debug, Clone)]
pub struct ChannelMessage {
    pub kind: MessageKind,
    /// Bytes actually sent.
    pub payload_bytes: usize,
    /// Bytes the same content takes in the uncompressed encoding.
    pub uncompressed_bytes: usize,
    pub t_send: f64,
    pub t_arrive: f64,
    /// Per-sender sequence number.
    pub index: u64,
    pub content: Arc<Content>,
}

impl ChannelMessage {
    pub fn log_entry(&self) -> LogEntry {
        LogEntry {
            t_send: self.t_send,
            t_arrive: self.t_arrive,
            kind: self.kind,
            payload_bytes: self.payload_bytes,
            uncompressed_bytes: self.uncompressed_bytes,
        }
    }
}

/// Serializes `content`, decodes it back as the receiver would, and records sizes.
pub fn encode_message(
    content: &Content,
    compression: &CompressionConfig,
    t_send: f64,
    index: u64,
) -> Result<ChannelMessage> {
    let grid_bytes = |g: &FeatureGrid| g.spec.len() * 4;
    let (payload_bytes, uncompressed_bytes, decoded) = match content {
        Content::RawPoints(pc) => {
            let wire = codec::encode_points(pc);
            let back = codec::decode_points(&wire, pc.frame, pc.timestamp)?;
            (wire.len(), wire.len(), Content::RawPoints(back))
        }
        Content::Detections(d) => {
            let wire = codec::encode_detections(d);
            let back = codec::decode_detections(&wire)?;
            (wire.len(), wire.len(), Content::Detections(back))
        }
        Content::Feature(g) => {
            let (n, back) = roundtrip_grid(g, compression)?;
            (n, grid_bytes(g), Content::Feature(back))
        }
        Content::FeatureWithFlow(g, f) => {
            let (n0, g_back) = roundtrip_grid(g, compression)?;
            let as_grid = FeatureGrid {
                spec: f.spec,
                values: f.values.clone(),
                timestamp: f.timestamp,
                frame: f.frame,
            };
            let (n1, f_back) = roundtrip_flow(&as_grid, compression)?;
            (n0 + n1, grid_bytes(g) + f.spec.len() * 4, Content::FeatureWithFlow(g_back, f_back))
        }
    };
    if let Some(cap) = compression.max_payload_bytes {
        if payload_bytes > cap {
            return Err(Error::Capacity { bytes: payload_bytes, cap });
        }
    }
    Ok(ChannelMessage {
        kind: content.kind(),
        payload_bytes,
        uncompressed_bytes,
        t_send,
        t_arrive: t_send,
        index,
        content: Arc::new(decoded),
    })
}

fn roundtrip_grid(g: &FeatureGrid, c: &CompressionConfig) -> Result<(usize, FeatureGrid)> {
    if c.enabled {
        let wire = compress_grid(g);
        match decompress_grid(&wire)? {
            DecodedGrid::Feature(back) => Ok((wire.len(), back)),
            DecodedGrid::Flow(_) => Err(Error::Decode("expected a feature grid".into())),
        }
    } else {
        let wire = codec::encode_raw_grid(&g.values);
        let values = codec::decode_raw_grid(&wire, &g.spec)?;
        Ok((wire.len(), FeatureGrid { values, ..g.clone() }))
    }
}

fn roundtrip_flow(g: &FeatureGrid, c: &CompressionConfig) -> Result<(usize, FeatureFlow)> {
    if c.enabled {
        let wire = codec::compress(&g.spec, &g.values, g.timestamp, g.frame, GridKind::Flow);
        match decompress_grid(&wire)? {
            DecodedGrid::Flow(back) => Ok((wire.len(), back)),
            DecodedGrid::Feature(_) => Err(Error::Decode("expected a flow grid".into())),
        }
    } else {
        let wire = codec::encode_raw_grid(&g.values);
        let values = codec::decode_raw_grid(&wire, &g.spec)?;
        Ok((
            wire.len(),
            FeatureFlow {
                spec: g.spec,
                values,
                timestamp: g.timestamp,
                frame: g.frame,
            },
        ))
    }
}

pub fn compress_grid(g: &FeatureGrid) -> Vec<u8> {
    codec::compress(&g.spec, &g.values, g.timestamp, g.frame, GridKind::Feature)
}

pub fn compress_flow(f: &FeatureFlow) -> Vec<u8> {
    codec::compress(&f.spec, &f.values, f.timestamp, f.frame, GridKind::Flow)
}

pub fn decompress_grid(bytes: &[u8]) -> Result<DecodedGrid> {
    codec::decompress(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyKind {
    Constant,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub kind: LatencyKind,
    pub base_ms: f64,
    pub jitter_ms: f64,
    pub seed: u64,
}

impl LatencyModel {
    pub fn constant(base_ms: f64) -> Self {
        Self {
            kind: LatencyKind::Constant,
            base_ms,
            jitter_ms: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_ms >= 0.0 && self.jitter_ms >= 0.0) {
            return Err(Error::Config("latency base_ms and jitter_ms must be >= 0".into()));
        }
        Ok(())
    }

    /// Transport delay in seconds for the message with sequence number `index`.
    pub fn delay_s(&self, index: u64) -> f64 {
        let ms = match self.kind {
            LatencyKind::Constant => self.base_ms,
            LatencyKind::UniformRandom => {
                let extra = if self.jitter_ms > 0.0 {
                    seeds::rng(&[seeds::STREAM_LATENCY, self.seed, index]).random_range(0.0..=self.jitter_ms)
                } else {
                    0.0
                };
                self.base_ms + extra
            }
        };
        ms / 1000.0
    }
}

pub fn transmit(mut m: ChannelMessage, lm: &LatencyModel) -> ChannelMessage {
    m.t_arrive = m.t_send + lm.delay_s(m.index);
    m
}

/// The most recently captured message that has arrived by `t_now`.
pub fn latest_available(messages: &[ChannelMessage], t_now: f64) -> Option<&ChannelMessage> {
    messages
        .iter()
        .filter(|m| m.t_arrive <= t_now + TIME_EPS)
        .fold(None, |best: Option<&ChannelMessage>, m| match best {
            Some(b) if b.t_send > m.t_send => Some(b),
            _ => Some(m),
        })
}

/// Audit record of one transmitted message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t_send: f64,
    pub t_arrive: f64,
    pub kind: MessageKind,
    pub payload_bytes: usize,
    pub uncompressed_bytes: usize,
}

/// Bytes per second of sent payload over `duration_s`.
pub fn bps<'a>(entries: impl IntoIterator<Item = &'a LogEntry>, duration_s: f64) -> f64 {
    let total: usize = entries.into_iter().map(|e| e.payload_bytes).sum();
    total as f64 / duration_s
}

pub fn bps_uncompressed<'a>(entries: impl IntoIterator<Item = &'a LogEntry>, duration_s: f64) -> f64 {
    let total: usize = entries.into_iter().map(|e| e.uncompressed_bytes).sum();
    total as f64 / duration_s
}

/// Receiver-side view of one run's link: the full audit log plus the
/// messages that can still be selected.
#[derive(Debug, Clone)]
pub struct Channel {
    latency: LatencyModel,
    log: Vec<LogEntry>,
    pending: Vec<ChannelMessage>,
    next_index: u64,
}

impl Channel {
    pub fn new(latency: LatencyModel) -> Self {
        Self {
            latency,
            log: Vec::new(),
            pending: Vec::new(),
            next_index: 0,
        }
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn send(&mut self, content: &Content, compression: &CompressionConfig, t_send: f64) -> Result<()> {
        let m = encode_message(content, compression, t_send, self.next_index)?;
        self.send_message(m);
        Ok(())
    }

    /// Sends an already encoded message, reindexed into this channel's sequence.
    /// Lets one encoding feed several channels with different latency models.
    pub fn send_message(&mut self, mut m: ChannelMessage) {
        m.index = self.next_index;
        self.next_index += 1;
        let m = transmit(m, &self.latency);
        self.log.push(m.log_entry());
        self.pending.push(m);
    }

    /// Latest arrived message at `t_now`; older messages are discarded since
    /// they can never be selected again.
    pub fn receive(&mut self, t_now: f64) -> Option<ChannelMessage> {
        let chosen = latest_available(&self.pending, t_now)?.clone();
        self.pending.retain(|m| m.t_send >= chosen.t_send);
        Some(chosen)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn into_log(self) -> Vec<LogEntry> {
        self.log
    }
}

pub fn write_log_jsonl<W: Write>(entries: &[LogEntry], mut w: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
