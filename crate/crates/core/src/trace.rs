//! Global execution trace: the record consumed by the checker.
//!
//! Traces are stored as JSON lines. The first line is a header carrying
//! the topology; every following line is one [`TraceEvent`].

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlay::{GroupId, TopologyFile};
use crate::transport::{OpStatus, ProcessId};

/// Simulated time in ticks.
pub type Time = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl MessageId {
    /// Ids with this bit set are reserved for internal no-op log entries.
    pub const NOOP_BIT: u64 = 1 << 63;

    pub fn is_noop(&self) -> bool {
        self.0 & Self::NOOP_BIT != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_noop() {
            write!(f, "noop#{:x}", self.0 & !Self::NOOP_BIT)
        } else {
            write!(f, "m{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    /// A client handed `id` to the replicas of `lca`.
    Multicast {
        id: MessageId,
        dst: BTreeSet<GroupId>,
        lca: GroupId,
    },
    /// `id` was placed in an input buffer of `group` (by a client or a parent leader).
    XBroadcast {
        id: MessageId,
        group: GroupId,
    },
    /// The actor delivered `id`; `seq` counts the actor's deliveries from 0.
    Deliver {
        id: MessageId,
        group: GroupId,
        seq: u64,
    },
    /// A remote operation issued on behalf of message `id`.
    RemoteOp {
        id: MessageId,
        target: ProcessId,
        op: OpKind,
        status: OpStatus,
    },
    Crash,
    /// The actor finished catching up and now leads `group` with `ballot`.
    LeaderChange {
        group: GroupId,
        ballot: (u64, u32),
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: Time,
    pub actor: ProcessId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub seed: u64,
    pub clients: u32,
    pub topology: TopologyFile,
}

impl TraceHeader {
    pub const FORMAT: &'static str = "tram-trace/1";

    pub fn new(seed: u64, clients: u32, topology: TopologyFile) -> Self {
        TraceHeader {
            format: Self::FORMAT.to_string(),
            seed,
            clients,
            topology,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty (missing header line)")]
    MissingHeader,
    #[error("unsupported trace format {0:?}")]
    Format(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered event list plus the topology it was recorded on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl DeliveryTrace {
    pub fn new(header: TraceHeader) -> Self {
        DeliveryTrace {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, time: Time, actor: ProcessId, kind: EventKind) {
        self.events.push(TraceEvent { time, actor, kind });
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Json { line: 1, source })?;
        if header.format != TraceHeader::FORMAT {
            return Err(TraceError::Format(header.format));
        }
        let mut trace = DeliveryTrace::new(header);
        for (i, line) in lines {
            let e = serde_json::from_str(&line?).map_err(|source| TraceError::Json { line: i + 1, source })?;
            trace.events.push(e);
        }
        Ok(trace)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::read_jsonl(text.as_bytes())
    }

    /// Delivered message ids of `p`, in delivery order.
    pub fn deliveries_of(&self, p: ProcessId) -> Vec<MessageId> {
        self.events
            .iter()
            .filter(|e| e.actor == p)
            .filter_map(|e| match e.kind {
                EventKind::Deliver { id, .. } => Some(id),
                _ => None,
            })
            .collect()
    }

    pub fn delivery_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Shape, TopologyFile};

    #[test]
    fn event_lines_use_stable_field_names() {
        let e = TraceEvent {
            time: 12,
            actor: ProcessId::replica(GroupId(1), 0),
            kind: EventKind::Deliver {
                id: MessageId(5),
                group: GroupId(1),
                seq: 0,
            },
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"time":12,"actor":"g1.r0","kind":"deliver","id":5,"group":1,"seq":0}"#
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = DeliveryTrace::new(TraceHeader::new(3, 1, TopologyFile::shape(Shape::Depth, 2, 3)));
        t.push(
            0,
            ProcessId::Client(0),
            EventKind::Multicast {
                id: MessageId(1),
                dst: [GroupId(0), GroupId(1)].into(),
                lca: GroupId(0),
            },
        );
        t.push(
            4,
            ProcessId::Client(0),
            EventKind::RemoteOp {
                id: MessageId(1),
                target: ProcessId::replica(GroupId(0), 2),
                op: OpKind::Write,
                status: OpStatus::Ok,
            },
        );
        t.push(9, ProcessId::replica(GroupId(0), 1), EventKind::Crash);
        let text = t.to_jsonl();
        assert_eq!(DeliveryTrace::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn rejects_headerless_input() {
        assert!(matches!(DeliveryTrace::from_jsonl(""), Err(TraceError::MissingHeader)));
        assert!(DeliveryTrace::from_jsonl("{\"time\":1}\n").is_err());
    }

    #[test]
    fn noop_ids_are_tagged() {
        assert!(MessageId(MessageId::NOOP_BIT | 3).is_noop());
        assert!(!MessageId(3).is_noop());
        assert!(MessageId(0).is_empty());
    }
}
