use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::overlay::GroupId;
use crate::trace::MessageId;
use crate::transport::ProcessId;

/// Ballot used to arbitrate leadership and log-write permission.
///
/// Ordered lexicographically, counter first, so two replicas of a group never
/// propose equal ballots. A zero counter is the null timestamp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub counter: u64,
    pub replica: u32,
}

impl Timestamp {
    pub const NULL: Timestamp = Timestamp { counter: 0, replica: 0 };

    pub fn new(counter: u64, replica: u32) -> Self {
        Timestamp { counter, replica }
    }

    pub fn is_null(&self) -> bool {
        self.counter == 0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.counter, self.replica)
    }
}

/// Where an ordered message was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Client(u32),
    Parent,
    /// No-op entries produced by the leader itself.
    Internal,
}

/// A multicast message as it sits in an input buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmEntry {
    pub client: ProcessId,
    pub id: MessageId,
    pub dst: BTreeSet<GroupId>,
    pub val: Vec<u8>,
}

impl HmEntry {
    pub fn new(client: ProcessId, id: MessageId, dst: BTreeSet<GroupId>, val: Vec<u8>) -> Self {
        HmEntry { client, id, dst, val }
    }

    /// A reserved entry ordered to let followers deliver the slot before it.
    pub fn noop(leader: ProcessId, id: MessageId) -> Self {
        debug_assert!(id.is_noop());
        HmEntry {
            client: leader,
            id,
            dst: BTreeSet::new(),
            val: Vec::new(),
        }
    }

    pub fn is_noop(&self) -> bool {
        self.id.is_noop()
    }
}

/// One slot of the replicated ordering log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub tmp: Timestamp,
    pub source: Source,
    /// The writer's out-pointers before forwarding `hm`.
    pub slot_out: BTreeMap<GroupId, u64>,
    pub hm: Arc<HmEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Ack,
    Nack,
}

/// Contents of one slot of any shared region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Cell {
    #[default]
    Empty,
    Message(Arc<HmEntry>),
    Log(Arc<LogEntry>),
    Ballot(Timestamp),
    Reply(Timestamp, Ack),
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }

    pub fn message(&self) -> Option<&Arc<HmEntry>> {
        match self {
            Cell::Message(m) => Some(m),
            _ => None,
        }
    }

    pub fn log(&self) -> Option<&Arc<LogEntry>> {
        match self {
            Cell::Log(l) => Some(l),
            _ => None,
        }
    }

    /// The message id a slot carries; zero when empty.
    pub fn id(&self) -> MessageId {
        match self {
            Cell::Message(m) => m.id,
            Cell::Log(l) => l.hm.id,
            _ => MessageId(0),
        }
    }
}

/// Names of the regions each replica exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    /// Input buffer for one client or for the parent group.
    Hm(Source),
    Log,
    /// One ballot slot per group member, indexed by member index.
    Perm,
    /// One reply slot per group member, indexed by member index.
    PermAck,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_order_is_counter_first() {
        assert!(Timestamp::new(2, 0) > Timestamp::new(1, 9));
        assert!(Timestamp::new(1, 2) > Timestamp::new(1, 1));
        assert!(Timestamp::NULL.is_null());
        assert!(Timestamp::new(0, 3).is_null());
        assert!(!Timestamp::new(1, 0).is_null());
    }

    #[test]
    fn empty_cell_has_zero_id() {
        assert_eq!(Cell::Empty.id(), MessageId(0));
        assert_eq!(Cell::Ballot(Timestamp::new(1, 0)).id(), MessageId(0));
        let m = Arc::new(HmEntry::new(
            ProcessId::Client(0),
            MessageId(4),
            BTreeSet::new(),
            vec![],
        ));
        assert_eq!(Cell::Message(m).id(), MessageId(4));
    }
}
