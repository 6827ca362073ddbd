//! Client and replica state machines.
//!
//! Both are advanced one discrete step at a time through a [`StepCtx`],
//! which carries the transport, the overlay, the current time and the
//! oracle's current nomination, and collects the trace events and the
//! batches of remote operations the step issued.

mod catchup;
mod client;
mod election;
mod replica;
mod types;

use thiserror::Error;

use crate::overlay::{GroupId, OverlayError, TreeOverlay};
use crate::trace::{EventKind, MessageId, OpKind, Time, TraceEvent};
use crate::transport::{
    OpStatus, Permission, ProcessId, RegionId, RemoteOpResult, SharedMemory, Transport, TransportError,
};

pub use client::Client;
pub use replica::{Replica, ReplicaConfig, ReplicaState, RoleKind};
pub use types::{Ack, Cell, HmEntry, LogEntry, Region, Source, Timestamp};

/// The concrete simulated memory the protocol runs on.
pub type Memory = SharedMemory<Region, Cell>;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("invalid message {id}: {reason}")]
    InvalidMessage { id: MessageId, reason: String },
    #[error("protocol invariant violated at {at}: {what}")]
    Invariant { at: ProcessId, what: String },
}

/// Remote operations issued concurrently and awaited together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Phase {
    pub targets: usize,
    pub bytes: usize,
}

/// Per-step environment handed to a state machine.
pub struct StepCtx<'a, T> {
    actor: ProcessId,
    pub transport: &'a T,
    pub tree: &'a TreeOverlay,
    pub now: Time,
    /// `leader(g)` for the actor's group at `now`; unused by clients.
    pub oracle: Option<ProcessId>,
    events: Vec<TraceEvent>,
    phases: Vec<Phase>,
}

impl<'a, T: Transport<Region, Cell>> StepCtx<'a, T> {
    pub fn new(actor: ProcessId, transport: &'a T, tree: &'a TreeOverlay, now: Time) -> Self {
        StepCtx {
            actor,
            transport,
            tree,
            now,
            oracle: None,
            events: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn with_oracle(mut self, leader: ProcessId) -> Self {
        self.oracle = Some(leader);
        self
    }

    pub fn actor(&self) -> ProcessId {
        self.actor
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn into_parts(self) -> (Vec<TraceEvent>, Vec<Phase>) {
        (self.events, self.phases)
    }

    /// Records an event unless the actor has crashed in the meantime.
    pub fn emit(&mut self, kind: EventKind) {
        if self.transport.is_alive(self.actor) {
            self.events.push(TraceEvent {
                time: self.now,
                actor: self.actor,
                kind,
            });
        }
    }

    pub fn phase(&mut self, targets: usize, bytes: usize) {
        if targets > 0 {
            self.phases.push(Phase { targets, bytes });
        }
    }

    pub(crate) fn write(
        &mut self,
        target: ProcessId,
        region: Region,
        slot: u64,
        cell: Cell,
        tag: Option<MessageId>,
    ) -> Result<OpStatus, ProtocolError> {
        let res = self
            .transport
            .remote_write(self.actor, &RegionId::new(target, region), slot, cell)?;
        if let Some(id) = tag {
            self.emit(EventKind::RemoteOp {
                id,
                target,
                op: OpKind::Write,
                status: res.status,
            });
        }
        Ok(res.status)
    }

    pub(crate) fn read(
        &mut self,
        target: ProcessId,
        region: Region,
        slot: u64,
    ) -> Result<RemoteOpResult<Cell>, ProtocolError> {
        Ok(self
            .transport
            .remote_read(self.actor, &RegionId::new(target, region), slot)?)
    }

    pub(crate) fn local_read(&self, region: Region, slot: u64) -> Result<Cell, ProtocolError> {
        Ok(self.transport.local_read(&RegionId::new(self.actor, region), slot)?)
    }

    pub(crate) fn local_write(&self, region: Region, slot: u64, cell: Cell) -> Result<(), ProtocolError> {
        Ok(self
            .transport
            .local_write(&RegionId::new(self.actor, region), slot, cell)?)
    }
}

pub fn members(tree: &TreeOverlay, g: GroupId) -> Result<Vec<ProcessId>, OverlayError> {
    Ok((0..tree.replicas(g)?).map(|i| ProcessId::replica(g, i)).collect())
}

/// Registers every process and region of a deployment.
///
/// Each replica exposes one input buffer per client plus one for its parent
/// group, its log, and the `perm` / `perm_ack` arrays used for elections.
/// Logs start with no remote writer; a replica grants access when it
/// acknowledges a candidate's ballot.
pub fn register_memory(mem: &mut Memory, tree: &TreeOverlay, clients: u32, extent: u64) -> Result<(), ProtocolError> {
    for c in 0..clients {
        mem.register_process(ProcessId::Client(c));
    }
    for g in tree.groups() {
        let group = members(tree, g)?;
        let parent = match tree.parent(g)? {
            Some(p) => Some(members(tree, p)?),
            None => None,
        };
        let n = group.len() as u64;
        for &p in &group {
            mem.register_region(p, Region::Log, extent, Permission::none())?;
            mem.register_region(p, Region::Perm, n, Permission::write_only(group.iter().copied()))?;
            mem.register_region(p, Region::PermAck, n, Permission::write_only(group.iter().copied()))?;
            for c in 0..clients {
                mem.register_region(
                    p,
                    Region::Hm(Source::Client(c)),
                    extent,
                    Permission::write_only([ProcessId::Client(c)]),
                )?;
            }
            if let Some(parent) = &parent {
                mem.register_region(
                    p,
                    Region::Hm(Source::Parent),
                    extent,
                    Permission::write_only(parent.iter().copied()),
                )?;
            }
        }
    }
    Ok(())
}
