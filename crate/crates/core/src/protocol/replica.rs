use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{members, Cell, HmEntry, LogEntry, ProtocolError, Region, Source, StepCtx, Timestamp};
use crate::overlay::{GroupId, TreeOverlay};
use crate::trace::{EventKind, MessageId, Time};
use crate::transport::{OpStatus, ProcessId, Transport};

#[derive(Debug, Clone)]
pub struct ReplicaConfig {
    /// Idle time after which a leader orders a no-op so followers can
    /// deliver the last real entry.
    pub noop_interval: Time,
    /// How often an idle leader retries bringing lagging replicas up to date.
    pub resync_interval: Time,
    /// Consecutive denied resync attempts before the leader re-runs the
    /// election with a higher ballot.
    pub reelect_after: u32,
    pub buffer_extent: u64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        ReplicaConfig {
            noop_interval: 50,
            resync_interval: 50,
            reelect_after: 3,
            buffer_extent: 65536,
        }
    }
}

/// The private variables of a replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaState {
    /// Next slot to read in each input buffer.
    pub slot_in: BTreeMap<Source, u64>,
    /// Next free slot in each child's parent buffer.
    pub slot_out: BTreeMap<GroupId, u64>,
    /// First undecided offset: the next log slot this replica will decide as leader.
    pub fuo: u64,
    /// Slot to deliver: the next log slot whose delivery is still to be handled.
    pub std: u64,
    /// Highest ballot promised so far.
    pub tmp: Timestamp,
    /// Local estimate of the group leader.
    pub leader: Option<ProcessId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleKind {
    Follower,
    Campaigning,
    CatchingUp,
    Leading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Role {
    Follower,
    /// Waiting for replies to `ballot`.
    Campaigning {
        ballot: Timestamp,
    },
    /// Won `ballot`; repairing the log one slot per step.
    CatchingUp {
        fuo_before: u64,
    },
    Leading,
}

/// Bookkeeping a replica keeps while it holds (or is acquiring) the log.
#[derive(Debug, Clone)]
pub(super) struct Term {
    pub ballot: Timestamp,
    /// Length of the log prefix known to be installed at each member.
    pub synced: BTreeMap<ProcessId, u64>,
    pub unreachable: BTreeSet<ProcessId>,
    pub denied: BTreeMap<ProcessId, u32>,
    pub reelect: bool,
    pub last_order: Time,
    pub last_resync: Time,
}

impl Term {
    pub fn new(ballot: Timestamp, me: ProcessId, members: &[ProcessId], fuo: u64, now: Time) -> Self {
        // Our own log prefix [0, fuo) is decided; other members may lag anywhere.
        let synced = members.iter().map(|&p| (p, if p == me { fuo } else { 0 })).collect();
        Term {
            ballot,
            synced,
            unreachable: BTreeSet::new(),
            denied: BTreeMap::new(),
            reelect: false,
            last_order: now,
            last_resync: now,
        }
    }
}

/// A replica of one group, running the main loop one step at a time.
#[derive(Debug, Clone)]
pub struct Replica {
    pub(super) id: ProcessId,
    pub(super) group: GroupId,
    pub(super) index: u32,
    pub(super) members: Vec<ProcessId>,
    /// A quorum is more than `f` members: a majority.
    pub(super) f: usize,
    pub(super) children: Vec<GroupId>,
    pub(super) child_members: BTreeMap<GroupId, Vec<ProcessId>>,
    pub(super) sources: Vec<Source>,
    pub(super) cfg: ReplicaConfig,
    pub(super) state: ReplicaState,
    pub(super) role: Role,
    pub(super) term: Option<Term>,
    /// Current holder of write access to our log.
    pub(super) granted: Option<ProcessId>,
    pub(super) max_counter_seen: u64,
    pub(super) delivered: u64,
    /// `slot_out` accounts for forwarding exactly the log prefix [0, forwarded).
    pub(super) forwarded: u64,
    pub(super) noops: u64,
    source_cursor: usize,
}

impl Replica {
    pub fn new(
        group: GroupId,
        index: u32,
        tree: &TreeOverlay,
        clients: u32,
        cfg: ReplicaConfig,
    ) -> Result<Self, ProtocolError> {
        let members = members(tree, group)?;
        let children = tree.children(group)?.to_vec();
        let child_members = children
            .iter()
            .map(|&c| Ok((c, super::members(tree, c)?)))
            .collect::<Result<_, ProtocolError>>()?;
        let mut sources: Vec<Source> = (0..clients).map(Source::Client).collect();
        if tree.parent(group)?.is_some() {
            sources.push(Source::Parent);
        }
        let state = ReplicaState {
            slot_in: sources.iter().map(|&s| (s, 0)).collect(),
            slot_out: children.iter().map(|&c| (c, 0)).collect(),
            fuo: 0,
            std: 0,
            tmp: Timestamp::new(0, index),
            leader: None,
        };
        Ok(Replica {
            id: ProcessId::replica(group, index),
            group,
            index,
            f: members.len() / 2,
            members,
            children,
            child_members,
            sources,
            cfg,
            state,
            role: Role::Follower,
            term: None,
            granted: None,
            max_counter_seen: 0,
            delivered: 0,
            forwarded: 0,
            noops: 0,
            source_cursor: 0,
        })
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn state(&self) -> &ReplicaState {
        &self.state
    }

    pub fn role(&self) -> RoleKind {
        match self.role {
            Role::Follower => RoleKind::Follower,
            Role::Campaigning { .. } => RoleKind::Campaigning,
            Role::CatchingUp { .. } => RoleKind::CatchingUp,
            Role::Leading => RoleKind::Leading,
        }
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leading
    }

    /// Number of messages delivered so far.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Runs one step of the main loop. Returns whether anything changed.
    pub fn step<T: Transport<Region, Cell>>(&mut self, ctx: &mut StepCtx<'_, T>) -> Result<bool, ProtocolError> {
        let mut progressed = self.check_permissions(ctx)?;
        let nominated = ctx.oracle == Some(self.id);
        progressed |= match self.role {
            Role::Follower if nominated => {
                self.start_campaign(ctx)?;
                true
            }
            Role::Follower => self.follower_deliver(ctx)?,
            Role::Campaigning { ballot } => {
                let delivered = self.follower_deliver(ctx)?;
                self.poll_campaign(ctx, ballot)? | delivered
            }
            Role::CatchingUp { fuo_before } => {
                self.catchup_step(ctx, fuo_before)?;
                true
            }
            Role::Leading if nominated && self.term.as_ref().is_some_and(|t| t.reelect) => {
                self.start_campaign(ctx)?;
                true
            }
            Role::Leading => self.lead(ctx)?,
        };
        Ok(progressed)
    }

    pub(super) fn demote(&mut self) {
        self.role = Role::Follower;
        self.term = None;
        self.state.leader = None;
    }

    pub(super) fn deliver<T: Transport<Region, Cell>>(&mut self, ctx: &mut StepCtx<'_, T>, hm: &HmEntry) {
        if hm.dst.contains(&self.group) {
            ctx.emit(EventKind::Deliver {
                id: hm.id,
                group: self.group,
                seq: self.delivered,
            });
            self.delivered += 1;
        }
    }

    pub(super) fn log_at<T: Transport<Region, Cell>>(
        &self,
        ctx: &StepCtx<'_, T>,
        slot: u64,
    ) -> Result<Option<Arc<LogEntry>>, ProtocolError> {
        if slot >= self.cfg.buffer_extent {
            return Ok(None);
        }
        Ok(ctx.local_read(Region::Log, slot)?.log().cloned())
    }

    /// Follower delivery: a slot is decided once the slot after it is filled.
    fn follower_deliver<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
    ) -> Result<bool, ProtocolError> {
        let mut progressed = false;
        loop {
            let std = self.state.std;
            let Some(entry) = self.log_at(ctx, std)? else { break };
            if self.log_at(ctx, std + 1)?.is_none() {
                break;
            }
            if entry.source != Source::Internal {
                *self.state.slot_in.entry(entry.source).or_insert(0) += 1;
            }
            self.state.std += 1;
            self.deliver(ctx, &entry.hm);
            progressed = true;
        }
        Ok(progressed)
    }

    /// Leader duties: order the next input, or keep the group moving when idle.
    fn lead<T: Transport<Region, Cell>>(&mut self, ctx: &mut StepCtx<'_, T>) -> Result<bool, ProtocolError> {
        if let Some((source, hm)) = self.next_input(ctx)? {
            *self.state.slot_in.entry(source).or_insert(0) += 1;
            self.order(ctx, source, hm)?;
            return Ok(true);
        }
        let term = self.term.as_ref().expect("leader has a term");
        let idle = ctx.now.saturating_sub(term.last_order) >= self.cfg.noop_interval;
        if idle && self.state.fuo > 0 {
            let last = self.log_at(ctx, self.state.fuo - 1)?;
            if last.is_some_and(|l| !l.hm.is_noop()) {
                self.noops += 1;
                let id = MessageId(
                    MessageId::NOOP_BIT | (u64::from(self.group.0) << 40) | (u64::from(self.index) << 32) | self.noops,
                );
                let hm = Arc::new(HmEntry::noop(self.id, id));
                self.order(ctx, Source::Internal, hm)?;
                return Ok(true);
            }
        }
        self.resync(ctx)
    }

    /// Finds a source whose next input slot holds a message, round-robin.
    fn next_input<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &StepCtx<'_, T>,
    ) -> Result<Option<(Source, Arc<HmEntry>)>, ProtocolError> {
        let n = self.sources.len();
        for k in 0..n {
            let i = (self.source_cursor + k) % n;
            let source = self.sources[i];
            let slot = self.state.slot_in[&source];
            if slot >= self.cfg.buffer_extent {
                continue;
            }
            if let Cell::Message(m) = ctx.local_read(Region::Hm(source), slot)? {
                self.source_cursor = (i + 1) % n;
                return Ok(Some((source, m)));
            }
        }
        Ok(None)
    }

    /// Orders `hm` at slot FUO; on a quorum, delivers locally and forwards
    /// to the children on the way to its destinations.
    fn order<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        source: Source,
        hm: Arc<HmEntry>,
    ) -> Result<(), ProtocolError> {
        let fuo = self.state.fuo;
        if fuo >= self.cfg.buffer_extent {
            return Err(ProtocolError::Invariant {
                at: self.id,
                what: format!("log full at slot {fuo}; raise buffer_extent"),
            });
        }
        let ballot = self.term.as_ref().expect("leader has a term").ballot;
        let entry = Arc::new(LogEntry {
            tmp: ballot,
            source,
            slot_out: self.state.slot_out.clone(),
            hm: Arc::clone(&hm),
        });
        let (count, self_ok) = self.replicate(ctx, fuo, Some(entry))?;
        if count > self.f && self_ok {
            debug_assert_eq!(self.state.std, fuo);
            self.state.std += 1;
            self.deliver(ctx, &hm);
            self.forward(ctx, &hm)?;
            self.state.fuo += 1;
            self.forwarded = self.state.fuo;
            if let Some(t) = self.term.as_mut() {
                t.last_order = ctx.now;
            }
        } else {
            // Someone with a higher ballot revoked our access.
            self.demote();
        }
        Ok(())
    }

    /// Writes `hm` into the parent buffer of every child that leads to a destination.
    fn forward<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        hm: &Arc<HmEntry>,
    ) -> Result<(), ProtocolError> {
        let mut targets = 0;
        for i in 0..self.children.len() {
            let child = self.children[i];
            if !ctx.tree.reaches_any(child, &hm.dst)? {
                continue;
            }
            let slot = self.state.slot_out[&child];
            targets += self.write_child(ctx, child, slot, hm)?;
            self.state.slot_out.insert(child, slot + 1);
        }
        ctx.phase(targets, hm.val.len());
        Ok(())
    }

    pub(super) fn write_child<T: Transport<Region, Cell>>(
        &self,
        ctx: &mut StepCtx<'_, T>,
        child: GroupId,
        slot: u64,
        hm: &Arc<HmEntry>,
    ) -> Result<usize, ProtocolError> {
        let replicas = &self.child_members[&child];
        for &p in replicas {
            ctx.write(
                p,
                Region::Hm(Source::Parent),
                slot,
                Cell::Message(Arc::clone(hm)),
                Some(hm.id),
            )?;
        }
        ctx.emit(EventKind::XBroadcast {
            id: hm.id,
            group: child,
        });
        Ok(replicas.len())
    }

    /// Writes `entry` at `slot` on every member, first replaying whatever
    /// part of our decided prefix each member may be missing. Returns the
    /// number of members that accepted the write and whether we did.
    ///
    /// With `entry = None` only the replay runs (idle resync).
    pub(super) fn replicate<T: Transport<Region, Cell>>(
        &mut self,
        ctx: &mut StepCtx<'_, T>,
        slot: u64,
        entry: Option<Arc<LogEntry>>,
    ) -> Result<(usize, bool), ProtocolError> {
        let mut term = self.term.take().expect("replicate needs a term");
        let result = self.replicate_with(ctx, &mut term, slot, entry);
        self.term = Some(term);
        result
    }

    fn replicate_with<T: Transport<Region, Cell>>(
        &self,
        ctx: &mut StepCtx<'_, T>,
        term: &mut Term,
        slot: u64,
        entry: Option<Arc<LogEntry>>,
    ) -> Result<(usize, bool), ProtocolError> {
        let mut ok = 0;
        let mut self_ok = false;
        let mut issued = 0;
        for &r in &self.members {
            if term.unreachable.contains(&r) {
                continue;
            }
            if entry.is_none() && term.synced[&r] >= slot {
                continue;
            }
            issued += 1;
            let status = self.sync_member(ctx, term, r, slot, entry.as_ref())?;
            match status {
                OpStatus::Ok => {
                    ok += 1;
                    self_ok |= r == self.id;
                    term.denied.remove(&r);
                }
                OpStatus::Denied => {
                    let n = term.denied.entry(r).or_insert(0);
                    *n += 1;
                    if *n >= self.cfg.reelect_after {
                        term.reelect = true;
                    }
                }
                OpStatus::Unreachable => {
                    term.unreachable.insert(r);
                }
            }
        }
        let bytes = entry.as_ref().map_or(0, |e| e.hm.val.len());
        ctx.phase(issued, bytes);
        Ok((ok, self_ok))
    }

    fn sync_member<T: Transport<Region, Cell>>(
        &self,
        ctx: &mut StepCtx<'_, T>,
        term: &mut Term,
        r: ProcessId,
        slot: u64,
        entry: Option<&Arc<LogEntry>>,
    ) -> Result<OpStatus, ProtocolError> {
        let mut next = term.synced[&r];
        while next < slot {
            let Some(decided) = self.log_at(ctx, next)? else {
                return Err(ProtocolError::Invariant {
                    at: self.id,
                    what: format!("hole at slot {next} below FUO {slot}"),
                });
            };
            let mut copy = (*decided).clone();
            copy.tmp = term.ballot;
            let id = copy.hm.id;
            let status = ctx.write(r, Region::Log, next, Cell::Log(Arc::new(copy)), Some(id))?;
            if status != OpStatus::Ok {
                return Ok(status);
            }
            next += 1;
            term.synced.insert(r, next);
        }
        let Some(entry) = entry else {
            return Ok(OpStatus::Ok);
        };
        let status = ctx.write(r, Region::Log, slot, Cell::Log(Arc::clone(entry)), Some(entry.hm.id))?;
        if status == OpStatus::Ok {
            term.synced.insert(r, slot + 1);
        }
        Ok(status)
    }

    /// Idle leader: periodically replay the decided prefix to lagging members.
    fn resync<T: Transport<Region, Cell>>(&mut self, ctx: &mut StepCtx<'_, T>) -> Result<bool, ProtocolError> {
        let fuo = self.state.fuo;
        let term = self.term.as_ref().expect("leader has a term");
        if ctx.now.saturating_sub(term.last_resync) < self.cfg.resync_interval {
            return Ok(false);
        }
        let lagging = self
            .members
            .iter()
            .any(|r| !term.unreachable.contains(r) && term.synced[r] < fuo);
        if !lagging {
            return Ok(false);
        }
        let before: u64 = term.synced.values().sum();
        self.term.as_mut().unwrap().last_resync = ctx.now;
        self.replicate(ctx, fuo, None)?;
        let term = self.term.as_ref().unwrap();
        let after: u64 = term.synced.values().sum();
        Ok(after > before || term.reelect)
    }
}
