//! Simulated shared memory with per-region permissions.
//!
//! Every process owns a set of named regions, each a fixed-extent array of
//! entries. Other processes access them with one-sided [`Transport::remote_read`]
//! and [`Transport::remote_write`] operations, gated by the region's
//! [`Permission`]. The owner touches its own memory with local reads and
//! writes, which are never gated.
//!
//! All operations on one owner's memory linearize behind a single lock, so
//! a write racing a permission change is either fully applied or fully
//! denied, and a reader never sees a torn entry. On real RDMA hardware the
//! same contract comes from cache-line sized canaries written last in each
//! entry; a verbs backend would implement [`Transport`] with that scheme.
//!
//! Channels are reliable and FIFO: operations complete synchronously in
//! issue order.
//!
//! Regions selected with [`SharedMemory::defer_writes`] model write latency:
//! a remote write is admitted and permission-checked when issued, but its
//! value lands only once the issuing step is sealed with a completion time
//! and the clock reaches it. Only regions whose permissions never change
//! may be deferred, or a late landing could slip past a revocation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlay::GroupId;

/// A client or a replica. Replicas belong to exactly one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ProcessId {
    Client(u32),
    Replica { group: GroupId, index: u32 },
}

impl ProcessId {
    pub fn replica(group: GroupId, index: u32) -> Self {
        ProcessId::Replica { group, index }
    }

    pub fn group(&self) -> Option<GroupId> {
        match self {
            ProcessId::Client(_) => None,
            ProcessId::Replica { group, .. } => Some(*group),
        }
    }

    pub fn is_client(&self) -> bool {
        matches!(self, ProcessId::Client(_))
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessId::Client(i) => write!(f, "c{i}"),
            ProcessId::Replica { group, index } => write!(f, "g{}.r{}", group.0, index),
        }
    }
}

impl FromStr for ProcessId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed process id {s:?}");
        if let Some(rest) = s.strip_prefix('c') {
            return rest.parse().map(ProcessId::Client).map_err(|_| bad());
        }
        let rest = s.strip_prefix('g').ok_or_else(bad)?;
        let (g, r) = rest.split_once(".r").ok_or_else(bad)?;
        Ok(ProcessId::Replica {
            group: GroupId(g.parse().map_err(|_| bad())?),
            index: r.parse().map_err(|_| bad())?,
        })
    }
}

impl From<ProcessId> for String {
    fn from(p: ProcessId) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ProcessId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Names a region: its owner plus a per-owner unique name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId<K> {
    pub owner: ProcessId,
    pub name: K,
}

impl<K> RegionId<K> {
    pub fn new(owner: ProcessId, name: K) -> Self {
        RegionId { owner, name }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    None,
    Read,
    Write,
    ReadWrite,
}

/// Disjoint reader, writer and reader-writer sets of a region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Permission {
    readers: BTreeSet<ProcessId>,
    writers: BTreeSet<ProcessId>,
    readwriters: BTreeSet<ProcessId>,
}

impl Permission {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn readwrite<I: IntoIterator<Item = ProcessId>>(subjects: I) -> Self {
        let mut p = Self::default();
        for s in subjects {
            p.set(s, AccessMode::ReadWrite);
        }
        p
    }

    pub fn write_only<I: IntoIterator<Item = ProcessId>>(subjects: I) -> Self {
        let mut p = Self::default();
        for s in subjects {
            p.set(s, AccessMode::Write);
        }
        p
    }

    /// Moves `subject` into exactly the set named by `mode`.
    pub fn set(&mut self, subject: ProcessId, mode: AccessMode) {
        self.readers.remove(&subject);
        self.writers.remove(&subject);
        self.readwriters.remove(&subject);
        match mode {
            AccessMode::None => {}
            AccessMode::Read => {
                self.readers.insert(subject);
            }
            AccessMode::Write => {
                self.writers.insert(subject);
            }
            AccessMode::ReadWrite => {
                self.readwriters.insert(subject);
            }
        }
        debug_assert!(self.is_disjoint());
    }

    pub fn mode_of(&self, subject: ProcessId) -> AccessMode {
        if self.readwriters.contains(&subject) {
            AccessMode::ReadWrite
        } else if self.writers.contains(&subject) {
            AccessMode::Write
        } else if self.readers.contains(&subject) {
            AccessMode::Read
        } else {
            AccessMode::None
        }
    }

    pub fn can_read(&self, p: ProcessId) -> bool {
        self.readers.contains(&p) || self.readwriters.contains(&p)
    }

    pub fn can_write(&self, p: ProcessId) -> bool {
        self.writers.contains(&p) || self.readwriters.contains(&p)
    }

    pub fn readers(&self) -> &BTreeSet<ProcessId> {
        &self.readers
    }

    pub fn writers(&self) -> &BTreeSet<ProcessId> {
        &self.writers
    }

    pub fn readwriters(&self) -> &BTreeSet<ProcessId> {
        &self.readwriters
    }

    pub fn is_disjoint(&self) -> bool {
        self.readers.is_disjoint(&self.writers)
            && self.writers.is_disjoint(&self.readwriters)
            && self.readers.is_disjoint(&self.readwriters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpStatus {
    Ok,
    Denied,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteOpResult<E> {
    pub status: OpStatus,
    /// Present only for successful reads.
    pub value: Option<E>,
}

impl<E> RemoteOpResult<E> {
    fn status(status: OpStatus) -> Self {
        RemoteOpResult { status, value: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == OpStatus::Ok
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("region {name} of {owner} is already registered")]
    DuplicateRegion { owner: ProcessId, name: String },
    #[error("region extent must be positive")]
    EmptyExtent,
    #[error("no region {name} registered at {owner}")]
    UnknownRegion { owner: ProcessId, name: String },
    #[error("slot {slot} is outside region {name} of {owner} (extent {extent}); size buffers to the workload")]
    OutOfExtent {
        owner: ProcessId,
        name: String,
        slot: u64,
        extent: u64,
    },
    #[error("only the owner may change permissions of {owner}'s regions (caller {caller})")]
    NotOwner { owner: ProcessId, caller: ProcessId },
}

/// The operations the protocol needs from a shared-memory substrate.
pub trait Transport<K, E> {
    fn remote_write(
        &self,
        actor: ProcessId,
        region: &RegionId<K>,
        slot: u64,
        entry: E,
    ) -> Result<RemoteOpResult<E>, TransportError>;

    fn remote_read(
        &self,
        actor: ProcessId,
        region: &RegionId<K>,
        slot: u64,
    ) -> Result<RemoteOpResult<E>, TransportError>;

    /// Owner access to its own memory; never permission-checked.
    fn local_read(&self, region: &RegionId<K>, slot: u64) -> Result<E, TransportError>;

    fn local_write(&self, region: &RegionId<K>, slot: u64, entry: E) -> Result<(), TransportError>;

    fn set_permission(
        &self,
        caller: ProcessId,
        region: &RegionId<K>,
        subject: ProcessId,
        mode: AccessMode,
    ) -> Result<(), TransportError>;

    fn is_alive(&self, p: ProcessId) -> bool;
}

/// A successful remote write, kept when auditing is enabled.
#[derive(Debug, Clone)]
pub struct WriteRecord<K, E> {
    pub actor: ProcessId,
    pub region: RegionId<K>,
    pub slot: u64,
    pub entry: E,
}

struct Region<E> {
    extent: u64,
    // Grown lazily; slots past the end read as the zero entry.
    cells: Vec<E>,
    perm: Permission,
}

struct Host<K, E> {
    alive: AtomicBool,
    // Remaining remote operations before an armed crash fires.
    crash_budget: Mutex<Option<u32>>,
    regions: Mutex<BTreeMap<K, Region<E>>>,
}

impl<K, E> Host<K, E> {
    fn new() -> Self {
        Host {
            alive: AtomicBool::new(true),
            crash_budget: Mutex::new(None),
            regions: Mutex::new(BTreeMap::new()),
        }
    }
}

type DeferPredicate<K> = Box<dyn Fn(&K) -> bool + Send + Sync>;

/// In-process implementation of [`Transport`].
///
/// Registration takes `&mut self`; everything after setup takes `&self` so
/// the memory can be shared by a multi-threaded runner.
pub struct SharedMemory<K, E> {
    hosts: BTreeMap<ProcessId, Host<K, E>>,
    audit: Option<Mutex<Vec<WriteRecord<K, E>>>>,
    deferred: Option<DeferPredicate<K>>,
    in_flight: Mutex<InFlight<K, E>>,
}

/// Deferred writes: unsealed ones per issuer, sealed ones by landing time.
struct InFlight<K, E> {
    seq: u64,
    open: BTreeMap<ProcessId, Vec<WriteRecord<K, E>>>,
    sealed: BTreeMap<(u64, u64), WriteRecord<K, E>>,
}

impl<K, E> Default for SharedMemory<K, E> {
    fn default() -> Self {
        SharedMemory {
            hosts: BTreeMap::new(),
            audit: None,
            deferred: None,
            in_flight: Mutex::new(InFlight {
                seq: 0,
                open: BTreeMap::new(),
                sealed: BTreeMap::new(),
            }),
        }
    }
}

impl<K, E> SharedMemory<K, E>
where
    K: Ord + Clone + fmt::Debug,
    E: Clone + Default,
{
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every successful remote write from now on.
    pub fn enable_audit(&mut self) {
        self.audit = Some(Mutex::new(Vec::new()));
    }

    pub fn audit_log(&self) -> Vec<WriteRecord<K, E>> {
        self.audit.as_ref().map(|a| a.lock().clone()).unwrap_or_default()
    }

    /// Defers remote writes to regions whose name satisfies `pred`.
    pub fn defer_writes(&mut self, pred: impl Fn(&K) -> bool + Send + Sync + 'static) {
        self.deferred = Some(Box::new(pred));
    }

    /// Fixes the landing time of every deferred write `actor` issued since its last seal.
    pub fn seal(&self, actor: ProcessId, at: u64) {
        let mut f = self.in_flight.lock();
        let writes = f.open.remove(&actor).unwrap_or_default();
        for w in writes {
            f.seq += 1;
            let key = (at, f.seq);
            f.sealed.insert(key, w);
        }
    }

    /// Lands every sealed write due by `now`, in landing-time then issue order.
    pub fn advance(&self, now: u64) {
        loop {
            let due = {
                let mut f = self.in_flight.lock();
                match f.sealed.first_key_value() {
                    Some((&(at, _), _)) if at <= now => f.sealed.pop_first().map(|(_, w)| w),
                    _ => None,
                }
            };
            let Some(w) = due else { break };
            let _ = self.with_region(&w.region, |r| Self::store(r, w.slot, w.entry));
        }
    }

    /// Deferred writes issued but not yet landed.
    pub fn in_flight(&self) -> usize {
        let f = self.in_flight.lock();
        f.sealed.len() + f.open.values().map(Vec::len).sum::<usize>()
    }

    /// Makes `p` known to the transport even if it owns no memory (clients).
    pub fn register_process(&mut self, p: ProcessId) {
        self.hosts.entry(p).or_insert_with(Host::new);
    }

    pub fn register_region(
        &mut self,
        owner: ProcessId,
        name: K,
        extent: u64,
        initial: Permission,
    ) -> Result<RegionId<K>, TransportError> {
        if extent == 0 {
            return Err(TransportError::EmptyExtent);
        }
        let host = self.hosts.entry(owner).or_insert_with(Host::new);
        let mut regions = host.regions.lock();
        if regions.contains_key(&name) {
            return Err(TransportError::DuplicateRegion {
                owner,
                name: format!("{name:?}"),
            });
        }
        regions.insert(
            name.clone(),
            Region {
                extent,
                cells: Vec::new(),
                perm: initial,
            },
        );
        Ok(RegionId::new(owner, name))
    }

    pub fn permission(&self, region: &RegionId<K>) -> Result<Permission, TransportError> {
        self.with_region(region, |r| r.perm.clone())
    }

    /// Crash-stop: `p` takes no further steps and its memory becomes unreachable.
    pub fn crash(&self, p: ProcessId) {
        if let Some(h) = self.hosts.get(&p) {
            h.alive.store(false, Ordering::SeqCst);
        }
    }

    /// Lets `p` issue `ops` more remote operations, then crashes it on the next
    /// one. Used to crash a process part-way through a batch of writes.
    pub fn crash_after_ops(&self, p: ProcessId, ops: u32) {
        if let Some(h) = self.hosts.get(&p) {
            *h.crash_budget.lock() = Some(ops);
        }
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.hosts.keys().copied()
    }

    fn with_region<R>(&self, region: &RegionId<K>, f: impl FnOnce(&mut Region<E>) -> R) -> Result<R, TransportError> {
        let unknown = || TransportError::UnknownRegion {
            owner: region.owner,
            name: format!("{:?}", region.name),
        };
        let host = self.hosts.get(&region.owner).ok_or_else(unknown)?;
        let mut regions = host.regions.lock();
        let r = regions.get_mut(&region.name).ok_or_else(unknown)?;
        Ok(f(r))
    }

    fn store(r: &mut Region<E>, slot: u64, entry: E) {
        let i = slot as usize;
        if r.cells.len() <= i {
            r.cells.resize_with(i + 1, E::default);
        }
        r.cells[i] = entry;
    }

    fn check_extent(region: &RegionId<K>, r: &Region<E>, slot: u64) -> Result<(), TransportError> {
        if slot >= r.extent {
            return Err(TransportError::OutOfExtent {
                owner: region.owner,
                name: format!("{:?}", region.name),
                slot,
                extent: r.extent,
            });
        }
        Ok(())
    }

    /// Charges one remote operation to `actor`. Returns false if the actor is
    /// (or just became) crashed and must not perform it.
    fn admit(&self, actor: ProcessId) -> bool {
        let Some(host) = self.hosts.get(&actor) else {
            return true;
        };
        if !host.alive.load(Ordering::SeqCst) {
            return false;
        }
        let mut budget = host.crash_budget.lock();
        match budget.as_mut() {
            Some(0) => {
                host.alive.store(false, Ordering::SeqCst);
                *budget = None;
                false
            }
            Some(n) => {
                *n -= 1;
                true
            }
            None => true,
        }
    }

    fn target_alive(&self, owner: ProcessId) -> bool {
        self.hosts
            .get(&owner)
            .map(|h| h.alive.load(Ordering::SeqCst))
            .unwrap_or(false)
    }
}

impl<K, E> Transport<K, E> for SharedMemory<K, E>
where
    K: Ord + Clone + fmt::Debug,
    E: Clone + Default,
{
    fn remote_write(
        &self,
        actor: ProcessId,
        region: &RegionId<K>,
        slot: u64,
        entry: E,
    ) -> Result<RemoteOpResult<E>, TransportError> {
        if !self.admit(actor) || !self.target_alive(region.owner) {
            // Still surface configuration errors for unknown regions.
            self.with_region(region, |_| ())?;
            return Ok(RemoteOpResult::status(OpStatus::Unreachable));
        }
        let audited = self.audit.as_ref().map(|_| entry.clone());
        let defer = self.deferred.as_ref().is_some_and(|d| d(&region.name));
        let mut entry = Some(entry);
        let status = self.with_region(region, |r| {
            Self::check_extent(region, r, slot)?;
            if !r.perm.can_write(actor) {
                return Ok(OpStatus::Denied);
            }
            if !defer {
                Self::store(r, slot, entry.take().expect("stored once"));
            }
            Ok(OpStatus::Ok)
        })??;
        if let (OpStatus::Ok, Some(entry)) = (status, entry.filter(|_| defer)) {
            self.in_flight.lock().open.entry(actor).or_default().push(WriteRecord {
                actor,
                region: region.clone(),
                slot,
                entry,
            });
        }
        if status == OpStatus::Ok {
            if let (Some(log), Some(entry)) = (&self.audit, audited) {
                log.lock().push(WriteRecord {
                    actor,
                    region: region.clone(),
                    slot,
                    entry,
                });
            }
        }
        Ok(RemoteOpResult::status(status))
    }

    fn remote_read(
        &self,
        actor: ProcessId,
        region: &RegionId<K>,
        slot: u64,
    ) -> Result<RemoteOpResult<E>, TransportError> {
        if !self.admit(actor) || !self.target_alive(region.owner) {
            self.with_region(region, |_| ())?;
            return Ok(RemoteOpResult::status(OpStatus::Unreachable));
        }
        self.with_region(region, |r| {
            Self::check_extent(region, r, slot)?;
            if !r.perm.can_read(actor) {
                return Ok(RemoteOpResult::status(OpStatus::Denied));
            }
            let value = r.cells.get(slot as usize).cloned().unwrap_or_default();
            Ok(RemoteOpResult {
                status: OpStatus::Ok,
                value: Some(value),
            })
        })?
    }

    fn local_read(&self, region: &RegionId<K>, slot: u64) -> Result<E, TransportError> {
        self.with_region(region, |r| {
            Self::check_extent(region, r, slot)?;
            Ok(r.cells.get(slot as usize).cloned().unwrap_or_default())
        })?
    }

    fn local_write(&self, region: &RegionId<K>, slot: u64, entry: E) -> Result<(), TransportError> {
        self.with_region(region, |r| {
            Self::check_extent(region, r, slot)?;
            Self::store(r, slot, entry);
            Ok(())
        })?
    }

    fn set_permission(
        &self,
        caller: ProcessId,
        region: &RegionId<K>,
        subject: ProcessId,
        mode: AccessMode,
    ) -> Result<(), TransportError> {
        if caller != region.owner {
            return Err(TransportError::NotOwner {
                owner: region.owner,
                caller,
            });
        }
        self.with_region(region, |r| r.perm.set(subject, mode))
    }

    fn is_alive(&self, p: ProcessId) -> bool {
        self.target_alive(p)
    }
}
