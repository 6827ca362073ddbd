//! Deterministic discrete-event simulation of a deployment.
//!
//! Every client and replica is woken from a single time-ordered queue
//! (ties broken by process id). A step's simulated duration comes from the
//! [`LatencyModel`] applied to the remote operations it issued, plus a
//! seeded jitter, so a seed fixes the whole execution and its trace.

mod latency;
mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::oracle::OracleSchedule;
use crate::overlay::{GroupId, OverlayError};
use crate::protocol::{
    register_memory, Cell, Client, HmEntry, Memory, ProtocolError, Region, Replica, RoleKind, StepCtx,
};
use crate::trace::{DeliveryTrace, EventKind, MessageId, Time, TraceHeader};
use crate::transport::{ProcessId, Transport, WriteRecord};

pub use latency::LatencyModel;
pub use scenario::{
    DestinationSpec, FaultEvent, FaultTarget, PlannedMessage, RandomOracle, Scenario, ScenarioFile, TopologyRef,
    Workload,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Nothing left to do: all scheduled inputs happened and the system went quiet.
    Quiescent,
    /// The step budget ran out first.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaSnapshot {
    pub id: ProcessId,
    pub alive: bool,
    pub role: &'static str,
    pub fuo: u64,
    pub std: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: DeliveryTrace,
    pub status: RunStatus,
    pub steps: u64,
    pub end_time: Time,
    pub replicas: Vec<ReplicaSnapshot>,
    /// Successful remote writes, if auditing was requested.
    pub audit: Vec<WriteRecord<Region, Cell>>,
}

impl SimOutcome {
    /// Per-replica pointers, for diagnosing a run that did not finish.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for r in &self.replicas {
            out.push_str(&format!(
                "{:<8} {:<5} {:<11} FUO={:<6} STD={:<6} delivered={}\n",
                r.id.to_string(),
                if r.alive { "up" } else { "down" },
                r.role,
                r.fuo,
                r.std,
                r.delivered
            ));
        }
        out
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Quiescent => "quiescent",
            RunStatus::BudgetExhausted => "step budget exhausted",
        })
    }
}

const STREAM_PLAN: u64 = 1;
const STREAM_ORACLE: u64 = 2;
const STREAM_SCHED: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub struct Simulation {
    scenario: Scenario,
    mem: Memory,
    oracle: OracleSchedule,
    replicas: BTreeMap<ProcessId, Replica>,
    clients: Vec<Client>,
    outbox: Vec<VecDeque<PlannedMessage>>,
    faults: VecDeque<FaultEvent>,
    queue: BinaryHeap<Reverse<(Time, ProcessId)>>,
    dead: BTreeSet<ProcessId>,
    rng: ChaCha8Rng,
    trace: DeliveryTrace,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let tree = &scenario.tree;
        let mut mem = Memory::new();
        // Log permissions are revoked on leader change, so log writes must land when admitted.
        mem.defer_writes(|r| *r != Region::Log);
        register_memory(&mut mem, tree, scenario.clients, scenario.replica.buffer_extent)?;

        let mut oracle = scenario.oracle.clone();
        if let Some(r) = scenario.random_oracle {
            let crashed: BTreeSet<ProcessId> = scenario
                .faults
                .iter()
                .filter_map(|f| match f.target {
                    FaultTarget::Process(p) => Some(p),
                    FaultTarget::LeaderOf(_) => None,
                })
                .collect();
            let random = OracleSchedule::randomized(
                tree,
                &mut rng(scenario.seed, STREAM_ORACLE),
                r.changes_per_group,
                r.stable_at,
                &crashed,
            );
            for c in random.changes() {
                oracle.nominate(c.group, c.at, c.replica);
            }
        }

        let mut replicas = BTreeMap::new();
        for g in tree.groups() {
            for i in 0..tree.replicas(g)? {
                let r = Replica::new(g, i, tree, scenario.clients, scenario.replica.clone())?;
                replicas.insert(r.id(), r);
            }
        }
        let clients = (0..scenario.clients)
            .map(|c| Client::new(c, scenario.replica.buffer_extent))
            .collect();
        let mut outbox = vec![VecDeque::new(); scenario.clients as usize];
        for m in scenario.plan(&mut rng(scenario.seed, STREAM_PLAN)) {
            outbox[m.client as usize].push_back(m);
        }
        let mut faults: Vec<FaultEvent> = scenario.faults.clone();
        faults.sort_by_key(|f| f.at);

        let header = TraceHeader::new(scenario.seed, scenario.clients, tree.to_file());
        let mut sim = Simulation {
            rng: rng(scenario.seed, STREAM_SCHED),
            scenario,
            mem,
            oracle,
            replicas,
            clients,
            outbox,
            faults: faults.into(),
            queue: BinaryHeap::new(),
            dead: BTreeSet::new(),
            trace: DeliveryTrace::new(header),
        };
        let ids: Vec<ProcessId> = sim.replicas.keys().copied().collect();
        for id in ids {
            let at = sim.jitter();
            sim.queue.push(Reverse((at, id)));
        }
        for (c, out) in sim.outbox.iter().enumerate() {
            if let Some(m) = out.front() {
                sim.queue.push(Reverse((m.at, ProcessId::Client(c as u32))));
            }
        }
        Ok(sim)
    }

    /// Keeps every successful remote write for later inspection.
    pub fn enable_audit(&mut self) {
        self.mem.enable_audit();
    }

    /// The oracle schedule in effect, including any randomized nominations.
    pub fn oracle(&self) -> &OracleSchedule {
        &self.oracle
    }

    fn jitter(&mut self) -> Time {
        match self.scenario.jitter {
            0 => 0,
            j => self.rng.gen_range(0..=j),
        }
    }

    /// Runs until quiescence or until the step budget is spent.
    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        let horizon = self.scenario.horizon();
        let cfg = &self.scenario.replica;
        let quiet = 4 * cfg.noop_interval.max(cfg.resync_interval) + 20 * self.scenario.latency.remote_unit + 100;
        let mut last_progress: Time = 0;
        let mut steps = 0;
        let mut now = 0;
        let mut status = RunStatus::Quiescent;

        while let Some(Reverse((t, pid))) = self.queue.pop() {
            self.apply_faults(t);
            if t >= horizon && t.saturating_sub(last_progress) > quiet {
                now = t;
                break;
            }
            if steps >= self.scenario.step_budget {
                status = RunStatus::BudgetExhausted;
                now = t;
                break;
            }
            if !self.mem.is_alive(pid) {
                continue;
            }
            now = t;
            steps += 1;
            self.mem.advance(t);
            let (progressed, cost, delay) = match pid {
                ProcessId::Client(c) => self.step_client(c, t)?,
                ProcessId::Replica { .. } => self.step_replica(pid, t)?,
            };
            self.mem.seal(pid, t + cost);
            if progressed {
                // A step's effects land when it completes.
                last_progress = last_progress.max(t + delay.unwrap_or(0));
            }
            if !self.mem.is_alive(pid) && self.dead.insert(pid) {
                self.trace.push(t, pid, EventKind::Crash);
                continue;
            }
            if let Some(delay) = delay {
                let at = t + delay + self.jitter();
                self.queue.push(Reverse((at, pid)));
            }
        }

        let replicas = self
            .replicas
            .values()
            .map(|r| ReplicaSnapshot {
                id: r.id(),
                alive: self.mem.is_alive(r.id()),
                role: match r.role() {
                    RoleKind::Follower => "follower",
                    RoleKind::Campaigning => "campaigning",
                    RoleKind::CatchingUp => "catching-up",
                    RoleKind::Leading => "leading",
                },
                fuo: r.state().fuo,
                std: r.state().std,
                delivered: r.delivered(),
            })
            .collect();
        Ok(SimOutcome {
            audit: self.mem.audit_log(),
            trace: self.trace,
            status,
            steps,
            end_time: now,
            replicas,
        })
    }

    fn apply_faults(&mut self, now: Time) {
        while self.faults.front().is_some_and(|f| f.at <= now) {
            let f = self.faults.pop_front().unwrap();
            let target = match f.target {
                FaultTarget::Process(p) => p,
                FaultTarget::LeaderOf(g) => self.current_leader(g, f.at),
            };
            match f.after_ops {
                Some(k) => self.mem.crash_after_ops(target, k),
                None => {
                    self.mem.crash(target);
                    if self.dead.insert(target) {
                        self.trace.push(f.at, target, EventKind::Crash);
                    }
                }
            }
        }
    }

    /// The live replica of `g` that leads with the highest ballot, else the oracle's pick.
    fn current_leader(&self, g: GroupId, now: Time) -> ProcessId {
        self.replicas
            .values()
            .filter(|r| r.group() == g && r.is_leader() && self.mem.is_alive(r.id()))
            .max_by_key(|r| r.state().tmp)
            .map(|r| r.id())
            .unwrap_or_else(|| self.oracle.leader(g, now))
    }

    /// Steps return whether they progressed, their cost, and the delay until the next wakeup.
    fn step_client(&mut self, c: u32, now: Time) -> Result<(bool, Time, Option<Time>), SimError> {
        let out = &mut self.outbox[c as usize];
        let Some(m) = out.pop_front() else {
            return Ok((false, 0, None));
        };
        let pid = ProcessId::Client(c);
        let mut ctx = StepCtx::new(pid, &self.mem, &self.scenario.tree, now);
        let val = vec![(m.id.0 % 251) as u8; self.scenario.workload.payload];
        self.clients[c as usize].multicast(&mut ctx, HmEntry::new(pid, m.id, m.dst, val))?;
        let (events, phases) = ctx.into_parts();
        self.trace.events.extend(events);
        let cost = self.scenario.latency.step_cost(&phases).max(1);
        let next = self.outbox[c as usize].front().map(|n| n.at.max(now + cost) - now);
        Ok((true, cost, next))
    }

    fn step_replica(&mut self, pid: ProcessId, now: Time) -> Result<(bool, Time, Option<Time>), SimError> {
        let g = pid.group().expect("replica id");
        let leader = self.oracle.leader(g, now);
        let replica = self.replicas.get_mut(&pid).expect("registered replica");
        let mut ctx = StepCtx::new(pid, &self.mem, &self.scenario.tree, now).with_oracle(leader);
        let progressed = replica.step(&mut ctx)?;
        let (events, phases) = ctx.into_parts();
        self.trace.events.extend(events);
        let latency = &self.scenario.latency;
        let cost = latency.step_cost(&phases);
        let delay = if progressed { cost } else { cost.max(latency.idle_poll) };
        Ok((progressed, cost, Some(delay.max(1))))
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<SimOutcome, SimError> {
    Simulation::new(scenario)?.run()
}

/// End-to-end latency of one multicast message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageLatency {
    pub id: MessageId,
    pub sent: Time,
    pub destinations: usize,
    /// Until the last destination group first delivered it; `None` if some never did.
    pub latency: Option<Time>,
}

/// Latency of every multicast in `trace`, in id order.
pub fn message_latencies(trace: &DeliveryTrace) -> Vec<MessageLatency> {
    let mut sent: BTreeMap<MessageId, (Time, BTreeSet<GroupId>)> = BTreeMap::new();
    let mut first: BTreeMap<(MessageId, GroupId), Time> = BTreeMap::new();
    for e in &trace.events {
        match &e.kind {
            EventKind::Multicast { id, dst, .. } => {
                sent.entry(*id).or_insert((e.time, dst.clone()));
            }
            EventKind::Deliver { id, group, .. } => {
                first.entry((*id, *group)).or_insert(e.time);
            }
            _ => {}
        }
    }
    sent.into_iter()
        .map(|(id, (t, dst))| {
            let done: Option<Vec<Time>> = dst.iter().map(|&g| first.get(&(id, g)).copied()).collect();
            MessageLatency {
                id,
                sent: t,
                destinations: dst.len(),
                latency: done.and_then(|d| d.into_iter().max()).map(|end| end - t),
            }
        })
        .collect()
}
