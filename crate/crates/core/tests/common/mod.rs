#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use tram::oracle::OracleSchedule;
use tram::overlay::{GroupId, Shape, TopologyFile, TreeOverlay};
use tram::protocol::{Cell, Region};
use tram::sim::{DestinationSpec, FaultEvent, RandomOracle, Scenario};
use tram::trace::{DeliveryTrace, EventKind, MessageId, OpKind, TraceHeader};
use tram::transport::{OpStatus, ProcessId, WriteRecord};

pub fn r(g: u32, i: u32) -> ProcessId {
    ProcessId::replica(GroupId(g), i)
}

/// 8 groups of 3, 500 messages to uniformly chosen destinations.
pub fn fault_free(seed: u64) -> Scenario {
    let tree = TreeOverlay::shape(Shape::Base, 8, 3).unwrap();
    let mut s = Scenario::new(tree, 8, seed);
    s.workload.messages = 500;
    s.workload.interval = 2;
    s
}

/// Every group's leader crashes at once while 100 clients multicast to all 8 groups.
pub fn failover(seed: u64) -> Scenario {
    let tree = TreeOverlay::shape(Shape::Base, 8, 3).unwrap();
    let mut s = Scenario::new(tree.clone(), 100, seed);
    s.workload.messages = 1000;
    s.workload.interval = 1;
    s.workload.destinations = DestinationSpec::Uniform { k: Some(8) };
    let at = 300 + seed % 400;
    for g in tree.groups() {
        s.faults.push(FaultEvent::crash_leader(at, g));
    }
    s.oracle = OracleSchedule::failover(&tree, at, 1 + (seed % 2) as u32);
    s
}

/// Random nominations, some of crashed replicas, and one crash per group.
pub fn adversarial(seed: u64) -> Scenario {
    use rand::{Rng, SeedableRng};
    let tree = TreeOverlay::shape(Shape::Base, 8, 3).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xadd);
    let mut s = Scenario::new(tree.clone(), 4, seed);
    s.workload.messages = 200;
    s.workload.interval = 3;
    for g in tree.groups() {
        let mut f = FaultEvent::crash(rng.gen_range(50..600), r(g.0, rng.gen_range(0..3)));
        if rng.gen_bool(0.5) {
            f.after_ops = Some(rng.gen_range(0..6));
        }
        s.faults.push(f);
    }
    s.random_oracle = Some(RandomOracle {
        changes_per_group: 8,
        stable_at: 700,
    });
    s.step_budget = 2_000_000;
    s
}

/// Two groups of 3 whose oracle hops between replicas every few ticks before settling.
pub fn contended(seed: u64) -> Scenario {
    let tree = TreeOverlay::shape(Shape::Depth, 2, 3).unwrap();
    let mut s = Scenario::new(tree.clone(), 2, seed);
    s.workload.messages = 10;
    s.workload.interval = 9;
    s.workload.start = 5;
    s.jitter = 3;
    let mut oracle = OracleSchedule::new();
    let hop = 7 + seed % 9;
    for g in tree.groups() {
        let mut t = 0;
        let mut i = (seed + u64::from(g.0)) % 3;
        while t < 220 {
            oracle.nominate(g, t, i as u32);
            t += hop;
            i = (i + 1 + seed % 2) % 3;
        }
        oracle.nominate(g, 220, 2);
    }
    s.oracle = oracle;
    if seed.is_multiple_of(3) {
        s.faults.push(FaultEvent::crash(60 + seed % 50, r(1, 0)));
    }
    s
}

/// What a direct inspection of the transport says about a run.
#[derive(Debug, Default)]
pub struct BruteForce {
    /// Log slots where two different values reached a quorum.
    pub conflicts: Vec<String>,
    /// Deliveries that disagree with the decided logs, or are missing.
    pub problems: Vec<String>,
    pub decided: BTreeMap<GroupId, Vec<MessageId>>,
}

impl BruteForce {
    pub fn clean(&self) -> bool {
        self.conflicts.is_empty() && self.problems.is_empty()
    }
}

/// (ballot, id) of a log value, and the replicas holding it.
type Holders = BTreeMap<((u64, u32), MessageId), BTreeSet<ProcessId>>;

/// Rebuilds every group's decided log from the successful log writes alone,
/// then compares it with what each replica delivered.
pub fn brute_force(trace: &DeliveryTrace, audit: &[WriteRecord<Region, Cell>]) -> BruteForce {
    let tree = TreeOverlay::from_file(&trace.header.topology).unwrap();
    let mut out = BruteForce::default();

    let mut writes: BTreeMap<(GroupId, u64), Holders> = BTreeMap::new();
    for w in audit {
        if let (Region::Log, Cell::Log(l)) = (&w.region.name, &w.entry) {
            let g = w.region.owner.group().unwrap();
            writes
                .entry((g, w.slot))
                .or_default()
                .entry(((l.tmp.counter, l.tmp.replica), l.hm.id))
                .or_default()
                .insert(w.region.owner);
        }
    }
    let mut chosen: BTreeMap<GroupId, BTreeMap<u64, MessageId>> = BTreeMap::new();
    for ((g, slot), by_ballot) in &writes {
        let majority = tree.replicas(*g).unwrap() as usize / 2 + 1;
        let ids: BTreeSet<MessageId> = by_ballot
            .iter()
            .filter(|(_, owners)| owners.len() >= majority)
            .map(|((_, id), _)| *id)
            .collect();
        if ids.len() > 1 {
            out.conflicts.push(format!("{g} slot {slot}: {ids:?}"));
        }
        if let Some(&id) = ids.iter().next() {
            chosen.entry(*g).or_default().insert(*slot, id);
        }
    }
    for (g, slots) in chosen {
        let log: Vec<MessageId> = slots
            .iter()
            .enumerate()
            .take_while(|(i, (s, _))| *i as u64 == **s)
            .map(|(_, (_, &id))| id)
            .collect();
        out.decided.insert(g, log);
    }

    let mut dst: BTreeMap<MessageId, BTreeSet<GroupId>> = BTreeMap::new();
    let mut crashed = BTreeSet::new();
    for e in &trace.events {
        match &e.kind {
            EventKind::Multicast { id, dst: d, .. } => {
                dst.insert(*id, d.clone());
            }
            EventKind::Crash => {
                crashed.insert(e.actor);
            }
            _ => {}
        }
    }
    for g in tree.groups() {
        let expected: Vec<MessageId> = out
            .decided
            .get(&g)
            .map(|log| {
                log.iter()
                    .copied()
                    .filter(|id| dst.get(id).is_some_and(|d| d.contains(&g)))
                    .collect()
            })
            .unwrap_or_default();
        let owed: BTreeSet<MessageId> = dst.iter().filter(|(_, d)| d.contains(&g)).map(|(&id, _)| id).collect();
        let down = (0..tree.replicas(g).unwrap())
            .filter(|&i| crashed.contains(&r(g.0, i)))
            .count();
        let quorum_lost = down > tree.faults_tolerated(g).unwrap() as usize;
        for i in 0..tree.replicas(g).unwrap() {
            let p = r(g.0, i);
            let got = trace.deliveries_of(p);
            if !expected.starts_with(&got) {
                out.problems
                    .push(format!("{p} delivered {got:?}, decided log says {expected:?}"));
            }
            let complete: BTreeSet<MessageId> = got.iter().copied().collect();
            if !crashed.contains(&p) && !quorum_lost && complete != owed {
                let missing: Vec<_> = owed.difference(&complete).collect();
                out.problems.push(format!("{p} is missing {missing:?}"));
            }
        }
    }
    out
}

// Hand-built traces for the negative controls.

pub fn depth_header(groups: u32) -> TraceHeader {
    TraceHeader::new(0, 1, TopologyFile::shape(Shape::Depth, groups, 3))
}

pub fn multicast(t: &mut DeliveryTrace, time: u64, id: u64, dst: &[u32]) {
    let dst: BTreeSet<GroupId> = dst.iter().map(|&g| GroupId(g)).collect();
    let lca = *dst.iter().next().unwrap();
    t.push(
        time,
        ProcessId::Client(0),
        EventKind::Multicast {
            id: MessageId(id),
            dst,
            lca,
        },
    );
}

/// All three replicas of `g` deliver `ids` in order.
pub fn deliver_all(t: &mut DeliveryTrace, time: u64, g: u32, ids: &[u64]) {
    for i in 0..3 {
        deliver(t, time, r(g, i), ids);
    }
}

pub fn deliver(t: &mut DeliveryTrace, time: u64, p: ProcessId, ids: &[u64]) {
    let base = t.deliveries_of(p).len() as u64;
    for (k, &id) in ids.iter().enumerate() {
        t.push(
            time,
            p,
            EventKind::Deliver {
                id: MessageId(id),
                group: p.group().unwrap(),
                seq: base + k as u64,
            },
        );
    }
}

pub fn remote_write(t: &mut DeliveryTrace, time: u64, actor: ProcessId, id: u64, target: ProcessId) {
    t.push(
        time,
        actor,
        EventKind::RemoteOp {
            id: MessageId(id),
            target,
            op: OpKind::Write,
            status: OpStatus::Ok,
        },
    );
}
