//! Offline verification of a recorded trace against the atomic multicast
//! properties, partial genuineness and per-group total order.
//!
//! A process is *correct* if the trace never records it crashing. Groups
//! that lost more than `f` replicas void the guarantees for every message
//! whose route crosses them; those obligations are reported as blocked
//! rather than as failures.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use petgraph::algo::{tarjan_scc, toposort};
use petgraph::graphmap::DiGraphMap;
use serde::Serialize;

use crate::overlay::{GroupId, OverlayError, TreeOverlay};
use crate::trace::{DeliveryTrace, EventKind, MessageId};
use crate::transport::ProcessId;

/// Violations listed per check; the rest are only counted.
const MAX_LISTED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Validity,
    Agreement,
    Integrity,
    PrefixOrder,
    AcyclicOrder,
    GroupTotalOrder,
    PartialGenuineness,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::Validity,
        Check::Agreement,
        Check::Integrity,
        Check::PrefixOrder,
        Check::AcyclicOrder,
        Check::GroupTotalOrder,
        Check::PartialGenuineness,
    ];

    /// Checks whose failure no execution may ever exhibit, however unlucky.
    pub fn is_safety(&self) -> bool {
        !matches!(self, Check::Validity | Check::Agreement)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Check::Validity => "validity",
            Check::Agreement => "agreement",
            Check::Integrity => "integrity",
            Check::PrefixOrder => "prefix-order",
            Check::AcyclicOrder => "acyclic-order",
            Check::GroupTotalOrder => "group-total-order",
            Check::PartialGenuineness => "partial-genuineness",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub violations: usize,
    pub examples: Vec<String>,
}

impl CheckResult {
    fn new(check: Check, violations: Vec<String>) -> Self {
        CheckResult {
            check,
            passed: violations.is_empty(),
            violations: violations.len(),
            examples: violations.into_iter().take(MAX_LISTED).collect(),
        }
    }
}

/// A delivery obligation voided by a group that lost its quorum.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Blocked {
    pub message: MessageId,
    pub group: GroupId,
    /// The first group on the route with more than f crashes.
    pub via: GroupId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub messages: usize,
    pub deliveries: usize,
    pub crashed: Vec<ProcessId>,
    pub failed_groups: Vec<GroupId>,
    pub results: Vec<CheckResult>,
    pub blocked: Vec<Blocked>,
}

impl CheckReport {
    pub fn result(&self, check: Check) -> &CheckResult {
        self.results
            .iter()
            .find(|r| r.check == check)
            .expect("every check runs")
    }

    pub fn passed(&self, check: Check) -> bool {
        self.result(check).passed
    }

    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn safety_passed(&self) -> bool {
        self.results.iter().filter(|r| r.check.is_safety()).all(|r| r.passed)
    }

    /// All checks pass and no obligation was blocked.
    pub fn is_clean(&self) -> bool {
        self.all_passed() && self.blocked.is_empty()
    }

    pub fn failures(&self) -> Vec<Check> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.check).collect()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "messages: {}  deliveries: {}", self.messages, self.deliveries)?;
        if !self.crashed.is_empty() {
            let c: Vec<String> = self.crashed.iter().map(|p| p.to_string()).collect();
            writeln!(f, "crashed: {}", c.join(" "))?;
        }
        for r in &self.results {
            let verdict = if r.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}", r.check)?;
            for e in &r.examples {
                writeln!(f, "     {e}")?;
            }
            if r.violations > r.examples.len() {
                writeln!(f, "     ... {} more", r.violations - r.examples.len())?;
            }
        }
        if !self.failed_groups.is_empty() {
            let g: Vec<String> = self.failed_groups.iter().map(|g| g.to_string()).collect();
            writeln!(
                f,
                "BLOCKED {} obligations (groups beyond f crashes: {})",
                self.blocked.len(),
                g.join(" ")
            )?;
        }
        Ok(())
    }
}

struct Multicast {
    sender: ProcessId,
    dst: BTreeSet<GroupId>,
    lca: GroupId,
}

/// Trace indexed by message and by process.
struct Index {
    tree: TreeOverlay,
    crashed: BTreeSet<ProcessId>,
    failed_groups: BTreeSet<GroupId>,
    multicasts: BTreeMap<MessageId, Multicast>,
    /// Delivery sequence of every process, in trace order.
    deliveries: BTreeMap<ProcessId, Vec<(MessageId, GroupId)>>,
    participants: BTreeMap<MessageId, BTreeSet<ProcessId>>,
}

impl Index {
    fn new(trace: &DeliveryTrace) -> Result<Self, OverlayError> {
        let tree = TreeOverlay::from_file(&trace.header.topology)?;
        let mut idx = Index {
            tree,
            crashed: BTreeSet::new(),
            failed_groups: BTreeSet::new(),
            multicasts: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            participants: BTreeMap::new(),
        };
        for e in &trace.events {
            match &e.kind {
                EventKind::Multicast { id, dst, lca } => {
                    idx.multicasts.entry(*id).or_insert(Multicast {
                        sender: e.actor,
                        dst: dst.clone(),
                        lca: *lca,
                    });
                    idx.participants.entry(*id).or_default().insert(e.actor);
                }
                EventKind::Deliver { id, group, .. } => {
                    idx.deliveries.entry(e.actor).or_default().push((*id, *group));
                }
                EventKind::RemoteOp { id, .. } => {
                    idx.participants.entry(*id).or_default().insert(e.actor);
                }
                EventKind::Crash => {
                    idx.crashed.insert(e.actor);
                }
                EventKind::XBroadcast { .. } | EventKind::LeaderChange { .. } => {}
            }
        }
        for g in idx.tree.groups() {
            let f = idx.tree.faults_tolerated(g)? as usize;
            let down = idx.members(g).filter(|p| idx.crashed.contains(p)).count();
            if down > f {
                idx.failed_groups.insert(g);
            }
        }
        Ok(idx)
    }

    fn members(&self, g: GroupId) -> impl Iterator<Item = ProcessId> {
        let n = self.tree.replicas(g).unwrap_or(0);
        (0..n).map(move |i| ProcessId::replica(g, i))
    }

    fn correct(&self, p: ProcessId) -> bool {
        !self.crashed.contains(&p)
    }

    fn delivered(&self, p: ProcessId) -> &[(MessageId, GroupId)] {
        self.deliveries.get(&p).map_or(&[], Vec::as_slice)
    }

    /// The failed group, if any, on the route from the lca down to `g`.
    fn blocked_by(&self, m: &Multicast, g: GroupId) -> Option<GroupId> {
        let path = self.tree.path(m.lca, g).ok()?;
        path.into_iter().find(|x| self.failed_groups.contains(x))
    }

    /// Correct replicas of destination `g` that never delivered `id`.
    fn missing(&self, id: MessageId, g: GroupId) -> Vec<ProcessId> {
        self.members(g)
            .filter(|&p| self.correct(p) && !self.delivered(p).iter().any(|&(d, _)| d == id))
            .collect()
    }
}

/// Runs every check on `trace`.
pub fn check(trace: &DeliveryTrace) -> Result<CheckReport, OverlayError> {
    let idx = Index::new(trace)?;
    let mut blocked = BTreeSet::new();
    let results = vec![
        CheckResult::new(Check::Validity, validity(&idx, &mut blocked)),
        CheckResult::new(Check::Agreement, agreement(&idx, &mut blocked)),
        CheckResult::new(Check::Integrity, integrity(&idx)),
        CheckResult::new(Check::PrefixOrder, prefix_order(&idx)),
        CheckResult::new(Check::AcyclicOrder, acyclic_order(&idx)),
        CheckResult::new(Check::GroupTotalOrder, group_total_order(&idx)),
        CheckResult::new(Check::PartialGenuineness, partial_genuineness(&idx)),
    ];
    Ok(CheckReport {
        messages: idx.multicasts.len(),
        deliveries: idx.deliveries.values().map(Vec::len).sum(),
        crashed: idx.crashed.iter().copied().collect(),
        failed_groups: idx.failed_groups.iter().copied().collect(),
        results,
        blocked: blocked.into_iter().collect(),
    })
}

fn obligations(idx: &Index, id: MessageId, blocked: &mut BTreeSet<Blocked>, out: &mut Vec<String>, why: &str) {
    let m = &idx.multicasts[&id];
    for &g in &m.dst {
        if let Some(via) = idx.blocked_by(m, g) {
            blocked.insert(Blocked {
                message: id,
                group: g,
                via,
            });
            continue;
        }
        for p in idx.missing(id, g) {
            out.push(format!("{id} {why} but correct {p} never delivered it"));
        }
    }
}

fn validity(idx: &Index, blocked: &mut BTreeSet<Blocked>) -> Vec<String> {
    let mut out = Vec::new();
    for (&id, m) in &idx.multicasts {
        if idx.correct(m.sender) {
            obligations(
                idx,
                id,
                blocked,
                &mut out,
                &format!("was multicast by correct {}", m.sender),
            );
        }
    }
    out
}

fn agreement(idx: &Index, blocked: &mut BTreeSet<Blocked>) -> Vec<String> {
    let mut out = Vec::new();
    let mut delivered_by: BTreeMap<MessageId, ProcessId> = BTreeMap::new();
    for (&p, seq) in &idx.deliveries {
        for &(id, _) in seq {
            delivered_by.entry(id).or_insert(p);
        }
    }
    for (id, p) in delivered_by {
        if idx.multicasts.contains_key(&id) {
            obligations(idx, id, blocked, &mut out, &format!("was delivered by {p}"));
        }
    }
    out
}

fn integrity(idx: &Index) -> Vec<String> {
    let mut out = Vec::new();
    for (&p, seq) in &idx.deliveries {
        let mut seen = BTreeSet::new();
        for &(id, g) in seq {
            if !seen.insert(id) {
                out.push(format!("{p} delivered {id} more than once"));
            }
            if p.group() != Some(g) {
                out.push(format!(
                    "{p} delivered {id} on behalf of {g}, which it is not a member of"
                ));
            }
            match idx.multicasts.get(&id) {
                None => out.push(format!("{p} delivered {id}, which was never multicast")),
                Some(m) if !m.dst.contains(&g) => {
                    out.push(format!("{p} delivered {id} although {g} is not a destination"))
                }
                Some(_) => {}
            }
        }
    }
    out
}

/// Sequence of first deliveries, keeping only messages accepted by `keep`.
fn restricted(seq: &[(MessageId, GroupId)], keep: impl Fn(MessageId) -> bool) -> Vec<MessageId> {
    let mut seen = BTreeSet::new();
    seq.iter()
        .map(|&(id, _)| id)
        .filter(|&id| keep(id) && seen.insert(id))
        .collect()
}

/// First index where neither sequence is a prefix of the other.
fn divergence(a: &[MessageId], b: &[MessageId]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y)
}

fn prefix_order(idx: &Index) -> Vec<String> {
    let mut out = Vec::new();
    let groups: Vec<GroupId> = idx.tree.groups().collect();
    for (i, &g) in groups.iter().enumerate() {
        for &h in &groups[i + 1..] {
            let both = |id: MessageId| {
                idx.multicasts
                    .get(&id)
                    .is_some_and(|m| m.dst.contains(&g) && m.dst.contains(&h))
            };
            for p in idx.members(g) {
                let a = restricted(idx.delivered(p), both);
                for q in idx.members(h) {
                    let b = restricted(idx.delivered(q), both);
                    if let Some(k) = divergence(&a, &b) {
                        out.push(format!(
                            "{p} delivered {} where {q} delivered {} (both messages address {g} and {h})",
                            a[k], b[k]
                        ));
                    }
                }
            }
        }
    }
    out
}

fn acyclic_order(idx: &Index) -> Vec<String> {
    let mut graph: DiGraphMap<u64, ()> = DiGraphMap::new();
    for seq in idx.deliveries.values() {
        for w in seq.windows(2) {
            let (a, b) = (w[0].0, w[1].0);
            graph.add_node(a.0);
            if a != b {
                graph.add_edge(a.0, b.0, ());
            }
        }
        if let Some(&(last, _)) = seq.last() {
            graph.add_node(last.0);
        }
    }
    if toposort(&graph, None).is_ok() {
        return Vec::new();
    }
    tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1)
        .map(|scc| {
            let cycle = find_cycle(&graph, &scc);
            let names: Vec<String> = cycle.iter().map(|&n| MessageId(n).to_string()).collect();
            format!("delivery order has a cycle: {} -> {}", names.join(" -> "), names[0])
        })
        .collect()
}

/// A simple cycle through the first node of a strongly connected component.
fn find_cycle(graph: &DiGraphMap<u64, ()>, scc: &[u64]) -> Vec<u64> {
    let members: BTreeSet<u64> = scc.iter().copied().collect();
    let start = *members.iter().next().expect("non-empty component");
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for w in graph.neighbors(v) {
            if !members.contains(&w) {
                continue;
            }
            if w == start {
                let mut path = vec![v];
                let mut cur = v;
                while cur != start {
                    cur = prev[&cur];
                    path.push(cur);
                }
                path.reverse();
                return path;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(w) {
                e.insert(v);
                queue.push_back(w);
            }
        }
    }
    scc.to_vec()
}

fn group_total_order(idx: &Index) -> Vec<String> {
    let mut out = Vec::new();
    for g in idx.tree.groups() {
        let seqs: Vec<(ProcessId, Vec<MessageId>)> = idx
            .members(g)
            .map(|p| (p, restricted(idx.delivered(p), |_| true)))
            .collect();
        'group: for (i, (p, a)) in seqs.iter().enumerate() {
            for (q, b) in &seqs[i + 1..] {
                if let Some(k) = divergence(a, b) {
                    out.push(format!("in {g}, delivery {k} is {} at {p} but {} at {q}", a[k], b[k]));
                    break 'group;
                }
            }
        }
    }
    out
}

fn partial_genuineness(idx: &Index) -> Vec<String> {
    let mut out = Vec::new();
    for (id, m) in &idx.multicasts {
        if m.dst.len() != 1 {
            continue;
        }
        let g = *m.dst.first().unwrap();
        for &p in idx.participants.get(id).into_iter().flatten() {
            if p != m.sender && p.group() != Some(g) {
                out.push(format!("{p} took part in ordering {id}, addressed only to {g}"));
            }
        }
    }
    out
}
