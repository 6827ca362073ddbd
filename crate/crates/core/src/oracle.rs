//! Weak leader-election oracle driven by a per-group schedule.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::overlay::{GroupId, TreeOverlay};
use crate::trace::Time;
use crate::transport::ProcessId;

/// One scheduled nomination: from `at` on, `leader(group)` is replica `replica`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleChange {
    pub group: GroupId,
    pub at: Time,
    pub replica: u32,
}

/// Per-group nomination timelines. Groups without entries nominate replica 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleSchedule {
    timelines: BTreeMap<GroupId, Vec<(Time, u32)>>,
}

impl OracleSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_changes<I: IntoIterator<Item = OracleChange>>(changes: I) -> Self {
        let mut s = Self::new();
        for c in changes {
            s.nominate(c.group, c.at, c.replica);
        }
        s
    }

    pub fn nominate(&mut self, group: GroupId, at: Time, replica: u32) {
        let t = self.timelines.entry(group).or_default();
        let pos = t.partition_point(|&(time, _)| time <= at);
        t.insert(pos, (at, replica));
    }

    pub fn leader(&self, g: GroupId, now: Time) -> ProcessId {
        let replica = self
            .timelines
            .get(&g)
            .and_then(|t| t.iter().rev().find(|&&(at, _)| at <= now))
            .map_or(0, |&(_, r)| r);
        ProcessId::replica(g, replica)
    }

    pub fn changes(&self) -> Vec<OracleChange> {
        self.timelines
            .iter()
            .flat_map(|(&group, t)| t.iter().map(move |&(at, replica)| OracleChange { group, at, replica }))
            .collect()
    }

    /// Time of the last scheduled change in any group.
    pub fn last_change(&self) -> Time {
        self.timelines
            .values()
            .filter_map(|t| t.last().map(|&(at, _)| at))
            .max()
            .unwrap_or(0)
    }

    /// Every group moves from replica 0 to replica `to` at `at`.
    pub fn failover(tree: &TreeOverlay, at: Time, to: u32) -> Self {
        let mut s = Self::new();
        for g in tree.groups() {
            s.nominate(g, at, to);
        }
        s
    }

    /// Random nominations (possibly of crashed replicas) before `stable_at`,
    /// then a final nomination of a replica outside `crashed`.
    pub fn randomized<R: Rng>(
        tree: &TreeOverlay,
        rng: &mut R,
        changes_per_group: u32,
        stable_at: Time,
        crashed: &BTreeSet<ProcessId>,
    ) -> Self {
        let mut s = Self::new();
        for g in tree.groups() {
            let n = tree.replicas(g).expect("group from tree");
            for _ in 0..changes_per_group {
                let at = rng.gen_range(0..stable_at.max(1));
                s.nominate(g, at, rng.gen_range(0..n));
            }
            let survivors: Vec<u32> = (0..n)
                .filter(|&i| !crashed.contains(&ProcessId::replica(g, i)))
                .collect();
            if let Some(&r) = survivors.get(rng.gen_range(0..survivors.len().max(1))) {
                s.nominate(g, stable_at, r);
            }
        }
        s
    }
}
