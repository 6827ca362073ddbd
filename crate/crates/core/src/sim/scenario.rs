use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LatencyModel, SimError};
use crate::oracle::{OracleChange, OracleSchedule};
use crate::overlay::{GroupId, TopologyFile, TreeOverlay};
use crate::protocol::ReplicaConfig;
use crate::trace::{MessageId, Time};
use crate::transport::ProcessId;

/// How workload messages pick their destination groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DestinationSpec {
    /// `k` distinct groups drawn uniformly; without `k`, the count is itself uniform in 1..=groups.
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<u32>,
    },
    /// A random non-root group together with its parent.
    Adjacent,
    /// Cycles through the given sets.
    Explicit { sets: Vec<Vec<u32>> },
}

impl Default for DestinationSpec {
    fn default() -> Self {
        DestinationSpec::Uniform { k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub messages: u32,
    pub payload: usize,
    /// Ticks between consecutive sends (across all clients).
    pub interval: Time,
    pub start: Time,
    pub destinations: DestinationSpec,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            messages: 10,
            payload: 16,
            interval: 5,
            start: 10,
            destinations: DestinationSpec::default(),
        }
    }
}

/// A message the workload will multicast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedMessage {
    pub at: Time,
    pub client: u32,
    pub id: MessageId,
    pub dst: BTreeSet<GroupId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    Process(ProcessId),
    /// Whichever replica leads the group when the fault fires.
    LeaderOf(GroupId),
}

/// A crash-stop fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at: Time,
    #[serde(flatten)]
    pub target: FaultTarget,
    /// Crash only after this many further remote operations (possibly mid-step).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_ops: Option<u32>,
}

impl FaultEvent {
    pub fn crash(at: Time, p: ProcessId) -> Self {
        FaultEvent {
            at,
            target: FaultTarget::Process(p),
            after_ops: None,
        }
    }

    pub fn crash_leader(at: Time, g: GroupId) -> Self {
        FaultEvent {
            at,
            target: FaultTarget::LeaderOf(g),
            after_ops: None,
        }
    }
}

/// Seeded random nominations before `stable_at`, then a stable survivor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomOracle {
    pub changes_per_group: u32,
    pub stable_at: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    Path(PathBuf),
    Inline(TopologyFile),
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub clients: u32,
    /// May be left out when the topology is supplied separately.
    #[serde(default)]
    pub topology: Option<TopologyRef>,
    #[serde(default)]
    pub buffer_extent: Option<u64>,
    #[serde(default)]
    pub noop_interval: Option<Time>,
    #[serde(default)]
    pub step_budget: Option<u64>,
    #[serde(default)]
    pub jitter: Option<Time>,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultEvent>,
    #[serde(default, rename = "oracle")]
    pub oracle: Vec<OracleChange>,
    #[serde(default)]
    pub random_oracle: Option<RandomOracle>,
    #[serde(default)]
    pub latency: Option<LatencyModel>,
}

/// A fully resolved, runnable scenario. The seed determines the execution.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub tree: TreeOverlay,
    pub clients: u32,
    pub workload: Workload,
    pub faults: Vec<FaultEvent>,
    pub oracle: OracleSchedule,
    pub random_oracle: Option<RandomOracle>,
    pub replica: ReplicaConfig,
    pub latency: LatencyModel,
    pub step_budget: u64,
    /// Upper bound of the random delay added to every wakeup.
    pub jitter: Time,
}

impl Scenario {
    pub fn new(tree: TreeOverlay, clients: u32, seed: u64) -> Self {
        Scenario {
            seed,
            tree,
            clients,
            workload: Workload::default(),
            faults: Vec::new(),
            oracle: OracleSchedule::new(),
            random_oracle: None,
            replica: ReplicaConfig::default(),
            latency: LatencyModel::default(),
            step_budget: 5_000_000,
            jitter: 1,
        }
    }

    /// Builds a scenario from a file; a relative topology path is resolved
    /// against `base` (usually the scenario file's directory).
    pub fn from_file(file: &ScenarioFile, base: &Path) -> Result<Self, SimError> {
        let tree = match &file.topology {
            Some(TopologyRef::Inline(t)) => TreeOverlay::from_file(t)?,
            Some(TopologyRef::Path(p)) => TreeOverlay::load(&base.join(p))?,
            None => return Err(SimError::Config("scenario names no topology".into())),
        };
        Self::from_file_with_tree(file, tree)
    }

    pub fn from_file_with_tree(file: &ScenarioFile, tree: TreeOverlay) -> Result<Self, SimError> {
        let mut s = Scenario::new(tree, file.clients, file.seed);
        s.workload = file.workload.clone();
        s.faults = file.faults.clone();
        s.oracle = OracleSchedule::from_changes(file.oracle.iter().copied());
        s.random_oracle = file.random_oracle;
        if let Some(e) = file.buffer_extent {
            s.replica.buffer_extent = e;
        }
        if let Some(n) = file.noop_interval {
            s.replica.noop_interval = n;
            s.replica.resync_interval = n;
        }
        if let Some(b) = file.step_budget {
            s.step_budget = b;
        }
        if let Some(j) = file.jitter {
            s.jitter = j;
        }
        if let Some(l) = file.latency {
            s.latency = l;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?;
        Self::from_file(&file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: String| Err(SimError::Config(what));
        if self.clients == 0 && self.workload.messages > 0 {
            return bad("a workload needs at least one client".into());
        }
        if self.latency.idle_poll == 0 && self.latency.local_unit == 0 {
            return bad("idle_poll and local_unit cannot both be zero".into());
        }
        match &self.workload.destinations {
            DestinationSpec::Uniform { k: Some(k) } if *k == 0 || *k as usize > self.tree.len() => {
                return bad(format!("uniform k = {k} outside 1..={}", self.tree.len()));
            }
            DestinationSpec::Adjacent if self.tree.len() < 2 => {
                return bad("adjacent destinations need at least two groups".into());
            }
            DestinationSpec::Explicit { sets } => {
                if sets.is_empty() {
                    return bad("explicit destinations need at least one set".into());
                }
                for set in sets {
                    if set.is_empty() {
                        return bad("explicit destination set is empty".into());
                    }
                    for &g in set {
                        if !self.tree.contains(GroupId(g)) {
                            return bad(format!("explicit destination names unknown group {g}"));
                        }
                    }
                }
            }
            _ => {}
        }
        for f in &self.faults {
            let ok = match f.target {
                FaultTarget::Process(ProcessId::Client(c)) => c < self.clients,
                FaultTarget::Process(ProcessId::Replica { group, index }) => {
                    self.tree.replicas(group).is_ok_and(|n| index < n)
                }
                FaultTarget::LeaderOf(g) => self.tree.contains(g),
            };
            if !ok {
                return bad(format!("fault at {} names an unknown process or group", f.at));
            }
        }
        for c in self.oracle.changes() {
            if self.tree.replicas(c.group).map_or(true, |n| c.replica >= n) {
                return bad(format!("oracle nominates unknown replica {} of {}", c.replica, c.group));
            }
        }
        Ok(())
    }

    /// The messages the workload will send, derived from the seed.
    pub fn plan<R: Rng>(&self, rng: &mut R) -> Vec<PlannedMessage> {
        let groups: Vec<GroupId> = self.tree.groups().collect();
        let non_root: Vec<GroupId> = groups.iter().copied().filter(|&g| g != self.tree.root()).collect();
        let w = &self.workload;
        (0..w.messages)
            .map(|i| {
                let dst: BTreeSet<GroupId> = match &w.destinations {
                    DestinationSpec::Uniform { k } => {
                        let k = k.unwrap_or_else(|| rng.gen_range(1..=groups.len() as u32));
                        groups.choose_multiple(rng, k as usize).copied().collect()
                    }
                    DestinationSpec::Adjacent => {
                        let g = *non_root.choose(rng).expect("validated: two or more groups");
                        let p = self.tree.parent(g).expect("known group").expect("not the root");
                        [p, g].into()
                    }
                    DestinationSpec::Explicit { sets } => {
                        sets[i as usize % sets.len()].iter().map(|&g| GroupId(g)).collect()
                    }
                };
                PlannedMessage {
                    at: w.start + Time::from(i) * w.interval,
                    client: i % self.clients,
                    id: MessageId(u64::from(i) + 1),
                    dst,
                }
            })
            .collect()
    }

    /// Time after which no fault, oracle change or send is scheduled.
    pub fn horizon(&self) -> Time {
        let sends = match self.workload.messages {
            0 => 0,
            n => self.workload.start + Time::from(n - 1) * self.workload.interval,
        };
        let faults = self.faults.iter().map(|f| f.at).max().unwrap_or(0);
        let oracle = self.random_oracle.map_or(0, |r| r.stable_at);
        sends.max(faults).max(oracle).max(self.oracle.last_change())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FILE: &str = r#"
seed = 9
clients = 2
noop_interval = 30

[topology]
root = 1
[[topology.group]]
id = 1
replicas = 3
[[topology.group]]
id = 2
replicas = 3
parent = 1

[workload]
messages = 4
interval = 7
destinations = { kind = "explicit", sets = [[1, 2], [2]] }

[[fault]]
at = 40
process = "g1.r0"

[[fault]]
at = 50
leader_of = 2
after_ops = 3

[[oracle]]
group = 1
at = 40
replica = 1
"#;

    #[test]
    fn parses_inline_scenario() {
        let file: ScenarioFile = toml::from_str(FILE).unwrap();
        let s = Scenario::from_file(&file, Path::new(".")).unwrap();
        assert_eq!(s.replica.noop_interval, 30);
        assert_eq!(s.faults[0], FaultEvent::crash(40, ProcessId::replica(GroupId(1), 0)));
        assert_eq!(s.faults[1].target, FaultTarget::LeaderOf(GroupId(2)));
        assert_eq!(s.faults[1].after_ops, Some(3));
        assert_eq!(s.oracle.leader(GroupId(1), 41), ProcessId::replica(GroupId(1), 1));
        let plan = s.plan(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan[0].dst, [GroupId(1), GroupId(2)].into());
        assert_eq!(plan[1].dst, [GroupId(2)].into());
        assert_eq!(plan[3].at, 10 + 3 * 7);
        assert_eq!(plan[3].client, 1);
        assert_eq!(s.horizon(), 50);
    }

    #[test]
    fn rejects_unknown_groups() {
        let tree = TreeOverlay::shape(Shape::Depth, 2, 3).unwrap();
        let mut s = Scenario::new(tree, 1, 0);
        s.workload.destinations = DestinationSpec::Explicit { sets: vec![vec![5]] };
        assert!(s.validate().is_err());
        s.workload.destinations = DestinationSpec::Uniform { k: Some(3) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn adjacent_pairs_are_parent_and_child() {
        let tree = TreeOverlay::shape(Shape::Base, 8, 3).unwrap();
        let mut s = Scenario::new(tree.clone(), 1, 0);
        s.workload.messages = 200;
        s.workload.destinations = DestinationSpec::Adjacent;
        for m in s.plan(&mut ChaCha8Rng::seed_from_u64(4)) {
            let v: Vec<_> = m.dst.iter().copied().collect();
            assert_eq!(v.len(), 2);
            let child = if tree.parent(v[0]).unwrap() == Some(v[1]) {
                v[0]
            } else {
                v[1]
            };
            assert!(tree.parent(child).unwrap().is_some());
        }
    }

    #[test]
    fn uniform_sets_are_distinct_and_sized() {
        let tree = TreeOverlay::shape(Shape::Breadth, 8, 3).unwrap();
        let mut s = Scenario::new(tree, 3, 0);
        s.workload.messages = 100;
        s.workload.destinations = DestinationSpec::Uniform { k: Some(4) };
        let plan = s.plan(&mut ChaCha8Rng::seed_from_u64(1));
        assert!(plan.iter().all(|m| m.dst.len() == 4));
        let ids: BTreeSet<_> = plan.iter().map(|m| m.id).collect();
        assert_eq!(ids.len(), 100);
    }
}
