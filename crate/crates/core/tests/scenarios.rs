mod common;

use std::path::Path;

use common::*;
use tram::checker::{check, Check};
use tram::oracle::OracleSchedule;
use tram::overlay::{GroupId, Shape, TreeOverlay};
use tram::protocol::{Cell, Region};
use tram::sim::{self, DestinationSpec, FaultEvent, RunStatus, Scenario, Simulation};
use tram::trace::{EventKind, MessageId};

fn config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn two_group_sample_delivers_four_times() {
    let out = sim::run(Scenario::load(&config("two-group-scenario.toml")).unwrap()).unwrap();
    assert_eq!(out.status, RunStatus::Quiescent);
    assert_eq!(out.trace.delivery_count(), 4);
    assert!(check(&out.trace).unwrap().is_clean());
}

#[test]
fn thousand_uniform_messages_without_faults() {
    let mut s = fault_free(42);
    s.workload.messages = 1000;
    let out = sim::run(s).unwrap();
    let rep = check(&out.trace).unwrap();
    assert_eq!(out.status, RunStatus::Quiescent);
    assert!(rep.is_clean(), "{rep}");
    assert_eq!(rep.messages, 1000);
}

#[test]
fn leader_dies_before_its_log_write_reaches_a_quorum() {
    let tree = TreeOverlay::shape(Shape::Base, 1, 3).unwrap();
    let mut s = Scenario::new(tree.clone(), 1, 5);
    s.workload.messages = 6;
    s.workload.destinations = DestinationSpec::Uniform { k: Some(1) };
    // One log write lands, then the leader is gone.
    let mut f = FaultEvent::crash(28, r(0, 0));
    f.after_ops = Some(1);
    s.faults.push(f);
    s.oracle = OracleSchedule::failover(&tree, 28, 2);
    let mut sim = Simulation::new(s).unwrap();
    sim.enable_audit();
    let out = sim.run().unwrap();
    let rep = check(&out.trace).unwrap();
    assert!(rep.is_clean(), "{rep}");
    assert_eq!(rep.crashed, vec![r(0, 0)]);
    for i in 1..3 {
        assert_eq!(out.trace.deliveries_of(r(0, i)).len(), 6);
    }
    assert!(brute_force(&out.trace, &out.audit).clean());
}

#[test]
fn deposed_leader_steps_down_without_loss() {
    let tree = TreeOverlay::shape(Shape::Depth, 3, 3).unwrap();
    let mut s = Scenario::new(tree.clone(), 2, 8);
    s.workload.messages = 60;
    s.workload.interval = 3;
    // No crash: the oracle simply changes its mind while the old leader is busy.
    s.oracle = OracleSchedule::failover(&tree, 80, 1);
    let out = sim::run(s).unwrap();
    let rep = check(&out.trace).unwrap();
    assert!(rep.is_clean(), "{rep}");
    let leaders: Vec<_> = out
        .replicas
        .iter()
        .filter(|r| r.role == "leading")
        .map(|r| r.id)
        .collect();
    assert_eq!(leaders, vec![r(0, 1), r(1, 1), r(2, 1)]);
}

#[test]
fn losing_a_quorum_blocks_only_what_routes_through_it() {
    let out = sim::run(Scenario::load(&config("quorum-loss.toml")).unwrap()).unwrap();
    let rep = check(&out.trace).unwrap();
    assert!(rep.all_passed(), "{rep}");
    assert!(!rep.blocked.is_empty());
    assert_eq!(rep.failed_groups, vec![GroupId(2)]);
    assert!(rep.blocked.iter().all(|b| b.via == GroupId(2)));
    assert!(!rep.is_clean());
}

#[test]
fn single_group_messages_stay_genuine_under_failover() {
    let mut s = failover(3);
    s.workload.messages = 300;
    s.workload.destinations = DestinationSpec::Uniform { k: Some(1) };
    let out = sim::run(s).unwrap();
    let rep = check(&out.trace).unwrap();
    assert!(rep.passed(Check::PartialGenuineness));
    assert!(rep.is_clean(), "{rep}");
}

#[test]
fn brute_force_agrees_with_checker_under_contention() {
    for seed in 0..20 {
        let mut sim = Simulation::new(contended(seed)).unwrap();
        sim.enable_audit();
        let out = sim.run().unwrap();
        let oracle = brute_force(&out.trace, &out.audit);
        let rep = check(&out.trace).unwrap();
        assert!(
            oracle.clean(),
            "seed {seed}: {:?} {:?}",
            oracle.conflicts,
            oracle.problems
        );
        assert_eq!(oracle.clean(), rep.is_clean(), "seed {seed}");
    }
}

#[test]
fn brute_force_notices_a_second_quorum_value() {
    let mut sim = Simulation::new(contended(1)).unwrap();
    sim.enable_audit();
    let mut out = sim.run().unwrap();
    // Forge a majority of writes of another value into a decided slot.
    let forged: Vec<_> = out
        .audit
        .iter()
        .filter(|w| w.region.name == Region::Log && w.slot == 0 && w.region.owner.group() == Some(GroupId(1)))
        .filter_map(|w| {
            let Cell::Log(l) = &w.entry else { return None };
            let mut l = (**l).clone();
            let mut hm = (*l.hm).clone();
            hm.id = MessageId(999);
            l.hm = hm.into();
            l.tmp.counter += 100;
            let mut w = w.clone();
            w.entry = Cell::Log(l.into());
            Some(w)
        })
        .collect();
    assert!(forged.len() >= 2);
    out.audit.extend(forged);
    let oracle = brute_force(&out.trace, &out.audit);
    assert_eq!(oracle.conflicts.len(), 1, "{:?}", oracle.conflicts);
}

#[test]
fn crash_events_are_traced_once() {
    let out = sim::run(adversarial(9)).unwrap();
    let crashes: Vec<_> = out
        .trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Crash)
        .map(|e| e.actor)
        .collect();
    let unique: std::collections::BTreeSet<_> = crashes.iter().collect();
    assert_eq!(crashes.len(), unique.len());
}
