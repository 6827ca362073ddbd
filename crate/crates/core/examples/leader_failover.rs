//! Every group's leader crashes mid-run; the oracle moves to replica 1.

use tram::oracle::OracleSchedule;
use tram::overlay::{Shape, TreeOverlay};
use tram::sim::{self, DestinationSpec, FaultEvent, Scenario};
use tram::trace::EventKind;

fn main() {
    let tree = TreeOverlay::shape(Shape::Base, 8, 3).expect("valid shape");
    let mut s = Scenario::new(tree.clone(), 16, 7);
    s.workload.messages = 400;
    s.workload.destinations = DestinationSpec::Uniform { k: Some(4) };
    for g in tree.groups() {
        s.faults.push(FaultEvent::crash_leader(400, g));
    }
    s.oracle = OracleSchedule::failover(&tree, 400, 1);

    let out = sim::run(s).expect("runs");
    for e in &out.trace.events {
        match &e.kind {
            EventKind::Crash => println!("t={:<5} {} crashes", e.time, e.actor),
            EventKind::LeaderChange { group, ballot } => {
                println!("t={:<5} {} leads {group} with ballot {ballot:?}", e.time, e.actor)
            }
            _ => {}
        }
    }
    let report = tram::check(&out.trace).expect("checks");
    println!("{} after {} ticks", out.status, out.end_time);
    print!("{report}");
}
