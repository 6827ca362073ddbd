//! One message to a two-group tree, delivered by all four replicas.

use tram::overlay::{TopologyFile, TreeOverlay};
use tram::sim::{self, DestinationSpec, Scenario};
use tram::trace::EventKind;

const TOPOLOGY: &str = r#"
root = 1

[[group]]
id = 1
replicas = 2

[[group]]
id = 2
replicas = 2
parent = 1
"#;

fn main() {
    let tree = TreeOverlay::from_file(&TopologyFile::from_toml(TOPOLOGY).unwrap()).expect("valid topology");
    let mut scenario = Scenario::new(tree, 1, 1);
    scenario.workload.messages = 1;
    scenario.workload.destinations = DestinationSpec::Explicit { sets: vec![vec![1, 2]] };

    let out = sim::run(scenario).expect("runs");
    for e in &out.trace.events {
        if let EventKind::Deliver { id, group, seq } = &e.kind {
            println!("t={:<4} {} delivers {id} in {group} at position {seq}", e.time, e.actor);
        }
    }
    let report = tram::check(&out.trace).expect("checks");
    print!("{report}");
}
