//! Checks a recorded trace, then the same trace with one delivery removed.
//!
//! `cargo run --example check_trace [path/to/trace.jsonl]`

use std::path::PathBuf;

use tram::trace::{DeliveryTrace, EventKind};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/two-group.trace.jsonl"));
    let text = std::fs::read_to_string(&path).expect("readable trace");
    let trace = DeliveryTrace::from_jsonl(&text).expect("well-formed trace");

    let report = tram::check(&trace).expect("known topology");
    println!("{}:\n{report}", path.display());

    let mut cut = trace.clone();
    if let Some(i) = cut
        .events
        .iter()
        .rposition(|e| matches!(e.kind, EventKind::Deliver { .. }))
    {
        let dropped = cut.events.remove(i);
        let report = tram::check(&cut).expect("known topology");
        println!("without the delivery by {}:\n{report}", dropped.actor);
        println!("failed: {:?}", report.failures());
    }
}
