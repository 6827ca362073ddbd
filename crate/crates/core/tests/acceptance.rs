//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use tram::checker::{check, Check};
use tram::cli::{bench, BenchArgs};
use tram::overlay::Shape;
use tram::sim::{self, RunStatus, Scenario, Simulation};
use tram::trace::{DeliveryTrace, MessageId};

const FAULT_FREE_SEEDS: u64 = 100;
const FAILOVER_SEEDS: u64 = 20;
const ADVERSARIAL_SEEDS: u64 = 50;
const CONTENDED_SEEDS: u64 = 200;
const TIME_LIMIT: Duration = Duration::from_secs(60);
/// Relative spread allowed for a latency series to count as flat.
const FLAT_TOLERANCE: f64 = 0.10;

type Criterion = (&'static str, fn() -> Verdict);
type Family = (&'static str, fn(u64) -> Scenario);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn run_checked(s: Scenario) -> (sim::SimOutcome, tram::checker::CheckReport) {
    let out = sim::run(s).expect("scenario runs");
    let rep = check(&out.trace).expect("trace checks");
    (out, rep)
}

fn fault_free_suite() -> Verdict {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    let mut deliveries = 0;
    for seed in 0..FAULT_FREE_SEEDS {
        let (out, rep) = run_checked(fault_free(seed));
        deliveries += rep.deliveries;
        if out.status != RunStatus::Quiescent || !rep.is_clean() {
            bad.push(seed);
        }
    }
    let took = t0.elapsed();
    verdict(
        bad.is_empty() && took < TIME_LIMIT,
        format!(
            "{FAULT_FREE_SEEDS} seeds, {deliveries} deliveries, failing seeds {bad:?}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn failover_suite() -> Verdict {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    for seed in 0..FAILOVER_SEEDS {
        let (out, rep) = run_checked(failover(seed));
        let crashed = rep.crashed.len();
        if out.status != RunStatus::Quiescent || !rep.is_clean() || crashed != 8 {
            bad.push(seed);
        }
    }
    let took = t0.elapsed();
    verdict(
        bad.is_empty() && took < TIME_LIMIT,
        format!(
            "{FAILOVER_SEEDS} seeds, 8 leaders crashed each, failing seeds {bad:?}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn adversarial_suite() -> Verdict {
    let mut unsafe_seeds = Vec::new();
    let mut degraded = 0;
    for seed in 0..ADVERSARIAL_SEEDS {
        let (out, rep) = run_checked(adversarial(seed));
        if !rep.safety_passed() {
            unsafe_seeds.push(seed);
        }
        if out.status != RunStatus::Quiescent || !rep.all_passed() {
            degraded += 1;
        }
    }
    verdict(
        unsafe_seeds.is_empty(),
        format!("{ADVERSARIAL_SEEDS} seeds, safety failures {unsafe_seeds:?}, liveness degraded in {degraded}"),
    )
}

fn single_leader_suite() -> Verdict {
    let mut conflicts = 0;
    let mut disagreements = Vec::new();
    let mut slots = 0;
    let mut elections = 0;
    let mut proposed = 0;
    for seed in 0..CONTENDED_SEEDS {
        let mut sim = Simulation::new(contended(seed)).expect("valid scenario");
        sim.enable_audit();
        let out = sim.run().expect("runs");
        let rep = check(&out.trace).expect("checks");
        let oracle = brute_force(&out.trace, &out.audit);
        elections += out
            .trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, tram::trace::EventKind::LeaderChange { .. }))
            .count();
        proposed += out
            .audit
            .iter()
            .filter_map(|w| match (&w.region.name, &w.entry) {
                (tram::protocol::Region::Perm, tram::protocol::Cell::Ballot(b)) => Some((w.region.owner.group(), *b)),
                _ => None,
            })
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        conflicts += oracle.conflicts.len();
        slots += oracle.decided.values().map(Vec::len).sum::<usize>();
        if oracle.clean() != rep.is_clean() || !oracle.clean() {
            disagreements.push(seed);
        }
    }
    verdict(
        conflicts == 0 && disagreements.is_empty(),
        format!(
            "{CONTENDED_SEEDS} seeds, {proposed} ballots proposed, {elections} completed elections, {slots} decided slots, conflicting slots {conflicts}, verdict mismatches {disagreements:?}"
        ),
    )
}

fn determinism_suite() -> Verdict {
    let mut differ = Vec::new();
    let cases: Vec<Family> = vec![
        ("fault-free", fault_free),
        ("failover", failover),
        ("adversarial", adversarial),
        ("contended", contended),
    ];
    for (name, make) in &cases {
        for seed in [3, 17] {
            let a = sim::run(make(seed)).unwrap().trace.to_jsonl();
            let b = sim::run(make(seed)).unwrap().trace.to_jsonl();
            if a != b {
                differ.push(format!("{name}/{seed}"));
            }
        }
    }
    verdict(
        differ.is_empty(),
        format!("{} scenario/seed pairs rerun, differing {differ:?}", cases.len() * 2),
    )
}

fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

fn bench_args(shape: Shape) -> BenchArgs {
    BenchArgs {
        shape,
        groups: 8,
        replicas: 3,
        topology: None,
        sweep_dst: None,
        dst: 1,
        payload: vec![16],
        sweep_replicas: Vec::new(),
        messages: 200,
        clients: 4,
        interval: 40,
        seed: 1,
        bandwidth: 64,
        serialized: false,
        out: None,
    }
}

fn latency_trend_suite() -> Verdict {
    let mean = |args: &BenchArgs| -> Vec<f64> { bench(args).unwrap().iter().map(|p| p.mean_latency).collect() };

    let breadth = mean(&BenchArgs {
        sweep_dst: Some(8),
        ..bench_args(Shape::Breadth)
    });
    let breadth_spread = spread(&breadth[1..]);

    let depth = mean(&BenchArgs {
        sweep_dst: Some(8),
        ..bench_args(Shape::Depth)
    });
    let depth_rising = depth.windows(2).all(|w| w[1] > w[0]);

    let replicas = mean(&BenchArgs {
        groups: 4,
        sweep_replicas: vec![3, 5, 7, 9],
        ..bench_args(Shape::Base)
    });
    let replica_spread = spread(&replicas);

    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ");
    verdict(
        breadth_spread <= FLAT_TOLERANCE && depth_rising && replica_spread <= FLAT_TOLERANCE,
        format!(
            "breadth dst2..8 spread {:.1}% [{}]; depth dst1..8 rising={depth_rising} [{}]; replicas 3..9 spread {:.1}% [{}]",
            breadth_spread * 100.0,
            fmt(&breadth[1..]),
            fmt(&depth),
            replica_spread * 100.0,
            fmt(&replicas)
        ),
    )
}

fn negative_controls() -> Verdict {
    let mut controls: Vec<(&str, DeliveryTrace, Check)> = Vec::new();

    // Two groups, two messages to both, everyone agrees.
    let good = || {
        let mut t = DeliveryTrace::new(depth_header(2));
        multicast(&mut t, 0, 1, &[0, 1]);
        multicast(&mut t, 0, 2, &[0, 1]);
        deliver_all(&mut t, 5, 0, &[1, 2]);
        deliver_all(&mut t, 6, 1, &[1, 2]);
        t
    };
    assert!(check(&good()).unwrap().is_clean(), "baseline trace must pass");

    let mut t = good();
    deliver(&mut t, 7, r(1, 2), &[2]);
    controls.push(("duplicate delivery", t, Check::Integrity));

    let mut t = DeliveryTrace::new(depth_header(3));
    multicast(&mut t, 0, 1, &[0, 1]);
    multicast(&mut t, 0, 2, &[1, 2]);
    multicast(&mut t, 0, 3, &[0, 2]);
    deliver_all(&mut t, 5, 0, &[3, 1]);
    deliver_all(&mut t, 5, 1, &[1, 2]);
    deliver_all(&mut t, 5, 2, &[2, 3]);
    controls.push(("3-cycle", t, Check::AcyclicOrder));

    let mut t = DeliveryTrace::new(depth_header(2));
    multicast(&mut t, 0, 1, &[0, 1]);
    multicast(&mut t, 0, 2, &[0, 1]);
    deliver_all(&mut t, 5, 0, &[1, 2]);
    deliver_all(&mut t, 6, 1, &[2, 1]);
    controls.push(("broken prefix", t, Check::PrefixOrder));

    let mut t = good();
    t.events.retain(|e| {
        !(e.actor == r(1, 1) && matches!(e.kind, tram::trace::EventKind::Deliver { id, .. } if id == MessageId(2)))
    });
    controls.push(("deleted follower delivery", t.clone(), Check::Agreement));
    controls.push(("truncated trace", t, Check::Validity));

    let mut t = DeliveryTrace::new(depth_header(2));
    multicast(&mut t, 0, 1, &[1]);
    multicast(&mut t, 0, 2, &[1]);
    deliver(&mut t, 5, r(1, 0), &[1, 2]);
    deliver(&mut t, 5, r(1, 1), &[2, 1]);
    deliver(&mut t, 5, r(1, 2), &[1, 2]);
    controls.push(("shuffled group", t, Check::GroupTotalOrder));

    let mut t = good();
    multicast(&mut t, 0, 3, &[1]);
    remote_write(&mut t, 1, tram::transport::ProcessId::Client(0), 3, r(1, 0));
    remote_write(&mut t, 2, r(0, 0), 3, r(1, 0));
    deliver_all(&mut t, 8, 1, &[3]);
    controls.push(("outsider on single-group message", t, Check::PartialGenuineness));

    let mut vacuous = Vec::new();
    for (name, trace, expected) in &controls {
        let rep = check(trace).unwrap();
        if rep.passed(*expected) {
            vacuous.push(format!("{name} passed {expected}"));
        }
    }
    verdict(
        vacuous.is_empty(),
        format!("{} violating traces, undetected {vacuous:?}", controls.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("fault-free property suite", fault_free_suite),
        ("simultaneous leader failover", failover_suite),
        ("adversarial elections stay safe", adversarial_suite),
        ("single-leader safety by brute force", single_leader_suite),
        ("byte-identical traces", determinism_suite),
        ("latency-model trends", latency_trend_suite),
        ("negative controls", negative_controls),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} {name}: {}", i + 1, v.detail);
        failed += usize::from(!v.passed);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
