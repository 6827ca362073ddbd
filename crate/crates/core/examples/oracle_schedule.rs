//! A randomized oracle that keeps changing its mind, then settles.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tram::oracle::OracleSchedule;
use tram::overlay::{Shape, TreeOverlay};
use tram::transport::ProcessId;

fn main() {
    let tree = TreeOverlay::shape(Shape::Depth, 2, 3).expect("valid shape");
    let crashed = BTreeSet::from([ProcessId::replica(tree.root(), 2)]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let oracle = OracleSchedule::randomized(&tree, &mut rng, 5, 300, &crashed);
    for c in oracle.changes() {
        println!("t={:<4} {} nominates replica {}", c.at, c.group, c.replica);
    }
    for g in tree.groups() {
        println!("{g} settles on {}", oracle.leader(g, oracle.last_change()));
    }
}
