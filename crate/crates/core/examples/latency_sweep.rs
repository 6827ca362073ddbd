//! Mean latency against destination count on the three tree shapes.

use tram::cli::{bench, BenchArgs};
use tram::overlay::Shape;

fn main() {
    for shape in [Shape::Base, Shape::Breadth, Shape::Depth] {
        let points = bench(&BenchArgs {
            shape,
            groups: 8,
            replicas: 3,
            topology: None,
            sweep_dst: Some(8),
            dst: 1,
            payload: vec![16],
            sweep_replicas: Vec::new(),
            messages: 100,
            clients: 4,
            interval: 40,
            seed: 1,
            bandwidth: 64,
            serialized: false,
            out: None,
        })
        .expect("bench runs");
        let row: Vec<String> = points.iter().map(|p| format!("{:6.1}", p.mean_latency)).collect();
        println!("{:<8} {}", format!("{shape:?}"), row.join(" "));
    }
}
