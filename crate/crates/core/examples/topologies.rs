//! Generated tree shapes and how they route a few destination sets.

use std::collections::BTreeSet;

use tram::overlay::{GroupId, Shape, TreeOverlay};

fn main() {
    let dsts: [&[u32]; 3] = [&[3], &[3, 4], &[1, 5, 7]];
    for shape in [Shape::Base, Shape::Breadth, Shape::Depth] {
        let tree = TreeOverlay::shape(shape, 8, 3).expect("valid shape");
        println!("{shape:?}");
        for g in tree.groups() {
            let parent = tree.parent(g).unwrap().map_or("-".to_string(), |p| p.to_string());
            println!("  {g} parent {parent} depth {}", tree.depth(g).unwrap());
        }
        for d in dsts {
            let set: BTreeSet<GroupId> = d.iter().map(|&g| GroupId(g)).collect();
            let lca = tree.lca(&set).unwrap();
            let routes: Vec<String> = set
                .iter()
                .map(|&g| {
                    let hops: Vec<String> = tree.path(lca, g).unwrap().iter().map(ToString::to_string).collect();
                    hops.join(">")
                })
                .collect();
            println!("  dst {d:?}: lca {lca}, routes {}", routes.join(", "));
        }
    }
    print!(
        "{}",
        TreeOverlay::shape(Shape::Breadth, 3, 5).unwrap().to_file().to_toml()
    );
}
