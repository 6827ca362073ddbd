//! The static overlay tree that routes messages between groups.
//!
//! A message is first ordered by the least common ancestor (lca) of its
//! destinations and then pushed down towards every child whose subtree
//! (its *reach*) contains a destination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("destination set is empty")]
    EmptyDestination,
    #[error("group {0} is declared twice")]
    DuplicateGroup(GroupId),
    #[error("root {0} is not a declared group")]
    MissingRoot(GroupId),
    #[error("root {0} must not have a parent")]
    RootHasParent(GroupId),
    #[error("groups {0} and {1} both lack a parent; the tree needs a single root")]
    MultipleRoots(GroupId, GroupId),
    #[error("parent {parent} of {child} is not a declared group")]
    UnknownParent { child: GroupId, parent: GroupId },
    #[error("parent edges form a cycle through {0}")]
    Cycle(GroupId),
    #[error("group {group} has {replicas} replicas; need at least 1")]
    BadReplicaCount { group: GroupId, replicas: u32 },
    #[error("topology must contain at least one group")]
    NoGroups,
    #[error("cannot parse topology: {0}")]
    Parse(String),
    #[error("cannot read topology file: {0}")]
    Io(String),
}

/// On-disk topology description.
///
/// ```toml
/// root = 0
///
/// [[group]]
/// id = 0
/// replicas = 3
///
/// [[group]]
/// id = 1
/// replicas = 3
/// parent = 0
/// ```
///
/// Children keep the order in which they are declared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub root: u32,
    #[serde(rename = "group")]
    pub groups: Vec<GroupDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDecl {
    pub id: u32,
    pub replicas: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<u32>,
}

#[derive(Debug, Clone)]
struct Node {
    replicas: u32,
    parent: Option<GroupId>,
    children: Vec<GroupId>,
    depth: u32,
    reach: BTreeSet<GroupId>,
}

/// A validated, immutable rooted tree over groups.
#[derive(Debug, Clone)]
pub struct TreeOverlay {
    root: GroupId,
    nodes: BTreeMap<GroupId, Node>,
}

/// Benchmark overlay shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Root with children, filled breadth-first two levels deep.
    Base,
    /// Root with every other group as a direct child.
    Breadth,
    /// A single chain.
    Depth,
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Shape::Base),
            "breadth" => Ok(Shape::Breadth),
            "depth" => Ok(Shape::Depth),
            _ => Err(format!("unknown shape {s:?} (expected base, breadth or depth)")),
        }
    }
}

impl TopologyFile {
    /// Generates one of the benchmark shapes with groups `0..groups`.
    pub fn shape(shape: Shape, groups: u32, replicas: u32) -> Self {
        let parent_of = |i: u32| -> Option<u32> {
            if i == 0 {
                return None;
            }
            Some(match shape {
                Shape::Breadth => 0,
                Shape::Depth => i - 1,
                Shape::Base => {
                    // Smallest branching factor b with 1 + b + b^2 >= groups.
                    let b = (1..).find(|b| 1 + b + b * b >= groups).unwrap_or(1);
                    (i - 1) / b
                }
            })
        };
        TopologyFile {
            root: 0,
            groups: (0..groups)
                .map(|id| GroupDecl {
                    id,
                    replicas,
                    parent: parent_of(id),
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, OverlayError> {
        toml::from_str(text).map_err(|e| OverlayError::Parse(e.to_string()))
    }
}

impl TreeOverlay {
    pub fn from_file(file: &TopologyFile) -> Result<Self, OverlayError> {
        if file.groups.is_empty() {
            return Err(OverlayError::NoGroups);
        }
        let root = GroupId(file.root);
        let mut nodes: BTreeMap<GroupId, Node> = BTreeMap::new();
        for decl in &file.groups {
            let id = GroupId(decl.id);
            if decl.replicas == 0 {
                return Err(OverlayError::BadReplicaCount {
                    group: id,
                    replicas: decl.replicas,
                });
            }
            let node = Node {
                replicas: decl.replicas,
                parent: decl.parent.map(GroupId),
                children: Vec::new(),
                depth: 0,
                reach: BTreeSet::new(),
            };
            if nodes.insert(id, node).is_some() {
                return Err(OverlayError::DuplicateGroup(id));
            }
        }
        match nodes.get(&root) {
            None => return Err(OverlayError::MissingRoot(root)),
            Some(n) if n.parent.is_some() => return Err(OverlayError::RootHasParent(root)),
            _ => {}
        }
        for decl in &file.groups {
            let id = GroupId(decl.id);
            match decl.parent.map(GroupId) {
                None if id != root => return Err(OverlayError::MultipleRoots(root, id)),
                None => {}
                Some(p) => {
                    let parent = nodes
                        .get_mut(&p)
                        .ok_or(OverlayError::UnknownParent { child: id, parent: p })?;
                    parent.children.push(id);
                }
            }
        }
        // Every group must reach the root by following parents.
        let ids: Vec<GroupId> = nodes.keys().copied().collect();
        for &g in &ids {
            let mut seen = BTreeSet::new();
            let mut cur = g;
            while let Some(p) = nodes[&cur].parent {
                if !seen.insert(cur) {
                    return Err(OverlayError::Cycle(g));
                }
                cur = p;
            }
            if cur != root {
                return Err(OverlayError::Cycle(g));
            }
            nodes.get_mut(&g).unwrap().depth = seen.len() as u32;
        }
        for &g in &ids {
            let mut cur = Some(g);
            while let Some(a) = cur {
                let node = nodes.get_mut(&a).unwrap();
                node.reach.insert(g);
                cur = node.parent;
            }
        }
        Ok(TreeOverlay { root, nodes })
    }

    pub fn load(path: &Path) -> Result<Self, OverlayError> {
        let text = std::fs::read_to_string(path).map_err(|e| OverlayError::Io(format!("{}: {e}", path.display())))?;
        Self::from_file(&TopologyFile::from_toml(&text)?)
    }

    pub fn shape(shape: Shape, groups: u32, replicas: u32) -> Result<Self, OverlayError> {
        Self::from_file(&TopologyFile::shape(shape, groups, replicas))
    }

    pub fn to_file(&self) -> TopologyFile {
        // Emit parents before children so declaration order reproduces child order.
        let mut groups = Vec::new();
        let mut stack = vec![self.root];
        while let Some(g) = stack.pop() {
            let n = &self.nodes[&g];
            groups.push(GroupDecl {
                id: g.0,
                replicas: n.replicas,
                parent: n.parent.map(|p| p.0),
            });
            stack.extend(n.children.iter().rev());
        }
        TopologyFile {
            root: self.root.0,
            groups,
        }
    }

    fn node(&self, g: GroupId) -> Result<&Node, OverlayError> {
        self.nodes.get(&g).ok_or(OverlayError::UnknownGroup(g))
    }

    pub fn root(&self) -> GroupId {
        self.root
    }

    pub fn groups(&self) -> impl Iterator<Item = GroupId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, g: GroupId) -> bool {
        self.nodes.contains_key(&g)
    }

    pub fn parent(&self, g: GroupId) -> Result<Option<GroupId>, OverlayError> {
        Ok(self.node(g)?.parent)
    }

    pub fn children(&self, g: GroupId) -> Result<&[GroupId], OverlayError> {
        Ok(&self.node(g)?.children)
    }

    pub fn replicas(&self, g: GroupId) -> Result<u32, OverlayError> {
        Ok(self.node(g)?.replicas)
    }

    /// Maximum number of faulty replicas the group tolerates: f for n = 2f + 1.
    /// Quorums are majorities, so an even group tolerates no more than the odd group below it.
    pub fn faults_tolerated(&self, g: GroupId) -> Result<u32, OverlayError> {
        Ok((self.node(g)?.replicas - 1) / 2)
    }

    pub fn depth(&self, g: GroupId) -> Result<u32, OverlayError> {
        Ok(self.node(g)?.depth)
    }

    /// The subtree rooted at `g`, `g` included.
    pub fn reach(&self, g: GroupId) -> Result<&BTreeSet<GroupId>, OverlayError> {
        Ok(&self.node(g)?.reach)
    }

    /// Does any group in `dst` lie in the subtree of `g`?
    pub fn reaches_any(&self, g: GroupId, dst: &BTreeSet<GroupId>) -> Result<bool, OverlayError> {
        let reach = self.reach(g)?;
        Ok(dst.iter().any(|d| reach.contains(d)))
    }

    /// The deepest group whose reach covers all of `dst`.
    pub fn lca(&self, dst: &BTreeSet<GroupId>) -> Result<GroupId, OverlayError> {
        let mut it = dst.iter();
        let mut acc = *it.next().ok_or(OverlayError::EmptyDestination)?;
        self.node(acc)?;
        for &d in it {
            let mut a = acc;
            let mut b = d;
            let (mut da, mut db) = (self.node(a)?.depth, self.node(b)?.depth);
            while da > db {
                a = self.nodes[&a].parent.unwrap();
                da -= 1;
            }
            while db > da {
                b = self.nodes[&b].parent.unwrap();
                db -= 1;
            }
            while a != b {
                a = self.nodes[&a].parent.unwrap();
                b = self.nodes[&b].parent.unwrap();
            }
            acc = a;
        }
        Ok(acc)
    }

    /// Groups on the downward path from `ancestor` to `descendant`, both included.
    pub fn path(&self, ancestor: GroupId, descendant: GroupId) -> Result<Vec<GroupId>, OverlayError> {
        self.node(ancestor)?;
        let mut path = vec![descendant];
        let mut cur = descendant;
        while cur != ancestor {
            cur = self.node(cur)?.parent.ok_or(OverlayError::UnknownGroup(ancestor))?;
            path.push(cur);
        }
        path.reverse();
        Ok(path)
    }
}
