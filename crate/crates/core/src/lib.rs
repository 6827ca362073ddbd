//! Tree-based atomic multicast over simulated one-sided shared memory.
//!
//! Groups of replicas form an overlay tree. A client writes a message
//! straight into the memory of the replicas of the lowest common ancestor
//! of its destinations; that group's leader orders it in a replicated log
//! and forwards it down the tree until every destination group has
//! delivered it. Leaders change through ballot-based permission switches,
//! so a deposed leader's writes are refused by the memory itself.
//!
//! The crate is organised bottom-up:
//!
//! - [`transport`]: regions, permissions and remote reads and writes
//! - [`overlay`]: the group tree and its routing queries
//! - [`oracle`]: scheduled leader nominations
//! - [`protocol`]: client and replica state machines
//! - [`sim`]: seeded discrete-event runs with faults and a latency model
//! - [`trace`]: the JSON-lines record of a run
//! - [`checker`]: offline verification of a trace
//! - [`cli`]: the `tram` command line
//!
//! ```
//! use tram::overlay::{Shape, TreeOverlay};
//! use tram::sim::{self, Scenario};
//!
//! let tree = TreeOverlay::shape(Shape::Base, 4, 3).unwrap();
//! let mut scenario = Scenario::new(tree, 2, 7);
//! scenario.workload.messages = 20;
//! let out = sim::run(scenario).unwrap();
//! assert!(tram::checker::check(&out.trace).unwrap().is_clean());
//! ```

pub mod checker;
pub mod cli;
pub mod oracle;
pub mod overlay;
pub mod protocol;
pub mod sim;
pub mod trace;
pub mod transport;

pub use checker::{check, CheckReport};
pub use overlay::{GroupId, Shape, TreeOverlay};
pub use sim::{Scenario, SimOutcome, Simulation};
pub use trace::{DeliveryTrace, MessageId};
pub use transport::ProcessId;
