//! Peel-and-Bound solver for the asteroid routing problem.
//!
//! A spacecraft leaves Earth and must visit every asteroid of an instance
//! once. Each leg costs the optimum of an inner trajectory problem (wait,
//! then a Lambert transfer), so the outer problem is a time-dependent
//! asymmetric TSP whose arc costs are expensive black-box calls.
//!
//! The crate is layered bottom-up:
//!
//! * [`orbital`]: Kepler propagation and the Lambert problem.
//! * [`transfer`]: the inner optimizers (full, wait-free and time-capped).
//! * [`instance`]: problem data, CSV I/O and seeded generation.
//! * [`memo`]: exact-prefix trie and containment interval trees.
//! * [`diagram`]: the relaxed decision diagram with splitting and peeling.
//! * [`builder`]: construction and weighting of the initial diagram.
//! * [`search`]: restricted beam search embedded in a relaxed diagram.
//! * [`solver`]: the Peel-and-Bound outer loop.

pub mod builder;
pub mod diagram;
pub mod instance;
pub mod memo;
pub mod orbital;
pub mod search;
pub mod solver;
pub mod transfer;

mod optimizer;

/// Index of a body within an instance. Earth is always `0`.
pub type BodyId = usize;

/// Body id reserved for the departure planet.
pub const EARTH: BodyId = 0;

pub use builder::{BuildReport, PhaseTwoMode};
pub use diagram::{Diagram, NodeId};
pub use instance::{evaluate_tour, generate, load_csv, write_csv, Instance, Tour};
pub use memo::{BoundIntervalTree, BoundMemo, SolutionTrie};
pub use orbital::{BodyState, Constants, LambertSolution, OrbitalElements};
pub use solver::{PeelAndBound, PeelStrategy, QueueOrder, SolveOutcome, SolverConfig};
pub use transfer::{TransferModel, TransferQuery, TransferResult};
