//! Finite-dimensional laboratory for branching structure and quantum
//! decision problems.
//!
//! Everything runs over an explicit `C^d` with dense complex matrices, so
//! every claim a checker makes is backed by a concrete computation at a
//! stated tolerance. The crate is organised as:
//!
//! - [`hilbert`] — vectors, operators, subspaces (events) and the lattice
//!   operations everything else consumes.
//! - [`events`] — orthogonal partitions, the Boolean algebras they generate,
//!   the orthogonality condition and partition refinement.
//! - [`histories`] — sample spaces, history spaces, branch vectors and
//!   weights, consistency and branching diagnostics, and the
//!   branching refinement of a consistent space.
//! - [`decision`] — decision problems over an event algebra: acts, richness
//!   conditions, reward/branching/erasure act constructions and the
//!   findings they produce.
//! - [`axioms`] — valuation strategies and checkers for the preference
//!   axioms, each returning a machine-readable report.
//! - [`measures`] — Born weights and branch-counting alternatives with
//!   stability diagnostics.
//! - [`scenarios`] — deterministic built-in constructions used by the CLI
//!   demos and the acceptance suite.
//! - [`schema`] — the scenario file format (JSON, version 1).
//! - [`report`] — report records shared by the checkers and the CLI.

// pub mod axioms;
// pub mod decision;
pub mod events;
pub mod hilbert;
pub mod histories;
// pub mod measures;
pub mod random;
// pub mod report;
// pub mod scenarios;
// pub mod schema;

pub use hilbert::{Event, Operator, OperatorKind, StateVector, Tolerances};
pub use events::{EventAlgebra, Partition};
pub use histories::{Dynamics, History, HistorySpace, SampleSpace};
// pub use decision::{Act, BranchingActSpec, DecisionProblem};
// pub use axioms::{PreferenceOrder, Strategy, StrategyKind};
// pub use measures::BranchProfile;
