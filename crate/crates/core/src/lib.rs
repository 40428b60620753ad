//! Resource-aware edge process migration.
//!
//! An edge host holding a batch of data objects decides how many objects to
//! process itself and how many to ship to mist, fog and cloud workers. The
//! decision is driven by a per-worker completion-time model ([`cost`]) and a
//! greedy one-object-at-a-time assigner ([`assign`]). Plans are checked with a
//! deterministic timeline simulator ([`sim`]) and can be executed for real over
//! a small length-prefixed TCP protocol ([`epnet`]).

pub mod assign;
pub mod cli;
pub mod cost;
pub mod epnet;
pub mod model;
pub mod scenario;
pub mod sim;

pub use assign::{baseline_assign, brute_force_optimal, plan_for, rem_assign, AssignError, AssignmentPolicy};
pub use cost::{CostError, CostModel, FormulaVariant, WorkerView};
pub use model::{
    Calibration, CostBreakdown, DynamicContext, LinkPath, NodeId, NodeKind, NodeProfile, Plan, RequestSpec,
    ResourceKind, ResourceWeights, Scenario, TraceStep, Violation,
};
pub use sim::{compare, simulate, Case, SimOptions, SimReport, UplinkMode};
