//! Hypothesis-validated vulnerability detection for single functions.
//!
//! The pipeline runs four phases per sample: multi-view detection (a
//! dispatcher activates specialized agents whose findings are aggregated),
//! hypothesis construction (each finding becomes preconditions plus a trigger
//! path), assumption pruning against program context, and guard-dominance
//! path verification. Every model call goes through one gateway with live,
//! record-replay, and scripted-mock backends, which makes whole runs
//! deterministic and testable offline.

pub mod agents;
pub mod aggregate;
pub mod canon;
pub mod context;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod hypothesis;
pub mod model;
pub mod orchestrator;
pub mod preprocess;
pub mod rational;
pub mod schema;
pub mod validate;

pub use model::{AgentId, CodeSample, CweId, DetectionReport};
