//! Remediation safety for service meshes: infer the blast-constrained set of
//! services a recovery action may touch, express the recovery itself as a
//! typed transaction of reversible/compensatable actions, and execute it
//! through a kernel that validates, journals, and undoes.
//!
//! The crate is organized bottom-up:
//!
//! - [`trace`] — distributed-trace ingestion and weighted call graphs
//! - [`groups`] — recovery-group inference (SCC condensation + truncation)
//! - [`isa`] — the remediation instruction set: actions, effect types,
//!   conflict keys, transactions
//! - [`kernel`] — validation, write-ahead logging, locking, execution,
//!   crash recovery
//! - [`sim`] — a deterministic simulated cluster with fault injection and
//!   SLO telemetry
//! - [`harness`] — scripted remediation agents and harm-rate campaigns
//! - [`synth`] — synthetic call-graph generation for benchmarks

pub mod clock;
pub mod groups;
pub mod isa;
pub mod kernel;
pub mod stats;
pub mod trace;

pub use groups::{infer_recovery_group, InferenceThresholds, RecoveryGroup, Symptom};
pub use kernel::Kernel;
pub use isa::{Action, ActionKind, ConflictKey, EffectType, RemediationTransaction};
pub use trace::{CallGraph, ServiceRef, SpanRecord, TimeWindow};
