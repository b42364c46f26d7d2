//! The trusted actuation core.
//!
//! Every remediation reaches the infrastructure through this module: a
//! transaction is validated against capability grants, recovery-group scope,
//! effect-type policy, conflict keys held by in-flight transactions, and a
//! per-namespace rate limit; admitted transactions are journaled to a
//! write-ahead log and executed with rollback/compensation on failure; after
//! a crash, [`Kernel::recover`] replays the journal to complete or revert
//! whatever was in flight.
//!
//! # Concurrency
//!
//! Admission (validation + lock acquisition + the durable `TxnStart` record)
//! happens under a single mutex, so two transactions can never validate
//! against stale lock state. Effects run outside that mutex: transactions
//! with disjoint conflict keys execute concurrently, while
//! [`Kernel::execute_queued`] callers block in FIFO order on overlapping
//! keys. A queued transaction holds the admission point while it waits;
//! conflicting work had to serialize anyway, and [`Kernel::execute`] rejects
//! conflicts up front instead of queuing.

pub mod capability;
pub mod feedback;
pub mod locks;
pub mod wal;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use crate::clock::SimClock;
use crate::groups::RecoveryGroup;
use crate::isa::{
    transaction_from_value, Action, EffectType, ExtensionRegistry, Precondition, FailurePolicy,
    RemediationTransaction, SchemaViolation, TrafficState,
};

pub use capability::CapabilitySet;
pub use feedback::{RejectionCode, RejectionFeedback};
pub use locks::{LockHandle, LockRegistry};
pub use wal::{
    analyze_wal, CrashSwitch, CrashingJournal, FileJournal, Journal, MemoryJournal, TxnOutcome,
    WalEntry, WalEntryKind, WalError,
};

const RATE_WINDOW_US: i64 = 60_000_000;

// --- actuator interface ---------------------------------------------------------

/// Why a backend effect did not happen.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    /// Ordinary action failure (service missing, scale below zero, injected
    /// fault). Feeds the retry and failure-policy machinery.
    #[error("{0}")]
    Failure(String),
    /// Simulated process death. Execution stops where it stands: no
    /// rollback, no outcome record.
    #[error("actuator crashed (simulated)")]
    Crashed,
}

/// Point-in-time view of one service, for precondition checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSnapshot {
    pub replicas: u32,
    pub healthy: bool,
    pub traffic: TrafficState,
}

/// Point-in-time view of the backend.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSnapshot {
    pub services: BTreeMap<crate::trace::ServiceRef, ServiceSnapshot>,
}

impl ClusterSnapshot {
    pub fn satisfies(&self, precondition: &Precondition) -> bool {
        let svc = self.services.get(precondition.service());
        match precondition {
            Precondition::ServiceExists(_) => svc.is_some(),
            Precondition::ReplicaCountAtLeast(_, n) => svc.is_some_and(|s| s.replicas >= *n),
            Precondition::ServiceHealthy(_) => svc.is_some_and(|s| s.healthy),
            Precondition::TrafficState(_, want) => svc.is_some_and(|s| s.traffic == *want),
        }
    }
}

/// The infrastructure the kernel actuates. Implementations must honor
/// idempotency tokens (a token already applied is a successful no-op) and
/// tolerate concurrent calls on distinct services.
pub trait Actuator: Send + Sync {
    fn apply(&self, action: &Action, idempotency_token: &str) -> Result<(), ApplyError>;
    fn snapshot(&self) -> ClusterSnapshot;
}

impl<A: Actuator + ?Sized> Actuator for Arc<A> {
    fn apply(&self, action: &Action, idempotency_token: &str) -> Result<(), ApplyError> {
        (**self).apply(action, idempotency_token)
    }
    fn snapshot(&self) -> ClusterSnapshot {
        (**self).snapshot()
    }
}

/// Wraps an actuator so the shared [`CrashSwitch`] counts each effect as one
/// crash boundary. Paired with [`CrashingJournal`], a 3-action transaction
/// exposes 8 distinct crash points.
pub struct CrashingActuator<A: Actuator> {
    inner: A,
    switch: Arc<CrashSwitch>,
}

impl<A: Actuator> CrashingActuator<A> {
    pub fn new(inner: A, switch: Arc<CrashSwitch>) -> Self {
        CrashingActuator { inner, switch }
    }
}

impl<A: Actuator> Actuator for CrashingActuator<A> {
    fn apply(&self, action: &Action, idempotency_token: &str) -> Result<(), ApplyError> {
        if !self.switch.step() {
            return Err(ApplyError::Crashed);
        }
        self.inner.apply(action, idempotency_token)
    }
    fn snapshot(&self) -> ClusterSnapshot {
        self.inner.snapshot()
    }
}

// --- kernel configuration --------------------------------------------------------

/// Admission policy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelPolicy {
    /// Max transactions admitted per namespace per sliding 60 s window.
    pub rate_limit: u32,
    /// When false, transactions containing Irreversible actions are rejected
    /// outright. When true they validate, but the execution path is a stub
    /// that refuses every such action at apply time (recording the required
    /// out-of-band approval in the audit log) and lets the failure policy
    /// run.
    pub break_glass_enabled: bool,
}

impl Default for KernelPolicy {
    fn default() -> Self {
        KernelPolicy { rate_limit: 10, break_glass_enabled: false }
    }
}

/// Everything a [`Kernel`] is configured with.
pub struct KernelConfig {
    pub capabilities: CapabilitySet,
    /// Admission scope. `None` disables the scope check (operator kernel);
    /// agents always run against `Some` inferred group.
    pub scope: Option<RecoveryGroup>,
    pub registry: ExtensionRegistry,
    pub policy: KernelPolicy,
    /// Retry budget for Restartable actions (total attempts = retries + 1).
    pub restart_retries: u32,
    pub retry_backoff: Duration,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            capabilities: CapabilitySet::empty(),
            scope: None,
            registry: ExtensionRegistry::empty(),
            policy: KernelPolicy::default(),
            restart_retries: 3,
            retry_backoff: Duration::from_millis(100),
        }
    }
}

// --- errors and reports ----------------------------------------------------------

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{}", .0.render())]
    Rejected(RejectionFeedback),
    #[error(transparent)]
    Wal(#[from] WalError),
    /// Simulated process death mid-transaction. The WAL holds whatever was
    /// journaled; a fresh kernel must run [`Kernel::recover`] over it.
    #[error("kernel crashed (simulated)")]
    Crashed,
    #[error("journaled transaction \"{0}\" no longer parses: {1}")]
    InvalidJournaledTxn(String, String),
    #[error("no pending operator alert for transaction \"{0}\"")]
    NoSuchAlert(String),
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
}

/// How one transaction ended, from the submitting caller's point of view.
#[derive(Debug, Clone)]
pub struct TxnReport {
    pub txn_id: String,
    pub outcome: TxnOutcome,
    /// Set when the transaction aborted before `TxnStart` (precondition
    /// failure at commit time); such aborts leave no WAL trace.
    pub rejection: Option<RejectionFeedback>,
    /// First action failure that triggered the failure policy.
    pub failure: Option<String>,
    /// Forward actions applied during this call.
    pub applied: usize,
}

/// Raised when a compensation or inverse fails: the resource may be
/// inconsistent, so its conflict keys stay locked until
/// [`Kernel::operator_release`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertInfo {
    pub txn_id: String,
    /// Forward index of the action whose undo failed.
    pub action_index: u64,
    pub message: String,
    pub raised_at_us: i64,
}

struct OperatorAlert {
    info: AlertInfo,
    handle: Option<LockHandle>,
}

/// Audit record for a refused break-glass execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub at_us: i64,
    pub txn_id: String,
    pub action_index: u64,
    pub kind: String,
    pub message: String,
}

/// Resolution of one journaled transaction during [`Kernel::recover`].
#[derive(Debug, Clone)]
pub struct RecoveredTxn {
    pub txn_id: String,
    pub outcome: TxnOutcome,
    /// False when the WAL already held an Outcome (nothing to do).
    pub was_in_flight: bool,
    pub note: String,
}

// --- kernel ----------------------------------------------------------------------

pub struct Kernel {
    actuator: Arc<dyn Actuator>,
    journal: Mutex<Box<dyn Journal>>,
    locks: LockRegistry,
    clock: Arc<SimClock>,
    capabilities: CapabilitySet,
    scope: Option<RecoveryGroup>,
    registry: ExtensionRegistry,
    policy: KernelPolicy,
    restart_retries: u32,
    retry_backoff: Duration,
    /// The serialized admission point (see module docs).
    admission: Mutex<()>,
    /// Per-namespace admission timestamps inside the sliding window.
    rate: Mutex<BTreeMap<String, VecDeque<i64>>>,
    /// Every txn_id ever admitted (or recovered); duplicates are rejected.
    admitted: Mutex<BTreeSet<String>>,
    alerts: Mutex<Vec<OperatorAlert>>,
    audit: Mutex<Vec<AuditRecord>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Kernel {
    pub fn new(
        actuator: Arc<dyn Actuator>,
        journal: Box<dyn Journal>,
        clock: Arc<SimClock>,
        config: KernelConfig,
    ) -> Result<Kernel, KernelError> {
        if config.policy.rate_limit == 0 {
            return Err(KernelError::InvalidConfig("rate_limit must be > 0".into()));
        }
        Ok(Kernel {
            actuator,
            journal: Mutex::new(journal),
            locks: LockRegistry::new(),
            clock,
            capabilities: config.capabilities,
            scope: config.scope,
            registry: config.registry,
            policy: config.policy,
            restart_retries: config.restart_retries,
            retry_backoff: config.retry_backoff,
            admission: Mutex::new(()),
            rate: Mutex::new(BTreeMap::new()),
            admitted: Mutex::new(BTreeSet::new()),
            alerts: Mutex::new(Vec::new()),
            audit: Mutex::new(Vec::new()),
        })
    }

    pub fn locks(&self) -> &LockRegistry {
        &self.locks
    }

    pub fn registry(&self) -> &ExtensionRegistry {
        &self.registry
    }

    pub fn pending_alerts(&self) -> Vec<AlertInfo> {
        lock(&self.alerts).iter().map(|a| a.info.clone()).collect()
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        lock(&self.audit).clone()
    }

    /// Releases the locks held by a CompensationFailed transaction after an
    /// operator has reconciled the backing resource.
    pub fn operator_release(&self, txn_id: &str) -> Result<(), KernelError> {
        let mut alerts = lock(&self.alerts);
        let pos = alerts
            .iter()
            .position(|a| a.info.txn_id == txn_id && a.handle.is_some())
            .ok_or_else(|| KernelError::NoSuchAlert(txn_id.to_string()))?;
        let handle = alerts[pos].handle.take();
        drop(alerts);
        drop(handle);
        Ok(())
    }

    // --- validation -------------------------------------------------------------

    /// Parses a transaction document and runs the full admission validation,
    /// read-only. The Err side is the exact feedback line an agent sees.
    pub fn validate_document(&self, text: &str) -> Result<RemediationTransaction, RejectionFeedback> {
        let txn = crate::isa::parse_transaction_with(text, &self.registry)
            .map_err(|v| RejectionFeedback::schema_error(&v))?;
        self.validate(&txn)?;
        Ok(txn)
    }

    /// Admission checks in fixed order: capability, scope, effect type,
    /// conflict, rate limit. First failure wins. Read-only: validating does
    /// not consume rate budget or take locks.
    pub fn validate(&self, txn: &RemediationTransaction) -> Result<(), RejectionFeedback> {
        self.validate_stages(txn, true)
    }

    fn validate_stages(
        &self,
        txn: &RemediationTransaction,
        check_conflicts: bool,
    ) -> Result<(), RejectionFeedback> {
        txn.validate_with(&self.registry)
            .map_err(|v| RejectionFeedback::schema_error(&v))?;
        for action in &txn.actions {
            if !self.capabilities.allows(action.kind_name(), &action.target) {
                return Err(RejectionFeedback::missing_capability(
                    action.kind_name(),
                    action.target.name(),
                ));
            }
        }
        if let Some(scope) = &self.scope {
            for action in &txn.actions {
                if !scope.in_scope(&action.target) {
                    return Err(RejectionFeedback::out_of_scope(action.target.name()));
                }
            }
        }
        if !self.policy.break_glass_enabled {
            for action in &txn.actions {
                let effect = self
                    .registry
                    .effect_type_of_action(action)
                    .unwrap_or(EffectType::Irreversible);
                if effect == EffectType::Irreversible {
                    return Err(RejectionFeedback::irreversible_effect(action.kind_name()));
                }
            }
        }
        if check_conflicts {
            if let Some((held, owner)) = self.locks.find_conflict(&txn.conflict_keys) {
                return Err(RejectionFeedback::conflict(&held.resource_label(), &owner));
            }
        }
        self.rate_check(txn)
    }

    fn rate_check(&self, txn: &RemediationTransaction) -> Result<(), RejectionFeedback> {
        let now = self.clock.now_us();
        let rate = lock(&self.rate);
        for ns in txn.target_namespaces() {
            let in_window = rate
                .get(&ns)
                .map_or(0, |q| q.iter().filter(|&&t| now - t < RATE_WINDOW_US).count());
            if in_window >= self.policy.rate_limit as usize {
                return Err(RejectionFeedback::rate_limited(&ns, self.policy.rate_limit));
            }
        }
        Ok(())
    }

    fn rate_record(&self, txn: &RemediationTransaction) {
        let now = self.clock.now_us();
        let mut rate = lock(&self.rate);
        for ns in txn.target_namespaces() {
            let q = rate.entry(ns).or_default();
            while q.front().is_some_and(|&t| now - t >= RATE_WINDOW_US) {
                q.pop_front();
            }
            q.push_back(now);
        }
    }

    // --- execution --------------------------------------------------------------

    /// Validates, admits, and executes a transaction. A conflict with an
    /// in-flight transaction is rejected (the agent repair loop re-plans).
    pub fn execute(&self, txn: &RemediationTransaction) -> Result<TxnReport, KernelError> {
        self.execute_inner(txn, true)
    }

    /// Like [`execute`](Self::execute), but a conflicting transaction queues
    /// on the contended keys (FIFO) instead of being rejected.
    pub fn execute_queued(&self, txn: &RemediationTransaction) -> Result<TxnReport, KernelError> {
        self.execute_inner(txn, false)
    }

    fn execute_inner(
        &self,
        txn: &RemediationTransaction,
        reject_on_conflict: bool,
    ) -> Result<TxnReport, KernelError> {
        let handle = {
            let _admit = lock(&self.admission);
            if lock(&self.admitted).contains(&txn.txn_id) {
                return Err(KernelError::Rejected(RejectionFeedback::schema_error(
                    &SchemaViolation {
                        field: "txn_id".into(),
                        message: format!("duplicate transaction id \"{}\"", txn.txn_id),
                    },
                )));
            }
            self.validate_stages(txn, reject_on_conflict)
                .map_err(KernelError::Rejected)?;
            let handle = self.locks.acquire(&txn.txn_id, txn.conflict_keys.clone());
            // Preconditions are checked at commit time, against a snapshot
            // taken after the locks are held.
            let snapshot = self.actuator.snapshot();
            if let Some(p) = txn.preconditions.iter().find(|p| !snapshot.satisfies(p)) {
                drop(handle);
                return Ok(TxnReport {
                    txn_id: txn.txn_id.clone(),
                    outcome: TxnOutcome::Aborted,
                    rejection: Some(RejectionFeedback::precondition_failed(p)),
                    failure: None,
                    applied: 0,
                });
            }
            self.rate_record(txn);
            self.journal_append(WalEntryKind::TxnStart { txn: txn.to_json_value() })?;
            lock(&self.admitted).insert(txn.txn_id.clone());
            handle
        };
        self.complete_forward(txn, handle, &BTreeMap::new())
    }

    fn journal_append(&self, kind: WalEntryKind) -> Result<u64, KernelError> {
        match lock(&self.journal).append(kind) {
            Ok(seq) => Ok(seq),
            Err(WalError::Crashed) => Err(KernelError::Crashed),
            Err(e) => Err(KernelError::Wal(e)),
        }
    }

    /// Applies forward actions `0..n`, skipping indices in `already`
    /// (journaled before a crash). Failures trigger the failure policy over
    /// the whole completed prefix, `already` included.
    fn complete_forward(
        &self,
        txn: &RemediationTransaction,
        handle: LockHandle,
        already: &BTreeMap<u64, String>,
    ) -> Result<TxnReport, KernelError> {
        let mut completed: Vec<u64> = already.keys().copied().collect();
        let mut applied = 0usize;
        for (i, action) in txn.actions.iter().enumerate() {
            let index = i as u64;
            if already.contains_key(&index) {
                continue;
            }
            // Tokens are derived, not random: recovery re-applies with the
            // same token and the backend deduplicates (at-most-once).
            let token = format!("{}#{}", txn.txn_id, i);
            match self.apply_forward(txn, index, action, &token) {
                Ok(()) => {
                    self.journal_append(WalEntryKind::ActionComplete {
                        txn_id: txn.txn_id.clone(),
                        action_index: index,
                        idempotency_token: token,
                    })?;
                    completed.push(index);
                    applied += 1;
                }
                Err(ApplyError::Crashed) => return Err(KernelError::Crashed),
                Err(ApplyError::Failure(msg)) => {
                    let failure = format!("action {i} ({}) failed: {msg}", action.kind_name());
                    return self.unwind(txn, handle, &completed, &BTreeSet::new(), failure, applied);
                }
            }
        }
        self.journal_append(WalEntryKind::Outcome {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::Committed,
        })?;
        drop(handle); // locks released only after the Outcome is durable
        Ok(TxnReport {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::Committed,
            rejection: None,
            failure: None,
            applied,
        })
    }

    /// One forward action: break-glass stub, then retry budget for
    /// Restartable kinds.
    fn apply_forward(
        &self,
        txn: &RemediationTransaction,
        index: u64,
        action: &Action,
        token: &str,
    ) -> Result<(), ApplyError> {
        let effect = self
            .registry
            .effect_type_of_action(action)
            .unwrap_or(EffectType::Irreversible);
        if effect == EffectType::Irreversible {
            // Break-glass execution is deliberately a stub: it refuses and
            // records the out-of-band approval that would be required.
            let message = format!(
                "break-glass refused irreversible action \"{}\"; out-of-band operator approval \
                 required and no approval path is configured",
                action.kind_name()
            );
            lock(&self.audit).push(AuditRecord {
                at_us: self.clock.now_us(),
                txn_id: txn.txn_id.clone(),
                action_index: index,
                kind: action.kind_name().to_string(),
                message: message.clone(),
            });
            return Err(ApplyError::Failure(message));
        }
        let retries = if effect == EffectType::Restartable { self.restart_retries } else { 0 };
        let mut attempt = 0;
        loop {
            match self.actuator.apply(action, token) {
                Ok(()) => return Ok(()),
                Err(ApplyError::Crashed) => return Err(ApplyError::Crashed),
                Err(ApplyError::Failure(msg)) => {
                    if attempt >= retries {
                        return Err(ApplyError::Failure(msg));
                    }
                    attempt += 1;
                    self.clock.sleep(self.retry_backoff);
                }
            }
        }
    }

    /// Runs the transaction's failure policy over the completed forward
    /// prefix. `already_rolled` holds forward indices whose undo step was
    /// journaled before a crash (recovery resume).
    ///
    /// Undo steps are journaled as ActionComplete records: the undo of
    /// forward action `j` gets `action_index = n + (n - 1 - j)` (n = action
    /// count), which keeps indices strictly increasing as the rollback walks
    /// backwards, and a token of `{txn}#undo{j}` or `{txn}#comp{j}`.
    fn unwind(
        &self,
        txn: &RemediationTransaction,
        handle: LockHandle,
        completed: &[u64],
        already_rolled: &BTreeSet<u64>,
        failure: String,
        applied: usize,
    ) -> Result<TxnReport, KernelError> {
        let n = txn.actions.len() as u64;
        if txn.failure_policy == FailurePolicy::AbortOnly {
            self.journal_append(WalEntryKind::Outcome {
                txn_id: txn.txn_id.clone(),
                outcome: TxnOutcome::Aborted,
            })?;
            drop(handle);
            return Ok(TxnReport {
                txn_id: txn.txn_id.clone(),
                outcome: TxnOutcome::Aborted,
                rejection: None,
                failure: Some(failure),
                applied,
            });
        }
        for &j in completed.iter().rev() {
            if already_rolled.contains(&j) {
                continue;
            }
            let action = &txn.actions[j as usize];
            let effect = self
                .registry
                .effect_type_of_action(action)
                .unwrap_or(EffectType::Irreversible);
            let undo = match (txn.failure_policy, effect) {
                (FailurePolicy::RollbackAll, EffectType::Reversible) => {
                    match self.registry.inverse_of_action(action) {
                        Ok(inverse) => Some((inverse, format!("{}#undo{}", txn.txn_id, j))),
                        Err(e) => {
                            return self.comp_failed(txn, handle, j, e.to_string(), failure, applied)
                        }
                    }
                }
                (
                    FailurePolicy::RollbackAll | FailurePolicy::Compensate,
                    EffectType::Compensatable,
                ) => {
                    let comp = action.compensation.as_deref().cloned().expect("validated");
                    Some((comp, format!("{}#comp{}", txn.txn_id, j)))
                }
                _ => None,
            };
            let Some((undo_action, token)) = undo else { continue };
            match self.actuator.apply(&undo_action, &token) {
                Ok(()) => {
                    self.journal_append(WalEntryKind::ActionComplete {
                        txn_id: txn.txn_id.clone(),
                        action_index: n + (n - 1 - j),
                        idempotency_token: token,
                    })?;
                }
                Err(ApplyError::Crashed) => return Err(KernelError::Crashed),
                Err(ApplyError::Failure(msg)) => {
                    return self.comp_failed(txn, handle, j, msg, failure, applied);
                }
            }
        }
        self.journal_append(WalEntryKind::Outcome {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::RolledBack,
        })?;
        drop(handle);
        Ok(TxnReport {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::RolledBack,
            rejection: None,
            failure: Some(failure),
            applied,
        })
    }

    /// A compensation or inverse failed: no nested compensation is
    /// attempted. The outcome is journaled, an operator alert raised, and
    /// the transaction's locks stay held until [`Kernel::operator_release`].
    fn comp_failed(
        &self,
        txn: &RemediationTransaction,
        handle: LockHandle,
        action_index: u64,
        comp_message: String,
        failure: String,
        applied: usize,
    ) -> Result<TxnReport, KernelError> {
        self.journal_append(WalEntryKind::Outcome {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::CompensationFailed,
        })?;
        lock(&self.alerts).push(OperatorAlert {
            info: AlertInfo {
                txn_id: txn.txn_id.clone(),
                action_index,
                message: format!(
                    "undo of action {action_index} failed: {comp_message}; conflict keys stay \
                     locked until operator release"
                ),
                raised_at_us: self.clock.now_us(),
            },
            handle: Some(handle),
        });
        Ok(TxnReport {
            txn_id: txn.txn_id.clone(),
            outcome: TxnOutcome::CompensationFailed,
            rejection: None,
            failure: Some(failure),
            applied,
        })
    }

    // --- recovery ---------------------------------------------------------------

    /// Replays a journal read at startup, completing or reverting every
    /// in-flight transaction and journaling its Outcome. Call once, before
    /// admitting new transactions.
    ///
    /// A transaction whose WAL trace shows rollback steps is never completed
    /// forward — part of its prefix is already undone, so finishing forward
    /// would commit a half-reverted state. Rollback resumes instead.
    pub fn recover(&self, prior: &[WalEntry]) -> Result<Vec<RecoveredTxn>, KernelError> {
        let summaries = analyze_wal(prior)?;
        let mut resolved = Vec::with_capacity(summaries.len());
        for summary in summaries {
            lock(&self.admitted).insert(summary.txn_id.clone());
            if let Some(outcome) = summary.outcome {
                resolved.push(RecoveredTxn {
                    txn_id: summary.txn_id,
                    outcome,
                    was_in_flight: false,
                    note: "already resolved".into(),
                });
                continue;
            }
            let txn = transaction_from_value(&summary.doc, &self.registry)
                .map_err(|v| KernelError::InvalidJournaledTxn(summary.txn_id.clone(), v.to_string()))?;
            let handle = self.locks.acquire(&txn.txn_id, txn.conflict_keys.clone());
            let completed: Vec<u64> = summary.forward.keys().copied().collect();
            let (report, note) = if !summary.rollback.is_empty() {
                let already_rolled: BTreeSet<u64> = summary.rollback.iter().copied().collect();
                let report = self.unwind(
                    &txn,
                    handle,
                    &completed,
                    &already_rolled,
                    "crash during rollback".into(),
                    0,
                )?;
                (report, "resumed interrupted rollback".to_string())
            } else {
                let snapshot = self.actuator.snapshot();
                match txn.preconditions.iter().find(|p| !snapshot.satisfies(p)) {
                    None => {
                        let report = self.complete_forward(&txn, handle, &summary.forward)?;
                        let note = format!(
                            "completed forward ({} action(s) already journaled)",
                            summary.forward.len()
                        );
                        (report, note)
                    }
                    Some(p) => {
                        let report = self.unwind(
                            &txn,
                            handle,
                            &completed,
                            &BTreeSet::new(),
                            format!("precondition no longer holds: {p}"),
                            0,
                        )?;
                        (report, "precondition stale; applied failure policy".to_string())
                    }
                }
            };
            resolved.push(RecoveredTxn {
                txn_id: txn.txn_id.clone(),
                outcome: report.outcome,
                was_in_flight: true,
                note,
            });
        }
        Ok(resolved)
    }
}

// --- tests -----------------------------------------------------------------------
