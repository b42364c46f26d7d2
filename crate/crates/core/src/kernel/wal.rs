//! Write-ahead log: JSON Lines, one entry per line, `seq` strictly
//! increasing from 1. An entry is durable once `append` returns.
//!
//! Per transaction the log holds exactly one `TxnStart` (carrying the full
//! transaction document, so recovery can re-parse it under the kernel's
//! extension registry), `ActionComplete` entries with strictly increasing
//! indices, and at most one terminal `Outcome`. Rollback steps are journaled
//! as `ActionComplete` too: the undo of forward action `j` in an `n`-action
//! transaction is written with index `n + (n-1-j)` — rollback runs in
//! reverse, so indices keep increasing — while its token (`<txn>#undo<j>` or
//! `<txn>#comp<j>`) names the forward action it reverts.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

// --- entry types -------------------------------------------------------------

/// Terminal disposition of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnOutcome {
    Committed,
    RolledBack,
    Aborted,
    CompensationFailed,
}

impl std::fmt::Display for TxnOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TxnOutcome::Committed => "committed",
            TxnOutcome::RolledBack => "rolled_back",
            TxnOutcome::Aborted => "aborted",
            TxnOutcome::CompensationFailed => "compensation_failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WalEntryKind {
    TxnStart {
        txn: Value,
    },
    ActionComplete {
        txn_id: String,
        action_index: u64,
        idempotency_token: String,
    },
    Outcome {
        txn_id: String,
        outcome: TxnOutcome,
    },
}

impl WalEntryKind {
    pub fn txn_id(&self) -> Option<&str> {
        match self {
            WalEntryKind::TxnStart { txn } => txn.get("txn_id").and_then(Value::as_str),
            WalEntryKind::ActionComplete { txn_id, .. } | WalEntryKind::Outcome { txn_id, .. } => {
                Some(txn_id)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: WalEntryKind,
}

// --- errors ---------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum WalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Unreadable or out-of-order entry before the tail. Unrecoverable.
    #[error("write-ahead log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    /// Structurally impossible entry sequence (e.g. two TxnStarts).
    #[error("write-ahead log shape violation: {0}")]
    Shape(String),
    #[error("journal write refused: simulated crash")]
    Crashed,
}

// --- journal trait -----------------------------------------------------------------

/// Ordered, flushed, append-only storage for WAL entries. `append` returning
/// is the durability point.
pub trait Journal: Send {
    fn append(&mut self, kind: WalEntryKind) -> Result<u64, WalError>;
    fn next_seq(&self) -> u64;
}

// --- file journal -------------------------------------------------------------------

/// Diagnostic for a truncated (torn) final line discovered on open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    pub line: usize,
    pub discarded_bytes: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct WalReadReport {
    pub entries: Vec<WalEntry>,
    pub torn_tail: Option<TornTail>,
}

/// Parses WAL text. The final line, if unreadable, is reported as torn;
/// anything unreadable (or out of order) before that is corruption.
pub fn parse_wal_text(text: &str) -> Result<WalReadReport, WalError> {
    let mut report = WalReadReport::default();
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut consumed = 0usize;
    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let is_last = i + 1 == lines.len();
        let body = raw.strip_suffix('\n').unwrap_or(raw);
        let parsed: Result<WalEntry, String> = if body.trim().is_empty() {
            Err("empty line".to_string())
        } else {
            serde_json::from_str(body).map_err(|e| e.to_string())
        };
        match parsed {
            Ok(entry) => {
                let expected = report.entries.len() as u64 + 1;
                if entry.seq != expected {
                    return Err(WalError::Corrupt {
                        line: line_no,
                        message: format!("seq {} where {} was expected", entry.seq, expected),
                    });
                }
                report.entries.push(entry);
                consumed += raw.len();
            }
            Err(message) if is_last => {
                report.torn_tail = Some(TornTail {
                    line: line_no,
                    discarded_bytes: text.len() - consumed,
                    message: format!("torn final entry ({message}); truncating"),
                });
                break;
            }
            Err(message) => return Err(WalError::Corrupt { line: line_no, message }),
        }
    }
    Ok(report)
}

/// JSON Lines WAL in a file. Every append writes one line and flushes.
#[derive(Debug)]
pub struct FileJournal {
    file: File,
    next_seq: u64,
}

impl FileJournal {
    /// Creates a fresh (empty) journal, truncating anything present.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, WalError> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(FileJournal { file, next_seq: 1 })
    }

    /// Opens an existing journal (or starts a new one), validating every
    /// entry. A torn final line is physically truncated away and reported;
    /// corruption before the tail is fatal.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, WalReadReport), WalError> {
        let path = path.as_ref();
        let mut text = String::new();
        match File::open(path) {
            Ok(mut f) => {
                f.read_to_string(&mut text)?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let report = parse_wal_text(&text)?;
        let keep_bytes = text.len()
            - report.torn_tail.as_ref().map_or(0, |t| t.discarded_bytes);
        let file = OpenOptions::new().create(true).write(true).open(path)?;
        file.set_len(keep_bytes as u64)?;
        let mut journal = FileJournal { file, next_seq: report.entries.len() as u64 + 1 };
        use std::io::Seek;
        journal.file.seek(std::io::SeekFrom::End(0))?;
        Ok((journal, report))
    }
}

impl Journal for FileJournal {
    fn append(&mut self, kind: WalEntryKind) -> Result<u64, WalError> {
        let seq = self.next_seq;
        let mut line = serde_json::to_string(&WalEntry { seq, kind })
            .map_err(|e| WalError::Shape(format!("unserializable entry: {e}")))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.next_seq += 1;
        Ok(seq)
    }

    fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

// --- memory journal ---------------------------------------------------------------

/// In-memory journal; the entry vector is shared so tests can observe
/// journal state from actuator probes mid-transaction.
#[derive(Debug, Default)]
pub struct MemoryJournal {
    entries: Arc<Mutex<Vec<WalEntry>>>,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shared view of the entries (live, not a snapshot).
    pub fn log(&self) -> Arc<Mutex<Vec<WalEntry>>> {
        Arc::clone(&self.entries)
    }

    pub fn snapshot(&self) -> Vec<WalEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Journal for MemoryJournal {
    fn append(&mut self, kind: WalEntryKind) -> Result<u64, WalError> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let seq = entries.len() as u64 + 1;
        entries.push(WalEntry { seq, kind });
        Ok(seq)
    }

    fn next_seq(&self) -> u64 {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len() as u64 + 1
    }
}

// --- crash injection -----------------------------------------------------------------

/// Shared step counter that simulates a process crash at a chosen point.
/// Both the journal and the actuator count their operations against it;
/// once the crash step is reached, everything refuses forever.
#[derive(Debug)]
pub struct CrashSwitch {
    crash_at: u64,
    counter: AtomicU64,
}

impl CrashSwitch {
    /// Crash *instead of* performing the `step`-th operation (1-based).
    pub fn at(step: u64) -> Arc<Self> {
        Arc::new(CrashSwitch { crash_at: step, counter: AtomicU64::new(0) })
    }

    pub fn never() -> Arc<Self> {
        Arc::new(CrashSwitch { crash_at: u64::MAX, counter: AtomicU64::new(0) })
    }

    /// True to proceed; false once crashed.
    pub fn step(&self) -> bool {
        self.counter.fetch_add(1, Ordering::SeqCst) + 1 < self.crash_at
    }

    pub fn tripped(&self) -> bool {
        self.counter.load(Ordering::SeqCst) + 1 >= self.crash_at
    }
}

/// Journal wrapper that stops persisting at the crash point.
pub struct CrashingJournal<J: Journal> {
    inner: J,
    switch: Arc<CrashSwitch>,
}

impl<J: Journal> CrashingJournal<J> {
    pub fn new(inner: J, switch: Arc<CrashSwitch>) -> Self {
        CrashingJournal { inner, switch }
    }
}

impl<J: Journal> Journal for CrashingJournal<J> {
    fn append(&mut self, kind: WalEntryKind) -> Result<u64, WalError> {
        if !self.switch.step() {
            return Err(WalError::Crashed);
        }
        self.inner.append(kind)
    }

    fn next_seq(&self) -> u64 {
        self.inner.next_seq()
    }
}

// --- structural analysis ----------------------------------------------------------

/// Which phase an ActionComplete token encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenPhase {
    Forward(u64),
    Undo(u64),
    Compensation(u64),
}

pub fn classify_token(txn_id: &str, token: &str) -> Option<TokenPhase> {
    let rest = token.strip_prefix(txn_id)?.strip_prefix('#')?;
    if let Some(j) = rest.strip_prefix("undo") {
        j.parse().ok().map(TokenPhase::Undo)
    } else if let Some(j) = rest.strip_prefix("comp") {
        j.parse().ok().map(TokenPhase::Compensation)
    } else {
        rest.parse().ok().map(TokenPhase::Forward)
    }
}

/// Per-transaction digest of a validated WAL.
#[derive(Debug, Clone)]
pub struct WalTxnSummary {
    pub txn_id: String,
    pub start_seq: u64,
    pub doc: Value,
    /// Forward actions completed: index → idempotency token.
    pub forward: BTreeMap<u64, String>,
    /// Rollback steps completed, as the *forward* indices they reverted,
    /// in journal order.
    pub rollback: Vec<u64>,
    pub outcome: Option<TxnOutcome>,
}

impl WalTxnSummary {
    pub fn in_flight(&self) -> bool {
        self.outcome.is_none()
    }
}

/// Validates the per-transaction shape invariants and digests the log,
/// in TxnStart order.
pub fn analyze_wal(entries: &[WalEntry]) -> Result<Vec<WalTxnSummary>, WalError> {
    let mut order: Vec<String> = Vec::new();
    let mut txns: BTreeMap<String, WalTxnSummary> = BTreeMap::new();
    for entry in entries {
        match &entry.kind {
            WalEntryKind::TxnStart { txn } => {
                let txn_id = txn
                    .get("txn_id")
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        WalError::Shape(format!("seq {}: TxnStart without txn_id", entry.seq))
                    })?
                    .to_string();
                if txns.contains_key(&txn_id) {
                    return Err(WalError::Shape(format!(
                        "seq {}: duplicate TxnStart for \"{txn_id}\"",
                        entry.seq
                    )));
                }
                order.push(txn_id.clone());
                txns.insert(
                    txn_id.clone(),
                    WalTxnSummary {
                        txn_id,
                        start_seq: entry.seq,
                        doc: txn.clone(),
                        forward: BTreeMap::new(),
                        rollback: Vec::new(),
                        outcome: None,
                    },
                );
            }
            WalEntryKind::ActionComplete { txn_id, action_index, idempotency_token } => {
                let txn = txns.get_mut(txn_id).ok_or_else(|| {
                    WalError::Shape(format!(
                        "seq {}: ActionComplete for unknown \"{txn_id}\"",
                        entry.seq
                    ))
                })?;
                if txn.outcome.is_some() {
                    return Err(WalError::Shape(format!(
                        "seq {}: ActionComplete after Outcome for \"{txn_id}\"",
                        entry.seq
                    )));
                }
                let last = txn
                    .forward
                    .keys()
                    .last()
                    .copied()
                    .max(txn.rollback.last().map(|j| index_of_rollback(txn, *j)));
                if let Some(last) = last {
                    if *action_index <= last {
                        return Err(WalError::Shape(format!(
                            "seq {}: action index {} not increasing for \"{txn_id}\"",
                            entry.seq, action_index
                        )));
                    }
                }
                match classify_token(txn_id, idempotency_token) {
                    Some(TokenPhase::Forward(i)) if i == *action_index => {
                        txn.forward.insert(i, idempotency_token.clone());
                    }
                    Some(TokenPhase::Undo(j)) | Some(TokenPhase::Compensation(j)) => {
                        txn.rollback.push(j);
                    }
                    _ => {
                        return Err(WalError::Shape(format!(
                            "seq {}: token \"{idempotency_token}\" does not match txn \"{txn_id}\" index {action_index}",
                            entry.seq
                        )));
                    }
                }
            }
            WalEntryKind::Outcome { txn_id, outcome } => {
                let txn = txns.get_mut(txn_id).ok_or_else(|| {
                    WalError::Shape(format!("seq {}: Outcome for unknown \"{txn_id}\"", entry.seq))
                })?;
                if txn.outcome.is_some() {
                    return Err(WalError::Shape(format!(
                        "seq {}: second Outcome for \"{txn_id}\"",
                        entry.seq
                    )));
                }
                txn.outcome = Some(*outcome);
            }
        }
    }
    Ok(order.into_iter().map(|id| txns.remove(&id).expect("tracked")).collect())
}

/// The journal index a rollback step for forward index `j` was written at,
/// given the action count from the transaction document (best effort: used
/// only for monotonicity checks, so absence degrades to no check).
fn index_of_rollback(txn: &WalTxnSummary, j: u64) -> u64 {
    let n = txn
        .doc
        .get("actions")
        .and_then(Value::as_array)
        .map(|a| a.len() as u64)
        .unwrap_or(0);
    n + n.saturating_sub(1).saturating_sub(j)
}

// --- tests ---------------------------------------------------------------------------
