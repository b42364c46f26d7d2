//! Conflict-key locking. A transaction's whole key set is granted
//! atomically: the registry admits waiters in FIFO ticket order, granting
//! the set at the queue head only when none of its keys overlaps a held
//! key. Keys are processed in the ConflictKey total order throughout.
//!
//! All-or-nothing granting (rather than incremental sorted acquisition) is
//! what makes overlap-by-subsumption deadlock-free: `Namespace(prod)` and
//! `Service(prod/cart)` conflict without being equal, so two transactions
//! acquiring one key each in "sorted order" could otherwise block on each
//! other's second key forever.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use crate::isa::ConflictKey;

#[derive(Debug, Default)]
struct LockState {
    held: BTreeMap<ConflictKey, String>,
    queue: VecDeque<u64>,
    next_ticket: u64,
}

#[derive(Debug, Default)]
struct LockShared {
    state: Mutex<LockState>,
    changed: Condvar,
}

impl LockShared {
    fn state(&self) -> MutexGuard<'_, LockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Registry of held conflict keys with FIFO admission.
#[derive(Debug, Clone, Default)]
pub struct LockRegistry {
    shared: Arc<LockShared>,
}

impl LockRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Blocks until every key in the set can be granted at once, in FIFO
    /// arrival order. Transactions with pairwise-disjoint key sets are
    /// granted concurrently.
    pub fn acquire(&self, owner: &str, keys: BTreeSet<ConflictKey>) -> LockHandle {
        let mut state = self.shared.state();
        let ticket = state.next_ticket;
        state.next_ticket += 1;
        state.queue.push_back(ticket);
        loop {
            let at_head = state.queue.front() == Some(&ticket);
            if at_head && !keys.iter().any(|k| overlaps_held(&state.held, k)) {
                state.queue.pop_front();
                for key in &keys {
                    state.held.insert(key.clone(), owner.to_string());
                }
                // The next ticket may be grantable too (disjoint sets).
                self.shared.changed.notify_all();
                return LockHandle {
                    shared: Arc::clone(&self.shared),
                    keys,
                    released: false,
                };
            }
            state = self
                .shared
                .changed
                .wait(state)
                .unwrap_or_else(|e| e.into_inner());
        }
    }

    /// First held key overlapping the candidate set, scanning both sides in
    /// key order (deterministic conflict attribution for feedback).
    pub fn find_conflict(&self, keys: &BTreeSet<ConflictKey>) -> Option<(ConflictKey, String)> {
        let state = self.shared.state();
        for key in keys {
            for (held, owner) in &state.held {
                if held.overlaps(key) {
                    return Some((held.clone(), owner.clone()));
                }
            }
        }
        None
    }

    pub fn held_keys(&self) -> Vec<(ConflictKey, String)> {
        self.shared
            .state()
            .held
            .iter()
            .map(|(k, o)| (k.clone(), o.clone()))
            .collect()
    }

    pub fn waiter_count(&self) -> usize {
        self.shared.state().queue.len()
    }
}

fn overlaps_held(held: &BTreeMap<ConflictKey, String>, key: &ConflictKey) -> bool {
    held.keys().any(|h| h.overlaps(key))
}

/// Granted keys; releasing (or dropping) returns them to the registry and
/// wakes waiters.
#[derive(Debug)]
pub struct LockHandle {
    shared: Arc<LockShared>,
    keys: BTreeSet<ConflictKey>,
    released: bool,
}

impl LockHandle {
    pub fn keys(&self) -> &BTreeSet<ConflictKey> {
        &self.keys
    }

    pub fn release(mut self) {
        self.release_inner();
    }

    fn release_inner(&mut self) {
        if self.released {
            return;
        }
        self.released = true;
        let mut state = self.shared.state();
        for key in &self.keys {
            state.held.remove(key);
        }
        drop(state);
        self.shared.changed.notify_all();
    }
}

impl Drop for LockHandle {
    fn drop(&mut self) {
        self.release_inner();
    }
}

// --- tests -------------------------------------------------------------------
