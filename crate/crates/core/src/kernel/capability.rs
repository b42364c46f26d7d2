//! Capability grants: which action verbs a principal may aim at which
//! targets. An empty set permits nothing.

use std::collections::BTreeSet;

use crate::isa::ConflictKey;
use crate::trace::ServiceRef;

/// A set of (verb, target pattern) grants. Patterns reuse the conflict-key
/// granularities: an exact service, a namespace, or the whole cluster.
///
/// Grants only ever *allow*, so "most specific wins" is outcome-irrelevant:
/// an action is permitted exactly when any grant covers it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CapabilitySet {
    grants: BTreeSet<(String, ConflictKey)>,
}

impl CapabilitySet {
    /// Permits nothing.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn grant(&mut self, verb: impl Into<String>, pattern: ConflictKey) -> &mut Self {
        self.grants.insert((verb.into(), pattern));
        self
    }

    pub fn with_grant(mut self, verb: impl Into<String>, pattern: ConflictKey) -> Self {
        self.grant(verb, pattern);
        self
    }

    /// Grants every built-in verb over the given pattern.
    pub fn with_all_builtin_verbs(mut self, pattern: ConflictKey) -> Self {
        for kind in crate::isa::ActionKind::ALL {
            self.grant(kind.verb(), pattern.clone());
        }
        self
    }

    pub fn allows(&self, verb: &str, target: &ServiceRef) -> bool {
        self.grants
            .iter()
            .any(|(v, pattern)| v == verb && pattern.subsumes(target))
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }
}

// --- tests ---------------------------------------------------------------------
