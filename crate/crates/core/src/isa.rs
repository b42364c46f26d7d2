//! The remediation instruction set: seven typed actions classified by
//! rollback semantics, composed into transactions that declare conflict
//! keys, preconditions, and a failure policy.
//!
//! Agents author transactions as JSON documents; [`parse_transaction`] is
//! the only way in, and it enforces the full schema — unknown kinds, missing
//! compensation, or uncovered targets are rejected with an error naming the
//! first violated field. Extension actions can be registered at runtime but
//! must declare an effect type, inverse/compensation logic, and a conflict
//! granularity; none ship by default.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::trace::ServiceRef;

// --- errors -----------------------------------------------------------------

/// A schema violation, naming the first bad field (JSONPath-ish, rooted at `$`).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct SchemaViolation {
    pub field: String,
    pub message: String,
}

impl SchemaViolation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaViolation { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("action kind \"{0}\" is not reversible")]
    NotReversible(String),
    #[error("no mechanical inverse: {0}")]
    NoMechanicalInverse(String),
    #[error("extension name \"{0}\" collides with a built-in action kind")]
    ReservedKind(String),
    #[error("reversible extension \"{0}\" must register an inverse")]
    MissingExtensionInverse(String),
    #[error("extension \"{0}\" already registered")]
    DuplicateExtension(String),
}

// --- effect types and action kinds -------------------------------------------

/// Rollback classification of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectType {
    /// Safe to re-execute on transient failure (e.g. a restart).
    Restartable,
    /// Mechanically invertible; the kernel derives the inverse.
    Reversible,
    /// Undone only by explicit, stored compensation.
    Compensatable,
    /// No undo exists; blocked unless break-glass is enabled.
    Irreversible,
}

/// The seven built-in action kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActionKind {
    Restart,
    Drain,
    RestoreTraffic,
    CircuitBreak,
    RateLimit,
    Scale,
    RollbackConfig,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Restart,
        ActionKind::Drain,
        ActionKind::RestoreTraffic,
        ActionKind::CircuitBreak,
        ActionKind::RateLimit,
        ActionKind::Scale,
        ActionKind::RollbackConfig,
    ];

    /// The wire name (JSON `kind` field, capability verb).
    pub fn verb(self) -> &'static str {
        match self {
            ActionKind::Restart => "restart",
            ActionKind::Drain => "drain",
            ActionKind::RestoreTraffic => "restore_traffic",
            ActionKind::CircuitBreak => "circuit_break",
            ActionKind::RateLimit => "rate_limit",
            ActionKind::Scale => "scale",
            ActionKind::RollbackConfig => "rollback_config",
        }
    }

    pub fn parse_verb(verb: &str) -> Option<ActionKind> {
        ActionKind::ALL.into_iter().find(|k| k.verb() == verb)
    }

    pub fn effect_type(self) -> EffectType {
        match self {
            ActionKind::Restart => EffectType::Restartable,
            ActionKind::Drain => EffectType::Compensatable,
            ActionKind::RestoreTraffic => EffectType::Reversible,
            ActionKind::CircuitBreak => EffectType::Reversible,
            ActionKind::RateLimit => EffectType::Reversible,
            ActionKind::Scale => EffectType::Reversible,
            ActionKind::RollbackConfig => EffectType::Compensatable,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

/// Effect classification of a built-in kind.
pub fn effect_type_of(kind: ActionKind) -> EffectType {
    kind.effect_type()
}

// --- traffic state ------------------------------------------------------------

/// Whether a service is taking live traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficState {
    Serving,
    Drained,
}

impl fmt::Display for TrafficState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficState::Serving => "serving",
            TrafficState::Drained => "drained",
        })
    }
}

// --- actions --------------------------------------------------------------------

/// Kind-specific parameters.
///
/// Two variants have internal-only forms that derived inverses use but that
/// transactions may not carry: `RateLimit { limit_rps: None }` (remove the
/// limit — the inverse of setting one; the reverse direction has no
/// mechanical inverse since the prior limit is unknown) and
/// `CircuitBreak { remove: true }` (reset the breaker).
#[derive(Debug, Clone, PartialEq)]
pub enum ActionParams {
    Restart { grace_period_ms: u64 },
    Drain,
    RestoreTraffic,
    CircuitBreak { dependency: ServiceRef, remove: bool },
    RateLimit { limit_rps: Option<f64> },
    Scale { delta: i64 },
    RollbackConfig { to_version: String },
    Extension { kind: String, params: Map<String, Value> },
}

/// One remediation step against one service.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub target: ServiceRef,
    pub params: ActionParams,
    /// Explicit undo; present exactly on Compensatable actions.
    pub compensation: Option<Box<Action>>,
}

impl Action {
    pub fn restart(target: ServiceRef, grace_period_ms: u64) -> Action {
        Action { target, params: ActionParams::Restart { grace_period_ms }, compensation: None }
    }

    /// Drain with its mandatory compensation (restore traffic on the same
    /// target) attached.
    pub fn drain(target: ServiceRef) -> Action {
        let compensation = Box::new(Action::restore_traffic(target.clone()));
        Action { target, params: ActionParams::Drain, compensation: Some(compensation) }
    }

    pub fn restore_traffic(target: ServiceRef) -> Action {
        Action { target, params: ActionParams::RestoreTraffic, compensation: None }
    }

    pub fn circuit_break(target: ServiceRef, dependency: ServiceRef) -> Action {
        Action {
            target,
            params: ActionParams::CircuitBreak { dependency, remove: false },
            compensation: None,
        }
    }

    pub fn rate_limit(target: ServiceRef, limit_rps: f64) -> Action {
        Action {
            target,
            params: ActionParams::RateLimit { limit_rps: Some(limit_rps) },
            compensation: None,
        }
    }

    pub fn scale(target: ServiceRef, delta: i64) -> Action {
        Action { target, params: ActionParams::Scale { delta }, compensation: None }
    }

    /// RollbackConfig stores the version to restore on compensation
    /// explicitly (`prior_version`), so WAL replay never needs the backend
    /// to remember history.
    pub fn rollback_config(
        target: ServiceRef,
        to_version: impl Into<String>,
        prior_version: impl Into<String>,
    ) -> Action {
        let compensation = Box::new(Action {
            target: target.clone(),
            params: ActionParams::RollbackConfig { to_version: prior_version.into() },
            compensation: None,
        });
        Action {
            target,
            params: ActionParams::RollbackConfig { to_version: to_version.into() },
            compensation: Some(compensation),
        }
    }

    pub fn extension(
        kind: impl Into<String>,
        target: ServiceRef,
        params: Map<String, Value>,
    ) -> Action {
        Action {
            target,
            params: ActionParams::Extension { kind: kind.into(), params },
            compensation: None,
        }
    }

    /// The built-in kind, if this is not an extension action.
    pub fn kind(&self) -> Option<ActionKind> {
        match &self.params {
            ActionParams::Restart { .. } => Some(ActionKind::Restart),
            ActionParams::Drain => Some(ActionKind::Drain),
            ActionParams::RestoreTraffic => Some(ActionKind::RestoreTraffic),
            ActionParams::CircuitBreak { .. } => Some(ActionKind::CircuitBreak),
            ActionParams::RateLimit { .. } => Some(ActionKind::RateLimit),
            ActionParams::Scale { .. } => Some(ActionKind::Scale),
            ActionParams::RollbackConfig { .. } => Some(ActionKind::RollbackConfig),
            ActionParams::Extension { .. } => None,
        }
    }

    /// The wire name: built-in verb or extension kind.
    pub fn kind_name(&self) -> &str {
        match &self.params {
            ActionParams::Extension { kind, .. } => kind,
            _ => self.kind().expect("non-extension").verb(),
        }
    }

    pub fn to_json_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("kind".into(), Value::String(self.kind_name().to_string()));
        map.insert("target".into(), Value::String(self.target.canonical()));
        match &self.params {
            ActionParams::Restart { grace_period_ms } => {
                map.insert("grace_period_ms".into(), (*grace_period_ms).into());
            }
            ActionParams::Drain | ActionParams::RestoreTraffic => {}
            ActionParams::CircuitBreak { dependency, remove } => {
                map.insert("dependency".into(), Value::String(dependency.canonical()));
                // Only derived inverses set `remove`; the schema has no such
                // field, so it is emitted only when true (log fidelity).
                if *remove {
                    map.insert("remove".into(), Value::Bool(true));
                }
            }
            ActionParams::RateLimit { limit_rps } => {
                map.insert("limit_rps".into(), limit_rps.map_or(Value::Null, |v| v.into()));
            }
            ActionParams::Scale { delta } => {
                map.insert("delta".into(), (*delta).into());
            }
            ActionParams::RollbackConfig { to_version } => {
                map.insert("to_version".into(), Value::String(to_version.clone()));
            }
            ActionParams::Extension { params, .. } => {
                for (k, v) in params {
                    map.insert(k.clone(), v.clone());
                }
            }
        }
        if let Some(compensation) = &self.compensation {
            map.insert("compensation".into(), compensation.to_json_value());
        }
        Value::Object(map)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind_name(), self.target)?;
        match &self.params {
            ActionParams::Restart { grace_period_ms } => write!(f, " grace={grace_period_ms}ms"),
            ActionParams::CircuitBreak { dependency, remove } => {
                write!(f, " dep={dependency}{}", if *remove { " remove" } else { "" })
            }
            ActionParams::RateLimit { limit_rps: Some(rps) } => write!(f, " rps={rps}"),
            ActionParams::RateLimit { limit_rps: None } => write!(f, " rps=unlimited"),
            ActionParams::Scale { delta } => write!(f, " delta={delta:+}"),
            ActionParams::RollbackConfig { to_version } => write!(f, " to={to_version}"),
            _ => Ok(()),
        }
    }
}

/// Mechanical inverse of a Reversible action (Table-driven):
/// `Scale{delta}` ↔ `Scale{-delta}`, `RateLimit{r}` → remove limit,
/// `CircuitBreak` ↔ reset, `RestoreTraffic` ↔ `Drain`.
///
/// Errors on non-Reversible kinds and on the one direction with no
/// mechanical inverse (un-removing a rate limit needs the prior value).
pub fn inverse_of(action: &Action) -> Result<Action, IsaError> {
    match &action.params {
        ActionParams::RestoreTraffic => Ok(Action::drain(action.target.clone())),
        ActionParams::CircuitBreak { dependency, remove } => Ok(Action {
            target: action.target.clone(),
            params: ActionParams::CircuitBreak { dependency: dependency.clone(), remove: !remove },
            compensation: None,
        }),
        ActionParams::RateLimit { limit_rps: Some(_) } => Ok(Action {
            target: action.target.clone(),
            params: ActionParams::RateLimit { limit_rps: None },
            compensation: None,
        }),
        ActionParams::RateLimit { limit_rps: None } => Err(IsaError::NoMechanicalInverse(
            "restoring a removed rate limit requires the prior value".into(),
        )),
        ActionParams::Scale { delta } => Ok(Action {
            target: action.target.clone(),
            params: ActionParams::Scale {
                delta: delta.checked_neg().ok_or_else(|| {
                    IsaError::NoMechanicalInverse("scale delta out of range".into())
                })?,
            },
            compensation: None,
        }),
        _ => Err(IsaError::NotReversible(action.kind_name().to_string())),
    }
}

// --- conflict keys ---------------------------------------------------------------

/// Lock granularity, coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyGranularity {
    Cluster,
    Namespace,
    Service,
}

impl KeyGranularity {
    pub fn label(self) -> &'static str {
        match self {
            KeyGranularity::Cluster => "cluster",
            KeyGranularity::Namespace => "namespace",
            KeyGranularity::Service => "service",
        }
    }
}

/// A lock identifier. Total order: Cluster < Namespace < Service, then
/// lexicographic — the deterministic order locks are processed in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConflictKey {
    Cluster,
    Namespace(String),
    Service(ServiceRef),
}

impl ConflictKey {
    pub fn granularity(&self) -> KeyGranularity {
        match self {
            ConflictKey::Cluster => KeyGranularity::Cluster,
            ConflictKey::Namespace(_) => KeyGranularity::Namespace,
            ConflictKey::Service(_) => KeyGranularity::Service,
        }
    }

    /// Does this key cover actions on `target`?
    pub fn subsumes(&self, target: &ServiceRef) -> bool {
        match self {
            ConflictKey::Cluster => true,
            ConflictKey::Namespace(ns) => ns == target.namespace(),
            ConflictKey::Service(s) => s == target,
        }
    }

    /// Two keys overlap when one subsumes the other's scope: Cluster
    /// overlaps everything, a Namespace overlaps itself and its Services,
    /// Services overlap only on equality.
    pub fn overlaps(&self, other: &ConflictKey) -> bool {
        use ConflictKey::*;
        match (self, other) {
            (Cluster, _) | (_, Cluster) => true,
            (Namespace(a), Namespace(b)) => a == b,
            (Namespace(ns), Service(s)) | (Service(s), Namespace(ns)) => s.namespace() == ns,
            (Service(a), Service(b)) => a == b,
        }
    }

    /// `<granularity>/<ref>` form used in conflict feedback ("cluster",
    /// "namespace/prod", "service/prod/cart").
    pub fn resource_label(&self) -> String {
        match self {
            ConflictKey::Cluster => "cluster".into(),
            ConflictKey::Namespace(ns) => format!("namespace/{ns}"),
            ConflictKey::Service(s) => format!("service/{s}"),
        }
    }

    pub fn to_json_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("granularity".into(), Value::String(self.granularity().label().into()));
        match self {
            ConflictKey::Cluster => {}
            ConflictKey::Namespace(ns) => {
                map.insert("namespace".into(), Value::String(ns.clone()));
            }
            ConflictKey::Service(s) => {
                map.insert("ref".into(), Value::String(s.canonical()));
            }
        }
        Value::Object(map)
    }
}

impl Ord for ConflictKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use ConflictKey::*;
        self.granularity().cmp(&other.granularity()).then_with(|| match (self, other) {
            (Namespace(a), Namespace(b)) => a.cmp(b),
            (Service(a), Service(b)) => a.cmp(b),
            _ => std::cmp::Ordering::Equal,
        })
    }
}

impl PartialOrd for ConflictKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ConflictKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.resource_label())
    }
}

// --- preconditions ------------------------------------------------------------------

/// A state assertion checked against a backend snapshot at commit time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Precondition {
    ServiceExists(ServiceRef),
    ReplicaCountAtLeast(ServiceRef, u32),
    ServiceHealthy(ServiceRef),
    TrafficState(ServiceRef, TrafficState),
}

impl Precondition {
    pub fn service(&self) -> &ServiceRef {
        match self {
            Precondition::ServiceExists(s)
            | Precondition::ReplicaCountAtLeast(s, _)
            | Precondition::ServiceHealthy(s)
            | Precondition::TrafficState(s, _) => s,
        }
    }

    pub fn check_name(&self) -> &'static str {
        match self {
            Precondition::ServiceExists(_) => "service_exists",
            Precondition::ReplicaCountAtLeast(..) => "replica_count_at_least",
            Precondition::ServiceHealthy(_) => "service_healthy",
            Precondition::TrafficState(..) => "traffic_state",
        }
    }

    pub fn to_json_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("check".into(), Value::String(self.check_name().into()));
        map.insert("service".into(), Value::String(self.service().canonical()));
        match self {
            Precondition::ReplicaCountAtLeast(_, n) => {
                map.insert("count".into(), (*n).into());
            }
            Precondition::TrafficState(_, state) => {
                map.insert("state".into(), Value::String(state.to_string()));
            }
            _ => {}
        }
        Value::Object(map)
    }
}

impl fmt::Display for Precondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precondition::ServiceExists(s) => write!(f, "service_exists({s})"),
            Precondition::ReplicaCountAtLeast(s, n) => {
                write!(f, "replica_count_at_least({s}, {n})")
            }
            Precondition::ServiceHealthy(s) => write!(f, "service_healthy({s})"),
            Precondition::TrafficState(s, t) => write!(f, "traffic_state({s}, {t})"),
        }
    }
}

// --- transactions -------------------------------------------------------------------

/// What to do when an action fails after its retries are exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Undo completed Reversible actions via their inverses and completed
    /// Compensatable actions via their compensations, in reverse order.
    RollbackAll,
    /// Execute only the compensations of completed Compensatable actions,
    /// in reverse order.
    Compensate,
    /// Stop; leave completed effects in place.
    AbortOnly,
}

impl FailurePolicy {
    pub fn wire_name(self) -> &'static str {
        match self {
            FailurePolicy::RollbackAll => "rollback_all",
            FailurePolicy::Compensate => "compensate",
            FailurePolicy::AbortOnly => "abort_only",
        }
    }

    fn parse(s: &str) -> Option<FailurePolicy> {
        match s {
            "rollback_all" => Some(FailurePolicy::RollbackAll),
            "compensate" => Some(FailurePolicy::Compensate),
            "abort_only" => Some(FailurePolicy::AbortOnly),
            _ => None,
        }
    }
}

/// An ordered program of remediation actions executed transactionally.
#[derive(Debug, Clone, PartialEq)]
pub struct RemediationTransaction {
    pub txn_id: String,
    pub actions: Vec<Action>,
    pub conflict_keys: BTreeSet<ConflictKey>,
    pub preconditions: Vec<Precondition>,
    pub failure_policy: FailurePolicy,
}

impl RemediationTransaction {
    pub fn new(
        txn_id: impl Into<String>,
        actions: Vec<Action>,
        conflict_keys: impl IntoIterator<Item = ConflictKey>,
        preconditions: Vec<Precondition>,
        failure_policy: FailurePolicy,
    ) -> Self {
        RemediationTransaction {
            txn_id: txn_id.into(),
            actions,
            conflict_keys: conflict_keys.into_iter().collect(),
            preconditions,
            failure_policy,
        }
    }

    /// Validates all type invariants (see [`parse_transaction`] errors).
    pub fn validate(&self) -> Result<(), SchemaViolation> {
        self.validate_with(&ExtensionRegistry::empty())
    }

    pub fn validate_with(&self, registry: &ExtensionRegistry) -> Result<(), SchemaViolation> {
        if self.txn_id.is_empty() {
            return Err(SchemaViolation::new("txn_id", "must be a non-empty string"));
        }
        if self.actions.is_empty() {
            return Err(SchemaViolation::new("actions", "must be a non-empty array"));
        }
        if self.conflict_keys.is_empty() {
            return Err(SchemaViolation::new("conflict_keys", "must be a non-empty array"));
        }
        for (i, action) in self.actions.iter().enumerate() {
            let path = format!("actions[{i}]");
            validate_action(action, &path, registry, false)?;
            if !self.conflict_keys.iter().any(|k| k.subsumes(&action.target)) {
                return Err(SchemaViolation::new(
                    "conflict_keys",
                    format!(
                        "action[{i}] target \"{}\" is not covered by any conflict key",
                        action.target
                    ),
                ));
            }
            if let ActionParams::Extension { kind, .. } = &action.params {
                let spec = registry.get(kind).expect("validated by validate_action");
                let covered = self.conflict_keys.iter().any(|k| {
                    k.subsumes(&action.target) && k.granularity() <= spec.required_granularity
                });
                if !covered {
                    return Err(SchemaViolation::new(
                        "conflict_keys",
                        format!(
                            "extension \"{kind}\" requires a key of at least {} granularity covering \"{}\"",
                            spec.required_granularity.label(),
                            action.target
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Every namespace named by an action target (rate limiting is counted
    /// per target namespace).
    pub fn target_namespaces(&self) -> BTreeSet<String> {
        self.actions.iter().map(|a| a.target.namespace().to_string()).collect()
    }

    pub fn to_json_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("txn_id".into(), Value::String(self.txn_id.clone()));
        map.insert(
            "actions".into(),
            Value::Array(self.actions.iter().map(Action::to_json_value).collect()),
        );
        map.insert(
            "conflict_keys".into(),
            Value::Array(self.conflict_keys.iter().map(ConflictKey::to_json_value).collect()),
        );
        map.insert(
            "preconditions".into(),
            Value::Array(self.preconditions.iter().map(Precondition::to_json_value).collect()),
        );
        map.insert("failure_policy".into(), Value::String(self.failure_policy.wire_name().into()));
        Value::Object(map)
    }

    pub fn to_json_string(&self) -> String {
        self.to_json_value().to_string()
    }
}

impl Serialize for RemediationTransaction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json_value().serialize(serializer)
    }
}

// --- extension registry ----------------------------------------------------------

pub type InverseFn = Arc<dyn Fn(&Action) -> Action + Send + Sync>;

/// Everything an extension action must declare to be admitted: its rollback
/// class, how to undo it (a derived inverse for Reversible kinds; explicit
/// compensation documents for Compensatable), and the coarsest lock it is
/// content with.
#[derive(Clone)]
pub struct ExtensionSpec {
    pub effect_type: EffectType,
    /// Transactions carrying this action must hold a covering key at least
    /// this coarse.
    pub required_granularity: KeyGranularity,
    pub inverse: Option<InverseFn>,
}

impl fmt::Debug for ExtensionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtensionSpec")
            .field("effect_type", &self.effect_type)
            .field("required_granularity", &self.required_granularity)
            .field("inverse", &self.inverse.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// Registered extension actions. Empty by default: the shipped ISA is
/// exactly the seven built-in kinds.
#[derive(Debug, Clone, Default)]
pub struct ExtensionRegistry {
    specs: std::collections::BTreeMap<String, ExtensionSpec>,
}

impl ExtensionRegistry {
    pub fn empty() -> Self {
        ExtensionRegistry::default()
    }

    pub fn register(
        &mut self,
        kind: impl Into<String>,
        spec: ExtensionSpec,
    ) -> Result<(), IsaError> {
        let kind = kind.into();
        if ActionKind::parse_verb(&kind).is_some() {
            return Err(IsaError::ReservedKind(kind));
        }
        if spec.effect_type == EffectType::Reversible && spec.inverse.is_none() {
            return Err(IsaError::MissingExtensionInverse(kind));
        }
        if self.specs.contains_key(&kind) {
            return Err(IsaError::DuplicateExtension(kind));
        }
        self.specs.insert(kind, spec);
        Ok(())
    }

    pub fn get(&self, kind: &str) -> Option<&ExtensionSpec> {
        self.specs.get(kind)
    }

    /// Effect type of any action under this registry; `None` for an
    /// unregistered extension kind.
    pub fn effect_type_of_action(&self, action: &Action) -> Option<EffectType> {
        match &action.params {
            ActionParams::Extension { kind, .. } => self.get(kind).map(|s| s.effect_type),
            _ => action.kind().map(ActionKind::effect_type),
        }
    }

    /// Inverse of a Reversible action: built-ins via [`inverse_of`],
    /// extensions via their registered inverse.
    pub fn inverse_of_action(&self, action: &Action) -> Result<Action, IsaError> {
        match &action.params {
            ActionParams::Extension { kind, .. } => match self.get(kind) {
                Some(spec) if spec.effect_type == EffectType::Reversible => {
                    Ok(spec.inverse.as_ref().expect("reversible extensions register inverses")(
                        action,
                    ))
                }
                _ => Err(IsaError::NotReversible(kind.clone())),
            },
            _ => inverse_of(action),
        }
    }
}

// --- parsing -------------------------------------------------------------------------

/// Parses and fully validates a transaction document under the default
/// (empty) extension registry.
pub fn parse_transaction(text: &str) -> Result<RemediationTransaction, SchemaViolation> {
    parse_transaction_with(text, &ExtensionRegistry::empty())
}

pub fn parse_transaction_with(
    text: &str,
    registry: &ExtensionRegistry,
) -> Result<RemediationTransaction, SchemaViolation> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| SchemaViolation::new("$", format!("invalid JSON: {e}")))?;
    transaction_from_value(&value, registry)
}

/// Parses a transaction from an already-decoded JSON value (the WAL stores
/// transaction documents as raw JSON so recovery re-parses under the
/// kernel's registry).
pub fn transaction_from_value(
    value: &Value,
    registry: &ExtensionRegistry,
) -> Result<RemediationTransaction, SchemaViolation> {
    let map = as_object(value, "$")?;
    reject_unknown_fields(
        map,
        "$",
        &["txn_id", "actions", "conflict_keys", "preconditions", "failure_policy"],
    )?;

    let txn_id = required_string(map, "$", "txn_id")?;
    if txn_id.is_empty() {
        return Err(SchemaViolation::new("txn_id", "must be a non-empty string"));
    }

    let actions_value = required(map, "$", "actions")?;
    let actions_array = actions_value
        .as_array()
        .ok_or_else(|| SchemaViolation::new("actions", "must be a non-empty array"))?;
    let mut actions = Vec::with_capacity(actions_array.len());
    for (i, entry) in actions_array.iter().enumerate() {
        actions.push(parse_action(entry, &format!("actions[{i}]"), registry, false)?);
    }

    let keys_value = required(map, "$", "conflict_keys")?;
    let keys_array = keys_value
        .as_array()
        .ok_or_else(|| SchemaViolation::new("conflict_keys", "must be a non-empty array"))?;
    let mut conflict_keys = BTreeSet::new();
    for (i, entry) in keys_array.iter().enumerate() {
        conflict_keys.insert(parse_conflict_key(entry, &format!("conflict_keys[{i}]"))?);
    }

    let mut preconditions = Vec::new();
    if let Some(value) = map.get("preconditions") {
        let array = value
            .as_array()
            .ok_or_else(|| SchemaViolation::new("preconditions", "must be an array"))?;
        for (i, entry) in array.iter().enumerate() {
            preconditions.push(parse_precondition(entry, &format!("preconditions[{i}]"))?);
        }
    }

    let policy_raw = required_string(map, "$", "failure_policy")?;
    let failure_policy = FailurePolicy::parse(&policy_raw).ok_or_else(|| {
        SchemaViolation::new(
            "failure_policy",
            format!("unknown policy \"{policy_raw}\"; expected rollback_all, compensate, or abort_only"),
        )
    })?;

    let txn = RemediationTransaction { txn_id, actions, conflict_keys, preconditions, failure_policy };
    txn.validate_with(registry)?;
    Ok(txn)
}

fn parse_action(
    value: &Value,
    path: &str,
    registry: &ExtensionRegistry,
    is_compensation: bool,
) -> Result<Action, SchemaViolation> {
    let map = as_object(value, path)?;
    let kind = required_string(map, path, "kind")?;
    let target = required_service(map, path, "target")?;

    let params = match ActionKind::parse_verb(&kind) {
        Some(ActionKind::Restart) => {
            reject_unknown_fields(map, path, &["kind", "target", "grace_period_ms", "compensation"])?;
            let grace_period_ms = match map.get("grace_period_ms") {
                None => 0,
                Some(v) => v.as_u64().ok_or_else(|| {
                    SchemaViolation::new(
                        format!("{path}.grace_period_ms"),
                        "must be a non-negative integer",
                    )
                })?,
            };
            ActionParams::Restart { grace_period_ms }
        }
        Some(ActionKind::Drain) => {
            reject_unknown_fields(map, path, &["kind", "target", "compensation"])?;
            ActionParams::Drain
        }
        Some(ActionKind::RestoreTraffic) => {
            reject_unknown_fields(map, path, &["kind", "target", "compensation"])?;
            ActionParams::RestoreTraffic
        }
        Some(ActionKind::CircuitBreak) => {
            reject_unknown_fields(map, path, &["kind", "target", "dependency", "compensation"])?;
            ActionParams::CircuitBreak {
                dependency: required_service(map, path, "dependency")?,
                remove: false,
            }
        }
        Some(ActionKind::RateLimit) => {
            reject_unknown_fields(map, path, &["kind", "target", "limit_rps", "compensation"])?;
            let limit = required(map, path, "limit_rps")?
                .as_f64()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| {
                    SchemaViolation::new(
                        format!("{path}.limit_rps"),
                        "must be a positive number",
                    )
                })?;
            ActionParams::RateLimit { limit_rps: Some(limit) }
        }
        Some(ActionKind::Scale) => {
            reject_unknown_fields(map, path, &["kind", "target", "delta", "compensation"])?;
            let delta = required(map, path, "delta")?.as_i64().ok_or_else(|| {
                SchemaViolation::new(format!("{path}.delta"), "must be an integer")
            })?;
            ActionParams::Scale { delta }
        }
        Some(ActionKind::RollbackConfig) => {
            reject_unknown_fields(map, path, &["kind", "target", "to_version", "compensation"])?;
            ActionParams::RollbackConfig {
                to_version: required_string(map, path, "to_version")?,
            }
        }
        None => {
            if registry.get(&kind).is_none() {
                return Err(SchemaViolation::new(
                    format!("{path}.kind"),
                    format!("unknown action kind \"{kind}\""),
                ));
            }
            let params: Map<String, Value> = map
                .iter()
                .filter(|(k, _)| !matches!(k.as_str(), "kind" | "target" | "compensation"))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            ActionParams::Extension { kind: kind.clone(), params }
        }
    };

    let compensation = match map.get("compensation") {
        None => None,
        Some(_) if is_compensation => {
            return Err(SchemaViolation::new(
                format!("{path}.compensation"),
                "nested compensation is not supported",
            ));
        }
        Some(value) => Some(Box::new(parse_action(
            value,
            &format!("{path}.compensation"),
            registry,
            true,
        )?)),
    };

    let action = Action { target, params, compensation };
    validate_action(&action, path, registry, is_compensation)?;
    Ok(action)
}

/// Semantic checks shared by the parser and programmatic construction:
/// parameter ranges, compensation pairing, internal-only forms.
fn validate_action(
    action: &Action,
    path: &str,
    registry: &ExtensionRegistry,
    is_compensation: bool,
) -> Result<(), SchemaViolation> {
    match &action.params {
        ActionParams::RateLimit { limit_rps: None } => {
            return Err(SchemaViolation::new(
                format!("{path}.limit_rps"),
                "must be a positive number (limit removal is a derived inverse, not a transaction action)",
            ));
        }
        ActionParams::RateLimit { limit_rps: Some(v) } if !(v.is_finite() && *v > 0.0) => {
            return Err(SchemaViolation::new(
                format!("{path}.limit_rps"),
                "must be a positive number",
            ));
        }
        ActionParams::CircuitBreak { remove: true, .. } => {
            return Err(SchemaViolation::new(
                format!("{path}.remove"),
                "breaker removal is a derived inverse, not a transaction action",
            ));
        }
        ActionParams::Scale { delta } if *delta == 0 || *delta == i64::MIN => {
            return Err(SchemaViolation::new(
                format!("{path}.delta"),
                "must be a nonzero integer within range",
            ));
        }
        ActionParams::Extension { kind, .. } if registry.get(kind).is_none() => {
            return Err(SchemaViolation::new(
                format!("{path}.kind"),
                format!("unknown action kind \"{kind}\""),
            ));
        }
        _ => {}
    }

    let effect = registry
        .effect_type_of_action(action)
        .expect("kind existence checked above");
    match (&action.compensation, effect) {
        // Compensation actions are terminal undo steps: a compensatable
        // kind appearing AS compensation carries no nested compensation.
        (None, EffectType::Compensatable) if !is_compensation => {
            return Err(SchemaViolation::new(
                format!("{path}.compensation"),
                format!("required for compensatable kind \"{}\"", action.kind_name()),
            ));
        }
        (Some(_), EffectType::Compensatable) if is_compensation => {
            return Err(SchemaViolation::new(
                format!("{path}.compensation"),
                "nested compensation is not supported",
            ));
        }
        (Some(_), EffectType::Restartable | EffectType::Reversible | EffectType::Irreversible) => {
            return Err(SchemaViolation::new(
                format!("{path}.compensation"),
                format!(
                    "not allowed on {} kind \"{}\"",
                    match effect {
                        EffectType::Restartable => "restartable",
                        EffectType::Reversible => "reversible",
                        _ => "irreversible",
                    },
                    action.kind_name()
                ),
            ));
        }
        _ => {}
    }

    if let Some(compensation) = &action.compensation {
        let comp_path = format!("{path}.compensation");
        validate_action(compensation, &comp_path, registry, true)?;
        match action.kind() {
            Some(ActionKind::Drain) => {
                let ok = compensation.kind() == Some(ActionKind::RestoreTraffic)
                    && compensation.target == action.target;
                if !ok {
                    return Err(SchemaViolation::new(
                        comp_path,
                        "must be restore_traffic on the same target",
                    ));
                }
            }
            Some(ActionKind::RollbackConfig) => {
                let ok = matches!(compensation.params, ActionParams::RollbackConfig { .. })
                    && compensation.target == action.target;
                if !ok {
                    return Err(SchemaViolation::new(
                        comp_path,
                        "must be rollback_config restoring the prior version on the same target",
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn parse_conflict_key(value: &Value, path: &str) -> Result<ConflictKey, SchemaViolation> {
    let map = as_object(value, path)?;
    let granularity = required_string(map, path, "granularity")?;
    match granularity.as_str() {
        "cluster" => {
            reject_unknown_fields(map, path, &["granularity"])?;
            Ok(ConflictKey::Cluster)
        }
        "namespace" => {
            reject_unknown_fields(map, path, &["granularity", "namespace"])?;
            let ns = required_string(map, path, "namespace")?;
            if ns.is_empty() || ns.contains('/') {
                return Err(SchemaViolation::new(
                    format!("{path}.namespace"),
                    "must be a non-empty string without '/'",
                ));
            }
            Ok(ConflictKey::Namespace(ns))
        }
        "service" => {
            reject_unknown_fields(map, path, &["granularity", "ref"])?;
            Ok(ConflictKey::Service(required_service(map, path, "ref")?))
        }
        other => Err(SchemaViolation::new(
            format!("{path}.granularity"),
            format!("unknown granularity \"{other}\"; expected cluster, namespace, or service"),
        )),
    }
}

fn parse_precondition(value: &Value, path: &str) -> Result<Precondition, SchemaViolation> {
    let map = as_object(value, path)?;
    let check = required_string(map, path, "check")?;
    match check.as_str() {
        "service_exists" => {
            reject_unknown_fields(map, path, &["check", "service"])?;
            Ok(Precondition::ServiceExists(required_service(map, path, "service")?))
        }
        "replica_count_at_least" => {
            reject_unknown_fields(map, path, &["check", "service", "count"])?;
            let count = required(map, path, "count")?
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| {
                    SchemaViolation::new(format!("{path}.count"), "must be a non-negative integer")
                })?;
            Ok(Precondition::ReplicaCountAtLeast(
                required_service(map, path, "service")?,
                count,
            ))
        }
        "service_healthy" => {
            reject_unknown_fields(map, path, &["check", "service"])?;
            Ok(Precondition::ServiceHealthy(required_service(map, path, "service")?))
        }
        "traffic_state" => {
            reject_unknown_fields(map, path, &["check", "service", "state"])?;
            let state = match required_string(map, path, "state")?.as_str() {
                "serving" => TrafficState::Serving,
                "drained" => TrafficState::Drained,
                other => {
                    return Err(SchemaViolation::new(
                        format!("{path}.state"),
                        format!("unknown traffic state \"{other}\"; expected serving or drained"),
                    ));
                }
            };
            Ok(Precondition::TrafficState(required_service(map, path, "service")?, state))
        }
        other => Err(SchemaViolation::new(
            format!("{path}.check"),
            format!("unknown precondition check \"{other}\""),
        )),
    }
}

// --- JSON helpers ---------------------------------------------------------------

fn as_object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>, SchemaViolation> {
    value
        .as_object()
        .ok_or_else(|| SchemaViolation::new(path, "must be a JSON object"))
}

fn required<'a>(
    map: &'a Map<String, Value>,
    path: &str,
    field: &str,
) -> Result<&'a Value, SchemaViolation> {
    map.get(field).ok_or_else(|| {
        SchemaViolation::new(join_path(path, field), "missing required field")
    })
}

fn required_string(
    map: &Map<String, Value>,
    path: &str,
    field: &str,
) -> Result<String, SchemaViolation> {
    required(map, path, field)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| SchemaViolation::new(join_path(path, field), "must be a string"))
}

fn required_service(
    map: &Map<String, Value>,
    path: &str,
    field: &str,
) -> Result<ServiceRef, SchemaViolation> {
    required_string(map, path, field)?.parse().map_err(|_| {
        SchemaViolation::new(
            join_path(path, field),
            "must be a service reference of the form \"namespace/name\"",
        )
    })
}

fn reject_unknown_fields(
    map: &Map<String, Value>,
    path: &str,
    allowed: &[&str],
) -> Result<(), SchemaViolation> {
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(SchemaViolation::new(join_path(path, key), "unknown field"));
        }
    }
    Ok(())
}

fn join_path(path: &str, field: &str) -> String {
    if path == "$" {
        field.to_string()
    } else {
        format!("{path}.{field}")
    }
}

// --- tests ------------------------------------------------------------------------
