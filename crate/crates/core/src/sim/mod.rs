//! A deterministic simulated microservice cluster.
//!
//! The cluster holds per-service state (replicas, traffic, breakers, rate
//! limits, config version, health), applies remediation actions with a
//! configurable latency, injects the five chaos fault kinds, and emits SLO
//! telemetry at 1 s resolution by propagating failures through the weighted
//! call graph.
//!
//! # Propagation model
//!
//! Telemetry is computed each tick as a fixed point over the topology: a
//! serving service's error rate is its intrinsic error plus, for every
//! callee that is neither drained nor circuit-broken, the callee's error
//! rate weighted by that edge's share of the caller's outbound traffic.
//! Latency excess propagates additively along the worst unmasked callee. A
//! drained service reports no errors and baseline latency (it has no live
//! traffic), and contributes nothing to its callers.
//!
//! The model is deliberately simple and fully deterministic; its parameters
//! live in [`SimConfig`] and the documented defaults are calibration, not
//! ground truth.
//!
//! # Restart storms
//!
//! Restarting a service that is still taking traffic while many serving
//! callers depend on it triggers a reconnect storm: after the restart
//! completes, the service suffers an error/latency tail that decays over
//! [`SimConfig::storm_tail`]. Draining first avoids the storm — which is
//! exactly the discipline the transaction language encodes.

pub mod scenario;
pub mod telemetry;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimClock;
use crate::isa::{Action, ActionParams, TrafficState};
use crate::kernel::{Actuator, ApplyError, ClusterSnapshot, ServiceSnapshot};
use crate::trace::{CallGraph, ServiceRef};

pub use telemetry::{
    evaluate_harm, HarmReport, HarmThresholds, Metric, ServiceHarm, SloSample, SloTelemetry,
    TelemetryError,
};

// --- configuration ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Wall/virtual time consumed by each action application.
    pub action_latency: Duration,
    /// How long a restarted service stays down.
    pub restart_duration: Duration,
    /// Serving callers required to trigger a reconnect storm when an
    /// un-drained service restarts.
    pub storm_threshold: usize,
    /// Decay window of the storm tail after the restart completes.
    pub storm_tail: Duration,
    /// Healthy-state p99 latency.
    pub base_p99_ms: f64,
    /// Healthy-state error rate.
    pub base_error_rate: f64,
    /// Fixed-point iterations per telemetry tick (bounds cycle depth).
    pub propagation_rounds: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            action_latency: Duration::from_millis(100),
            restart_duration: Duration::from_secs(30),
            storm_threshold: 10,
            storm_tail: Duration::from_secs(20),
            base_p99_ms: 20.0,
            base_error_rate: 0.0005,
            propagation_rounds: 10,
        }
    }
}

// --- per-service state ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    PodFailure,
    NetworkPartition,
    CpuStress,
    MemoryStress,
    IoDelay,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::PodFailure,
        FaultKind::NetworkPartition,
        FaultKind::CpuStress,
        FaultKind::MemoryStress,
        FaultKind::IoDelay,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthState {
    Healthy,
    /// Down until the deadline, then healthy again.
    Restarting { until_us: i64 },
    Faulted(FaultKind),
}

#[derive(Debug, Clone)]
struct ServiceState {
    replicas: u32,
    traffic: TrafficState,
    breakers: BTreeSet<ServiceRef>,
    rate_limit_rps: Option<f64>,
    config_version: String,
    health: HealthState,
    /// End of the reconnect-storm tail, when one was triggered.
    storm_until_us: Option<i64>,
}

impl ServiceState {
    fn new(replicas: u32) -> Self {
        ServiceState {
            replicas,
            traffic: TrafficState::Serving,
            breakers: BTreeSet::new(),
            rate_limit_rps: None,
            config_version: "v1".into(),
            health: HealthState::Healthy,
            storm_until_us: None,
        }
    }
}

// --- action log -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionResult {
    Applied,
    Failed,
}

/// Append-only record of every effect, ordered by a logical clock. The
/// provenance token proves which path mutated the cluster: kernel-issued
/// tokens are `{txn}#...`, raw mutations are `raw:...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLogEntry {
    pub logical: u64,
    pub started_us: i64,
    pub completed_us: i64,
    pub service: ServiceRef,
    pub kind: String,
    pub token: String,
    pub result: ActionResult,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("no such service \"{0}\"")]
    UnknownService(String),
}

// --- cluster ----------------------------------------------------------------------

struct SimInner {
    services: BTreeMap<ServiceRef, ServiceState>,
    /// caller → (callee, share of caller's outbound weight).
    out_shares: BTreeMap<ServiceRef, Vec<(ServiceRef, f64)>>,
    /// callee → callers.
    callers: BTreeMap<ServiceRef, Vec<ServiceRef>>,
    telemetry: SloTelemetry,
    action_log: Vec<ActionLogEntry>,
    seen_tokens: BTreeSet<String>,
    logical: u64,
    next_sample_us: i64,
    first_fault_at_us: Option<i64>,
    force_fail_tokens: BTreeMap<String, u32>,
    force_fail_kinds: BTreeMap<String, u32>,
    raw_counter: u64,
}

pub struct SimCluster {
    clock: Arc<SimClock>,
    config: SimConfig,
    topology: CallGraph,
    inner: Mutex<SimInner>,
}

fn lock(inner: &Mutex<SimInner>) -> MutexGuard<'_, SimInner> {
    inner.lock().unwrap_or_else(|e| e.into_inner())
}

impl SimCluster {
    /// Builds a cluster over a topology. Every service referenced by the
    /// graph exists with the given replica count (default 1).
    pub fn new(
        topology: CallGraph,
        replicas: &BTreeMap<ServiceRef, u32>,
        clock: Arc<SimClock>,
        config: SimConfig,
    ) -> Self {
        let mut services = BTreeMap::new();
        for service in topology.services() {
            let count = replicas.get(service).copied().unwrap_or(1);
            services.insert(service.clone(), ServiceState::new(count));
        }
        let mut out_weights: BTreeMap<ServiceRef, Vec<(ServiceRef, u64)>> = BTreeMap::new();
        let mut callers: BTreeMap<ServiceRef, Vec<ServiceRef>> = BTreeMap::new();
        for (caller, callee, weight) in topology.edges() {
            out_weights.entry(caller.clone()).or_default().push((callee.clone(), weight));
            callers.entry(callee.clone()).or_default().push(caller.clone());
        }
        let out_shares = out_weights
            .into_iter()
            .map(|(caller, edges)| {
                let total: u64 = edges.iter().map(|(_, w)| *w).sum();
                let shares = edges
                    .into_iter()
                    .map(|(callee, w)| (callee, w as f64 / total as f64))
                    .collect();
                (caller, shares)
            })
            .collect();
        let next_sample_us = clock.now_us() + 1_000_000;
        SimCluster {
            clock,
            config,
            topology,
            inner: Mutex::new(SimInner {
                services,
                out_shares,
                callers,
                telemetry: SloTelemetry::new(),
                action_log: Vec::new(),
                seen_tokens: BTreeSet::new(),
                logical: 0,
                next_sample_us,
                first_fault_at_us: None,
                force_fail_tokens: BTreeMap::new(),
                force_fail_kinds: BTreeMap::new(),
                raw_counter: 0,
            }),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }

    pub fn graph(&self) -> &CallGraph {
        &self.topology
    }

    pub fn action_log(&self) -> Vec<ActionLogEntry> {
        lock(&self.inner).action_log.clone()
    }

    pub fn telemetry(&self) -> SloTelemetry {
        lock(&self.inner).telemetry.clone()
    }

    pub fn first_fault_at_us(&self) -> Option<i64> {
        lock(&self.inner).first_fault_at_us
    }

    pub fn health_of(&self, service: &ServiceRef) -> Option<HealthState> {
        lock(&self.inner).services.get(service).map(|s| s.health)
    }

    pub fn traffic_of(&self, service: &ServiceRef) -> Option<TrafficState> {
        lock(&self.inner).services.get(service).map(|s| s.traffic)
    }

    pub fn replicas_of(&self, service: &ServiceRef) -> Option<u32> {
        lock(&self.inner).services.get(service).map(|s| s.replicas)
    }

    pub fn config_version_of(&self, service: &ServiceRef) -> Option<String> {
        lock(&self.inner).services.get(service).map(|s| s.config_version.clone())
    }

    /// Forces the next `times` applications of `kind` to fail (chaos for
    /// retry and rollback paths).
    pub fn force_fail_kind(&self, kind: &str, times: u32) {
        lock(&self.inner).force_fail_kinds.insert(kind.to_string(), times);
    }

    /// Forces the next `times` applications with this exact token to fail.
    pub fn force_fail_token(&self, token: &str, times: u32) {
        lock(&self.inner).force_fail_tokens.insert(token.to_string(), times);
    }

    /// Injects a chaos fault. The fault persists until a Restart completes.
    pub fn inject_fault(&self, kind: FaultKind, target: &ServiceRef) -> Result<(), SimError> {
        let now = self.clock.now_us();
        let mut inner = lock(&self.inner);
        let state = inner
            .services
            .get_mut(target)
            .ok_or_else(|| SimError::UnknownService(target.canonical()))?;
        state.health = HealthState::Faulted(kind);
        inner.first_fault_at_us.get_or_insert(now);
        Ok(())
    }

    /// Applies an action outside any kernel: no validation, no journal, no
    /// locks. This models an agent with direct infrastructure access; the
    /// log row carries a `raw:` provenance token.
    pub fn apply_raw(&self, action: &Action) -> Result<(), ApplyError> {
        let token = {
            let mut inner = lock(&self.inner);
            inner.raw_counter += 1;
            format!("raw:{}", inner.raw_counter)
        };
        self.apply_with_token(action, &token)
    }

    /// Advances simulated time to `t_us`, emitting one telemetry sample per
    /// second. Boundaries already in the past (actions consumed time) are
    /// sampled with the current state, keeping the series gap-free.
    pub fn run_until(&self, t_us: i64) {
        loop {
            let next = lock(&self.inner).next_sample_us;
            if next > t_us {
                break;
            }
            let now = self.clock.now_us();
            if next > now {
                self.clock.advance(Duration::from_micros((next - now) as u64));
            }
            let mut inner = lock(&self.inner);
            let at = inner.next_sample_us;
            transition_health(&mut inner, at);
            let frame = propagate(&inner, at, &self.config);
            for (service, (p99_ms, error_rate)) in frame {
                inner
                    .telemetry
                    .push(&service, SloSample { ts_us: at, p99_ms, error_rate });
            }
            inner.next_sample_us += 1_000_000;
        }
    }

    /// Runs until `secs` past the clock's current time.
    pub fn run_for(&self, secs: u64) {
        self.run_until(self.clock.now_us() + secs as i64 * 1_000_000);
    }

    fn apply_with_token(&self, action: &Action, token: &str) -> Result<(), ApplyError> {
        let started_us = self.clock.now_us();
        // Latency is paid outside the state lock so effects on distinct
        // services overlap in real-time mode.
        self.clock.sleep(self.config.action_latency);
        let mut inner = lock(&self.inner);
        if inner.seen_tokens.contains(token) {
            return Ok(()); // idempotent replay: no effect, no log row
        }
        let completed_us = self.clock.now_us();
        let logical = inner.logical;
        inner.logical += 1;
        let mut row = ActionLogEntry {
            logical,
            started_us,
            completed_us,
            service: action.target.clone(),
            kind: action.kind_name().to_string(),
            token: token.to_string(),
            result: ActionResult::Applied,
        };

        let forced = match inner.force_fail_tokens.get_mut(token) {
            Some(left) if *left > 0 => {
                *left -= 1;
                true
            }
            _ => match inner.force_fail_kinds.get_mut(action.kind_name()) {
                Some(left) if *left > 0 => {
                    *left -= 1;
                    true
                }
                _ => false,
            },
        };
        if forced {
            row.result = ActionResult::Failed;
            inner.action_log.push(row);
            return Err(ApplyError::Failure("injected action failure".into()));
        }

        if !inner.services.contains_key(&action.target) {
            row.result = ActionResult::Failed;
            inner.action_log.push(row);
            return Err(ApplyError::Failure(format!(
                "no such service \"{}\"",
                action.target
            )));
        }

        // Storm determination needs a view of the callers while the target's
        // state is borrowed; collect first.
        let serving_callers = inner
            .callers
            .get(&action.target)
            .map_or(0, |callers| {
                callers
                    .iter()
                    .filter(|c| {
                        inner.services.get(*c).is_some_and(|s| s.traffic == TrafficState::Serving)
                    })
                    .count()
            });
        let restart_until = started_us + self.config.restart_duration.as_micros() as i64;
        let storm_until = restart_until + self.config.storm_tail.as_micros() as i64;
        let storm_threshold = self.config.storm_threshold;

        let state = inner.services.get_mut(&action.target).expect("checked above");
        match &action.params {
            ActionParams::Restart { .. } => {
                let stormy =
                    state.traffic == TrafficState::Serving && serving_callers >= storm_threshold;
                state.health = HealthState::Restarting { until_us: restart_until };
                state.storm_until_us = stormy.then_some(storm_until);
            }
            ActionParams::Drain => state.traffic = TrafficState::Drained,
            ActionParams::RestoreTraffic => state.traffic = TrafficState::Serving,
            ActionParams::CircuitBreak { dependency, remove } => {
                if *remove {
                    state.breakers.remove(dependency);
                } else {
                    state.breakers.insert(dependency.clone());
                }
            }
            ActionParams::RateLimit { limit_rps } => state.rate_limit_rps = *limit_rps,
            ActionParams::Scale { delta } => {
                let next = i64::from(state.replicas) + delta;
                if next < 0 {
                    row.result = ActionResult::Failed;
                    inner.action_log.push(row);
                    return Err(ApplyError::Failure(format!(
                        "scale by {delta} would take replicas below zero"
                    )));
                }
                state.replicas = next as u32;
            }
            ActionParams::RollbackConfig { to_version } => {
                state.config_version = to_version.clone();
            }
            // Extension kinds have no simulated semantics; they apply cleanly.
            ActionParams::Extension { .. } => {}
        }
        inner.seen_tokens.insert(token.to_string());
        inner.action_log.push(row);
        Ok(())
    }
}

impl Actuator for SimCluster {
    fn apply(&self, action: &Action, idempotency_token: &str) -> Result<(), ApplyError> {
        self.apply_with_token(action, idempotency_token)
    }

    fn snapshot(&self) -> ClusterSnapshot {
        let inner = lock(&self.inner);
        ClusterSnapshot {
            services: inner
                .services
                .iter()
                .map(|(r, s)| {
                    (
                        r.clone(),
                        ServiceSnapshot {
                            replicas: s.replicas,
                            healthy: s.health == HealthState::Healthy,
                            traffic: s.traffic,
                        },
                    )
                })
                .collect(),
        }
    }
}

fn transition_health(inner: &mut SimInner, at_us: i64) {
    for state in inner.services.values_mut() {
        if let HealthState::Restarting { until_us } = state.health {
            if at_us >= until_us {
                state.health = HealthState::Healthy;
            }
        }
        if state.storm_until_us.is_some_and(|t| at_us >= t) {
            state.storm_until_us = None;
        }
    }
}

/// Intrinsic (pre-propagation) telemetry for one service.
fn intrinsic(state: &ServiceState, at_us: i64, config: &SimConfig) -> (f64, f64) {
    if state.traffic == TrafficState::Drained {
        // No live traffic: nothing to fail, baseline latency.
        return (config.base_p99_ms, 0.0);
    }
    let mut err = config.base_error_rate;
    let mut p99 = config.base_p99_ms;
    match state.health {
        HealthState::Healthy => {}
        HealthState::Restarting { .. } => err = 1.0,
        HealthState::Faulted(FaultKind::PodFailure | FaultKind::NetworkPartition) => err = 1.0,
        HealthState::Faulted(FaultKind::CpuStress | FaultKind::MemoryStress) => {
            err += 0.02;
            p99 *= 5.0;
        }
        HealthState::Faulted(FaultKind::IoDelay) => p99 += 200.0,
    }
    if state.health == HealthState::Healthy {
        if let Some(until) = state.storm_until_us {
            // Reconnect storm: starts at err 0.25 / p99 ×3 and decays
            // linearly over the tail.
            let remaining =
                (until - at_us) as f64 / config.storm_tail.as_micros().max(1) as f64;
            let remaining = remaining.clamp(0.0, 1.0);
            err += 0.25 * remaining;
            p99 += config.base_p99_ms * 2.0 * remaining;
        }
    }
    (p99, err.min(1.0))
}

/// One telemetry frame: fixed-point propagation of errors (edge-share
/// weighted) and latency excess (worst unmasked callee), masked by drains
/// and circuit breakers.
fn propagate(
    inner: &SimInner,
    at_us: i64,
    config: &SimConfig,
) -> Vec<(ServiceRef, (f64, f64))> {
    let services: Vec<&ServiceRef> = inner.services.keys().collect();
    let mut p99: BTreeMap<&ServiceRef, f64> = BTreeMap::new();
    let mut err: BTreeMap<&ServiceRef, f64> = BTreeMap::new();
    for service in &services {
        let (p, e) = intrinsic(&inner.services[*service], at_us, config);
        p99.insert(service, p);
        err.insert(service, e);
    }
    for _ in 0..config.propagation_rounds {
        let mut next_p99 = BTreeMap::new();
        let mut next_err = BTreeMap::new();
        for service in &services {
            let state = &inner.services[*service];
            let (base_p, base_e) = intrinsic(state, at_us, config);
            if state.traffic == TrafficState::Drained {
                next_p99.insert(*service, base_p);
                next_err.insert(*service, base_e);
                continue;
            }
            let mut e = base_e;
            let mut worst_excess = 0.0f64;
            if let Some(edges) = inner.out_shares.get(*service) {
                for (callee, share) in edges {
                    let callee_state = &inner.services[callee];
                    if callee_state.traffic == TrafficState::Drained
                        || state.breakers.contains(callee)
                    {
                        continue; // rerouted or short-circuited: no attribution
                    }
                    e += share * err[callee];
                    worst_excess = worst_excess.max(p99[callee] - config.base_p99_ms);
                }
            }
            next_p99.insert(*service, base_p + worst_excess);
            next_err.insert(*service, e.min(1.0));
        }
        p99 = next_p99;
        err = next_err;
    }
    services
        .into_iter()
        .map(|s| (s.clone(), (p99[&s], err[&s])))
        .collect()
}

// --- tests ------------------------------------------------------------------------
