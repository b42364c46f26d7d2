//! Recovery-group inference: which services must restart together, in what
//! order, and which of them need a traffic drain first.
//!
//! The pipeline is: downstream traversal from the symptom → strongly
//! connected components of the affected subgraph (cycles are
//! restart-coupled) → condensation DAG → size-capped truncation by distance
//! from the symptom's component → downstream-first batching → drain marking
//! by full-graph fan-in. Everything is `O(V + E)` and deterministic, with
//! ties broken by canonical `namespace/name` order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CallGraph, GraphIndex, ServiceRef, TimeWindow};

// --- errors -----------------------------------------------------------------

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("unknown symptom service {0}")]
    UnknownService(ServiceRef),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

// --- inputs -----------------------------------------------------------------

/// An observed fault: a service misbehaving during a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symptom {
    pub service: ServiceRef,
    pub window: TimeWindow,
}

/// Tunable limits for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceThresholds {
    /// A restart-set member whose full-graph fan-in exceeds this must be
    /// drained before restarting.
    pub drain_threshold: usize,
    /// Hard cap on restart-set size.
    pub max_group_size: usize,
    /// Hard cap on the size of one restart batch.
    pub max_batch_size: usize,
}

impl Default for InferenceThresholds {
    fn default() -> Self {
        InferenceThresholds { drain_threshold: 20, max_group_size: 30, max_batch_size: 5 }
    }
}

impl InferenceThresholds {
    pub fn validate(&self) -> Result<(), GroupError> {
        if self.drain_threshold == 0 || self.max_group_size == 0 || self.max_batch_size == 0 {
            return Err(GroupError::InvalidThresholds("all thresholds must be strictly positive".into()));
        }
        if self.max_batch_size > self.max_group_size {
            return Err(GroupError::InvalidThresholds(format!(
                "max_batch_size {} exceeds max_group_size {}",
                self.max_batch_size, self.max_group_size
            )));
        }
        Ok(())
    }
}

// --- output -----------------------------------------------------------------

/// The inferred scope of a recovery: what to restart, in what order, and
/// what to drain first.
///
/// `restart_set` is canonically sorted. `batches` partition the restart set;
/// executing them in order restarts callees before their callers (whenever
/// the two sit in different SCCs). `drain_set` members carry enough upstream
/// fan-in that restarting them undrained would storm their callers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryGroup {
    pub symptom_service: ServiceRef,
    pub restart_set: Vec<ServiceRef>,
    pub batches: Vec<Vec<ServiceRef>>,
    pub drain_set: BTreeSet<ServiceRef>,
    pub blast_radius_estimate: usize,
    pub truncated: bool,
}

impl RecoveryGroup {
    pub fn contains(&self, service: &ServiceRef) -> bool {
        self.restart_set.binary_search(service).is_ok()
    }

    /// Scope for kernel admission: restart set plus drain set (the drain set
    /// is a subset of the restart set, so this is just the restart set).
    pub fn in_scope(&self, service: &ServiceRef) -> bool {
        self.contains(service)
    }
}

/// Batch-level summary used by CLI statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParallelismProfile {
    pub batch_count: usize,
    pub admits_parallelism: bool,
}

pub fn parallelism_profile(group: &RecoveryGroup) -> ParallelismProfile {
    ParallelismProfile {
        batch_count: group.batches.len(),
        admits_parallelism: group.batches.len() >= 2,
    }
}

// --- strongly connected components -------------------------------------------

/// SCC partition plus the condensation DAG of a call graph.
///
/// Components are listed in ascending order of their least member; members
/// are sorted. `edges` holds `(from, to)` component indices wherever a
/// member edge crosses components — acyclic by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccCondensation {
    pub components: Vec<Vec<ServiceRef>>,
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn scc_condensation(graph: &CallGraph) -> SccCondensation {
    let index = GraphIndex::new(graph);
    let tarjan = tarjan_sccs(&index, None);

    // Present components in canonical order (ascending least member id)
    // rather than traversal order.
    let mut order: Vec<usize> = (0..tarjan.components.len()).collect();
    order.sort_by_key(|&c| tarjan.components[c][0]);
    let mut renumber = vec![0usize; tarjan.components.len()];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        renumber[old_idx] = new_idx;
    }

    let components: Vec<Vec<ServiceRef>> = order
        .iter()
        .map(|&c| tarjan.components[c].iter().map(|&id| index.service(id).clone()).collect())
        .collect();
    let mut edges = BTreeSet::new();
    for u in 0..index.len() as u32 {
        let cu = renumber[tarjan.component_of[u as usize]];
        for &v in index.callees(u) {
            let cv = renumber[tarjan.component_of[v as usize]];
            if cu != cv {
                edges.insert((cu, cv));
            }
        }
    }
    SccCondensation { components, edges }
}

struct TarjanResult {
    /// Components in emission order (reverse-topological: a component is
    /// emitted before every component that can reach it), members ascending.
    components: Vec<Vec<u32>>,
    /// Component index per node; `usize::MAX` for nodes outside the mask.
    component_of: Vec<usize>,
}

/// Iterative Tarjan over the (optionally masked) index. Iterative because
/// affected subgraphs can be thousands of services deep, which would
/// overflow the call stack recursively.
fn tarjan_sccs(index: &GraphIndex, mask: Option<&[bool]>) -> TarjanResult {
    let n = index.len();
    let in_mask = |v: u32| mask.map_or(true, |m| m[v as usize]);

    const UNVISITED: u32 = u32::MAX;
    let mut discovery = vec![UNVISITED; n];
    let mut lowlink = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut component_of = vec![usize::MAX; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut components: Vec<Vec<u32>> = Vec::new();
    let mut next_discovery = 0u32;
    // DFS frames: (node, next child cursor into callees()).
    let mut frames: Vec<(u32, usize)> = Vec::new();

    for root in 0..n as u32 {
        if !in_mask(root) || discovery[root as usize] != UNVISITED {
            continue;
        }
        frames.push((root, 0));
        while let Some(&mut (v, ref mut cursor)) = frames.last_mut() {
            if *cursor == 0 {
                discovery[v as usize] = next_discovery;
                lowlink[v as usize] = next_discovery;
                next_discovery += 1;
                stack.push(v);
                on_stack[v as usize] = true;
            }
            if let Some(&w) = index.callees(v).get(*cursor) {
                *cursor += 1;
                if !in_mask(w) {
                    continue;
                }
                if discovery[w as usize] == UNVISITED {
                    frames.push((w, 0));
                } else if on_stack[w as usize] {
                    lowlink[v as usize] = lowlink[v as usize].min(discovery[w as usize]);
                }
            } else {
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    lowlink[parent as usize] = lowlink[parent as usize].min(lowlink[v as usize]);
                }
                if lowlink[v as usize] == discovery[v as usize] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack holds the open component");
                        on_stack[w as usize] = false;
                        component_of[w as usize] = components.len();
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    components.push(component);
                }
            }
        }
    }
    TarjanResult { components, component_of }
}

// --- inference ----------------------------------------------------------------

/// Infers the recovery group for `symptom` on `graph`.
///
/// The graph should have been built over the symptom window. Builds a fresh
/// [`GraphIndex`]; callers doing many inferences over one graph should index
/// once and use [`infer_on_index`].
pub fn infer_recovery_group(
    graph: &CallGraph,
    symptom: &Symptom,
    thresholds: &InferenceThresholds,
) -> Result<RecoveryGroup, GroupError> {
    let index = GraphIndex::new(graph);
    infer_on_index(&index, &symptom.service, thresholds)
}

/// [`infer_recovery_group`] against a prebuilt index.
pub fn infer_on_index(
    index: &GraphIndex,
    symptom_service: &ServiceRef,
    thresholds: &InferenceThresholds,
) -> Result<RecoveryGroup, GroupError> {
    thresholds.validate()?;
    let symptom = index
        .id(symptom_service)
        .ok_or_else(|| GroupError::UnknownService(symptom_service.clone()))?;

    // (1) Downstream closure: the symptom plus everything it transitively
    // calls. A restart of S can only require restarts below it.
    let mut affected = vec![false; index.len()];
    let mut affected_count = 0usize;
    let mut queue = VecDeque::new();
    affected[symptom as usize] = true;
    affected_count += 1;
    queue.push_back(symptom);
    while let Some(v) = queue.pop_front() {
        for &w in index.callees(v) {
            if !affected[w as usize] {
                affected[w as usize] = true;
                affected_count += 1;
                queue.push_back(w);
            }
        }
    }

    // (2) SCCs of the affected subgraph: a cycle restarts as a unit.
    let tarjan = tarjan_sccs(index, Some(&affected));
    let component_count = tarjan.components.len();
    let symptom_component = tarjan.component_of[symptom as usize];

    // (3) Condensation adjacency and BFS distance from the symptom's
    // component. Every affected component is reachable from it.
    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); component_count];
    for (c, members) in tarjan.components.iter().enumerate() {
        for &u in members {
            for &w in index.callees(u) {
                if affected[w as usize] {
                    let cw = tarjan.component_of[w as usize];
                    if cw != c {
                        successors[c].insert(cw);
                    }
                }
            }
        }
    }
    let mut distance = vec![usize::MAX; component_count];
    distance[symptom_component] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(symptom_component);
    while let Some(c) = queue.pop_front() {
        for &d in &successors[c] {
            if distance[d] == usize::MAX {
                distance[d] = distance[c] + 1;
                queue.push_back(d);
            }
        }
    }

    // (4) Truncate: keep whole components closest-first until the cap.
    // The symptom's own component is always kept, oversized or not. Keeping
    // stops at the first component that does not fit — retaining services
    // whose intermediate dependencies were dropped would break the
    // downstream-first safety chain.
    let mut candidate_order: Vec<usize> = (0..component_count).collect();
    candidate_order.sort_by_key(|&c| (distance[c], tarjan.components[c][0]));
    let mut kept = vec![false; component_count];
    let mut kept_nodes = 0usize;
    for &c in &candidate_order {
        let size = tarjan.components[c].len();
        if c != symptom_component && kept_nodes + size > thresholds.max_group_size {
            break;
        }
        kept[c] = true;
        kept_nodes += size;
    }
    let truncated = affected_count > thresholds.max_group_size;

    // (5) Downstream-first batching. Rank kept components by longest path to
    // a sink within the kept condensation; rank 0 (pure callees) restarts
    // first. An edge strictly increases rank, so no batch ever holds two
    // edge-connected components. Tarjan emission order is reverse
    // topological, so one pass suffices.
    let mut rank = vec![0usize; component_count];
    for c in 0..component_count {
        if !kept[c] {
            continue;
        }
        rank[c] = successors[c]
            .iter()
            .filter(|&&d| kept[d])
            .map(|&d| rank[d] + 1)
            .max()
            .unwrap_or(0);
    }
    let mut by_rank: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in 0..component_count {
        if kept[c] {
            by_rank.entry(rank[c]).or_default().push(c);
        }
    }

    let mut batches: Vec<Vec<ServiceRef>> = Vec::new();
    for components in by_rank.values_mut() {
        components.sort_by_key(|&c| tarjan.components[c][0]);
        let mut current: Vec<u32> = Vec::new();
        for &c in components.iter() {
            let members = &tarjan.components[c];
            if members.len() > thresholds.max_batch_size {
                // Oversized component: give it exclusive consecutive batches.
                if !current.is_empty() {
                    batches.push(to_refs(index, &current));
                    current.clear();
                }
                for chunk in members.chunks(thresholds.max_batch_size) {
                    batches.push(to_refs(index, chunk));
                }
            } else {
                if current.len() + members.len() > thresholds.max_batch_size {
                    batches.push(to_refs(index, &current));
                    current.clear();
                }
                current.extend_from_slice(members);
            }
        }
        if !current.is_empty() {
            batches.push(to_refs(index, &current));
        }
    }

    // (6) Restart set, drains (full-graph fan-in), blast radius.
    let mut restart_ids: Vec<u32> = (0..component_count)
        .filter(|&c| kept[c])
        .flat_map(|c| tarjan.components[c].iter().copied())
        .collect();
    restart_ids.sort_unstable();
    let restart_set = to_refs(index, &restart_ids);
    let drain_set: BTreeSet<ServiceRef> = restart_ids
        .iter()
        .filter(|&&id| index.fan_in(id) > thresholds.drain_threshold)
        .map(|&id| index.service(id).clone())
        .collect();

    Ok(RecoveryGroup {
        symptom_service: symptom_service.clone(),
        restart_set,
        batches,
        drain_set,
        blast_radius_estimate: index.blast_radius(symptom),
        truncated,
    })
}

fn to_refs(index: &GraphIndex, ids: &[u32]) -> Vec<ServiceRef> {
    ids.iter().map(|&id| index.service(id).clone()).collect()
}

// --- tests --------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TimeWindow;
    use proptest::prelude::*;

    fn svc(name: &str) -> ServiceRef {
        ServiceRef::new("t", name).unwrap()
    }

    fn graph_of(edges: &[(&str, &str)]) -> CallGraph {
        CallGraph::from_edges(
            TimeWindow::all(),
            [],
            edges.iter().map(|&(u, v)| (svc(u), svc(v), 1)),
        )
    }

    fn infer(graph: &CallGraph, symptom: &str) -> RecoveryGroup {
        infer_with(graph, symptom, &InferenceThresholds::default())
    }

    fn infer_with(graph: &CallGraph, symptom: &str, t: &InferenceThresholds) -> RecoveryGroup {
        infer_recovery_group(
            graph,
            &Symptom { service: svc(symptom), window: TimeWindow::all() },
            t,
        )
        .unwrap()
    }

    #[test]
    fn isolated_symptom_is_its_own_group() {
        let graph = CallGraph::from_edges(TimeWindow::all(), [svc("s")], []);
        let group = infer(&graph, "s");
        assert_eq!(group.restart_set, vec![svc("s")]);
        assert_eq!(group.batches, vec![vec![svc("s")]]);
        assert!(group.drain_set.is_empty());
        assert!(!group.truncated);
        assert_eq!(group.blast_radius_estimate, 0);
    }

    #[test]
    fn cycle_below_symptom_restarts_before_it() {
        // A -> B, B -> C, C -> B: SCCs {A}, {B,C}; callees first.
        let graph = graph_of(&[("a", "b"), ("b", "c"), ("c", "b")]);
        let group = infer(&graph, "a");
        assert_eq!(group.restart_set, vec![svc("a"), svc("b"), svc("c")]);
        assert_eq!(group.batches, vec![vec![svc("b"), svc("c")], vec![svc("a")]]);
        assert!(!group.truncated);
    }

    #[test]
    fn upstream_services_are_not_pulled_in() {
        let graph = graph_of(&[("edge", "mid"), ("mid", "leaf")]);
        let group = infer(&graph, "mid");
        assert_eq!(group.restart_set, vec![svc("leaf"), svc("mid")]);
        assert_eq!(group.blast_radius_estimate, 1); // edge
    }

    #[test]
    fn forty_deep_chain_truncates_to_cap() {
        let names: Vec<String> = (0..=40).map(|i| format!("c{i:02}")).collect();
        let edges: Vec<(&str, &str)> =
            (0..40).map(|i| (names[i].as_str(), names[i + 1].as_str())).collect();
        let graph = graph_of(&edges);
        let group = infer(&graph, "c00");
        assert_eq!(group.restart_set.len(), 30);
        assert!(group.truncated);
        assert!(group.contains(&svc("c00")));
        // Closest-to-symptom kept: the first 30 of the chain.
        assert!(group.contains(&svc("c29")));
        assert!(!group.contains(&svc("c30")));
        // Chain batches are singletons, deepest kept service first.
        assert_eq!(group.batches.len(), 30);
        assert_eq!(group.batches[0], vec![svc("c29")]);
        assert_eq!(group.batches[29], vec![svc("c00")]);
    }

    #[test]
    fn exact_cap_is_not_truncation() {
        let names: Vec<String> = (0..30).map(|i| format!("c{i:02}")).collect();
        let edges: Vec<(&str, &str)> =
            (0..29).map(|i| (names[i].as_str(), names[i + 1].as_str())).collect();
        let group = infer(&graph_of(&edges), "c00");
        assert_eq!(group.restart_set.len(), 30);
        assert!(!group.truncated);
    }

    #[test]
    fn oversized_symptom_component_is_kept_intact() {
        // A 7-cycle with a 2-service cap: the symptom's SCC wins over the cap.
        let names: Vec<String> = (0..7).map(|i| format!("r{i}")).collect();
        let edges: Vec<(&str, &str)> =
            (0..7).map(|i| (names[i].as_str(), names[(i + 1) % 7].as_str())).collect();
        let graph = graph_of(&edges);
        let t = InferenceThresholds { drain_threshold: 20, max_group_size: 2, max_batch_size: 2 };
        let group = infer_with(&graph, "r0", &t);
        assert_eq!(group.restart_set.len(), 7);
        assert!(group.truncated);
        // Split into consecutive batches of ≤ 2.
        assert_eq!(group.batches.len(), 4);
        assert!(group.batches.iter().all(|b| b.len() <= 2));
    }

    #[test]
    fn truncation_stops_at_first_unfitting_component() {
        // s -> triangle(t0,t1,t2) -> x. Cap 3 fits {s} and part of the
        // triangle only; the triangle is atomic, so the group stays {s} and
        // x is not retained either (its dependency chain was cut).
        let graph = graph_of(&[
            ("s", "t0"),
            ("t0", "t1"),
            ("t1", "t2"),
            ("t2", "t0"),
            ("t2", "x"),
        ]);
        let t = InferenceThresholds { drain_threshold: 20, max_group_size: 3, max_batch_size: 3 };
        let group = infer_with(&graph, "s", &t);
        assert_eq!(group.restart_set, vec![svc("s")]);
        assert!(group.truncated);
    }

    #[test]
    fn drain_set_uses_full_graph_fan_in() {
        // hub has 21 callers in the full graph; only s is downstream-related.
        let mut edges: Vec<(String, String)> =
            (0..21).map(|i| (format!("f{i:02}"), "hub".to_string())).collect();
        edges.push(("s".into(), "hub".into()));
        edges.push(("hub".into(), "db".into()));
        let graph = CallGraph::from_edges(
            TimeWindow::all(),
            [],
            edges.iter().map(|(u, v)| (svc(u), svc(v), 1)),
        );
        let group = infer(&graph, "s");
        assert_eq!(group.restart_set, vec![svc("db"), svc("hub"), svc("s")]);
        assert_eq!(group.drain_set.iter().collect::<Vec<_>>(), vec![&svc("hub")]);
        // Fan-in of 22 does not exceed a threshold of 22.
        let t = InferenceThresholds { drain_threshold: 22, ..Default::default() };
        assert!(infer_with(&graph, "s", &t).drain_set.is_empty());
    }

    #[test]
    fn unknown_symptom_is_an_error() {
        let graph = graph_of(&[("a", "b")]);
        let result = infer_recovery_group(
            &graph,
            &Symptom { service: svc("ghost"), window: TimeWindow::all() },
            &InferenceThresholds::default(),
        );
        assert!(matches!(result, Err(GroupError::UnknownService(_))));
    }

    #[test]
    fn thresholds_are_validated() {
        let graph = graph_of(&[("a", "b")]);
        for bad in [
            InferenceThresholds { drain_threshold: 0, ..Default::default() },
            InferenceThresholds { max_group_size: 0, ..Default::default() },
            InferenceThresholds { max_batch_size: 0, ..Default::default() },
            InferenceThresholds { max_batch_size: 31, ..Default::default() },
        ] {
            let result = infer_recovery_group(
                &graph,
                &Symptom { service: svc("a"), window: TimeWindow::all() },
                &bad,
            );
            assert!(matches!(result, Err(GroupError::InvalidThresholds(_))), "{bad:?}");
        }
    }

    #[test]
    fn thresholds_deserialize_with_defaults() {
        let t: InferenceThresholds = serde_json::from_str("{}").unwrap();
        assert_eq!(t, InferenceThresholds::default());
        let t: InferenceThresholds =
            serde_json::from_str(r#"{"max_group_size": 10}"#).unwrap();
        assert_eq!(t.max_group_size, 10);
        assert_eq!(t.drain_threshold, 20);
        assert!(serde_json::from_str::<InferenceThresholds>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn parallelism_profile_counts_batches() {
        let single = infer(&CallGraph::from_edges(TimeWindow::all(), [svc("s")], []), "s");
        assert_eq!(
            parallelism_profile(&single),
            ParallelismProfile { batch_count: 1, admits_parallelism: false }
        );
        let group = infer(&graph_of(&[("a", "b"), ("b", "c"), ("c", "b")]), "a");
        assert_eq!(
            parallelism_profile(&group),
            ParallelismProfile { batch_count: 2, admits_parallelism: true }
        );
    }

    #[test]
    fn scc_condensation_on_dag_is_all_singletons() {
        let graph = graph_of(&[("a", "b"), ("b", "c"), ("a", "c")]);
        let scc = scc_condensation(&graph);
        assert_eq!(scc.components.len(), 3);
        assert!(scc.components.iter().all(|c| c.len() == 1));
        assert_eq!(scc.edges.len(), 3);
    }

    #[test]
    fn scc_condensation_of_single_cycle() {
        let graph = graph_of(&[("a", "b"), ("b", "c"), ("c", "a")]);
        let scc = scc_condensation(&graph);
        assert_eq!(scc.components, vec![vec![svc("a"), svc("b"), svc("c")]]);
        assert!(scc.edges.is_empty());
    }

    #[test]
    fn scc_condensation_mixed() {
        // Two 2-cycles bridged by an edge, plus a tail.
        let graph = graph_of(&[("a", "b"), ("b", "a"), ("b", "c"), ("c", "d"), ("d", "c"), ("d", "e")]);
        let scc = scc_condensation(&graph);
        assert_eq!(
            scc.components,
            vec![vec![svc("a"), svc("b")], vec![svc("c"), svc("d")], vec![svc("e")]]
        );
        assert_eq!(scc.edges, BTreeSet::from([(0, 1), (1, 2)]));
    }

    #[test]
    fn deep_chain_does_not_overflow_the_stack() {
        // 60k-node chain: a recursive SCC would blow the stack here.
        let names: Vec<String> = (0..60_000).map(|i| format!("n{i:05}")).collect();
        let edges: Vec<(ServiceRef, ServiceRef, u64)> = (0..59_999)
            .map(|i| (svc(&names[i]), svc(&names[i + 1]), 1))
            .collect();
        let graph = CallGraph::from_edges(TimeWindow::all(), [], edges);
        let scc = scc_condensation(&graph);
        assert_eq!(scc.components.len(), 60_000);
        let group = infer(&graph, "n00000");
        assert_eq!(group.restart_set.len(), 30);
        assert!(group.truncated);
    }

    // Brute-force SCC oracle: mutual reachability via transitive closure.
    fn scc_oracle(graph: &CallGraph) -> (Vec<Vec<ServiceRef>>, BTreeSet<(usize, usize)>) {
        let nodes: Vec<ServiceRef> = graph.services().cloned().collect();
        let n = nodes.len();
        let idx = |s: &ServiceRef| nodes.iter().position(|t| t == s).unwrap();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
        }
        for (u, v, _) in graph.edges() {
            reach[idx(u)][idx(v)] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    reach[i][j] = reach[i][j] || (reach[i][k] && reach[k][j]);
                }
            }
        }
        let mut component_of = vec![usize::MAX; n];
        let mut components: Vec<Vec<ServiceRef>> = Vec::new();
        for i in 0..n {
            if component_of[i] != usize::MAX {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &members {
                component_of[j] = components.len();
            }
            components.push(members.iter().map(|&j| nodes[j].clone()).collect());
        }
        // nodes is sorted (graph.services is ordered), so first-seen order
        // equals ascending-least-member order; members come out sorted too.
        let mut edges = BTreeSet::new();
        for (u, v, _) in graph.edges() {
            let (cu, cv) = (component_of[idx(u)], component_of[idx(v)]);
            if cu != cv {
                edges.insert((cu, cv));
            }
        }
        (components, edges)
    }

    fn random_graph(nodes: u8, edges: &[(u8, u8)]) -> CallGraph {
        CallGraph::from_edges(
            TimeWindow::all(),
            (0..nodes).map(|i| svc(&format!("n{i:02}"))),
            edges.iter().filter(|(u, v)| u != v).map(|&(u, v)| {
                (svc(&format!("n{u:02}")), svc(&format!("n{v:02}")), 1)
            }),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn scc_matches_brute_force_oracle(
            nodes in 1u8..12,
            edges in proptest::collection::vec((0u8..12, 0u8..12), 0..50),
        ) {
            let edges: Vec<(u8, u8)> = edges
                .into_iter()
                .map(|(u, v)| (u % nodes.max(1), v % nodes.max(1)))
                .collect();
            let graph = random_graph(nodes, &edges);
            let got = scc_condensation(&graph);
            let (want_components, want_edges) = scc_oracle(&graph);
            prop_assert_eq!(&got.components, &want_components);
            prop_assert_eq!(&got.edges, &want_edges);
        }

        #[test]
        fn inferred_groups_satisfy_all_invariants(
            nodes in 1u8..24,
            edges in proptest::collection::vec((0u8..24, 0u8..24), 0..120),
            symptom in 0u8..24,
            max_group in 1usize..16,
            max_batch in 1usize..6,
            drain in 1usize..6,
        ) {
            let edges: Vec<(u8, u8)> = edges
                .into_iter()
                .map(|(u, v)| (u % nodes, v % nodes))
                .collect();
            let graph = random_graph(nodes, &edges);
            let symptom = svc(&format!("n{:02}", symptom % nodes));
            let thresholds = InferenceThresholds {
                drain_threshold: drain,
                max_group_size: max_group.max(max_batch),
                max_batch_size: max_batch,
            };
            let group = infer_recovery_group(
                &graph,
                &Symptom { service: symptom, window: TimeWindow::all() },
                &thresholds,
            ).unwrap();
            let verdict = check_group_invariants(&graph, &group, &thresholds);
            prop_assert!(verdict.is_ok(), "{}\ngroup: {group:?}", verdict.unwrap_err());
        }

        #[test]
        fn inference_is_deterministic_under_edge_shuffle(
            nodes in 1u8..16,
            edges in proptest::collection::vec((0u8..16, 0u8..16), 0..60),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let edges: Vec<(u8, u8)> = edges
                .into_iter()
                .map(|(u, v)| (u % nodes, v % nodes))
                .collect();
            let mut shuffled = edges.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (random_graph(nodes, &edges), random_graph(nodes, &shuffled));
            let symptom = Symptom { service: svc("n00"), window: TimeWindow::all() };
            let t = InferenceThresholds::default();
            prop_assert_eq!(
                infer_recovery_group(&a, &symptom, &t).unwrap(),
                infer_recovery_group(&b, &symptom, &t).unwrap()
            );
        }
    }

    /// Checks every RecoveryGroup invariant against the graph it came from.
    /// Shared with the acceptance suite in spirit; kept self-contained here.
    pub(crate) fn check_group_invariants(
        graph: &CallGraph,
        group: &RecoveryGroup,
        thresholds: &InferenceThresholds,
    ) -> Result<(), String> {
        use std::collections::HashMap;

        // union(batches) = restart_set, disjoint.
        let mut batch_index: HashMap<&ServiceRef, usize> = HashMap::new();
        for (i, batch) in group.batches.iter().enumerate() {
            if batch.is_empty() {
                return Err(format!("batch {i} is empty"));
            }
            if batch.len() > thresholds.max_batch_size {
                return Err(format!("batch {i} exceeds max_batch_size"));
            }
            for member in batch {
                if batch_index.insert(member, i).is_some() {
                    return Err(format!("{member} appears in two batches"));
                }
            }
        }
        let restart: BTreeSet<&ServiceRef> = group.restart_set.iter().collect();
        if restart.len() != group.restart_set.len() {
            return Err("restart_set has duplicates".into());
        }
        if batch_index.keys().copied().collect::<BTreeSet<_>>() != restart {
            return Err("union(batches) != restart_set".into());
        }
        if !restart.contains(&group.symptom_service) {
            return Err("symptom not in restart_set".into());
        }

        // Size cap (modulo the oversized-symptom-SCC exception) + flag.
        let scc = scc_condensation(graph);
        let symptom_scc = scc
            .components
            .iter()
            .find(|c| c.contains(&group.symptom_service))
            .expect("symptom in graph");
        if group.restart_set.len() > thresholds.max_group_size.max(symptom_scc.len()) {
            return Err("restart_set exceeds max_group_size".into());
        }
        let uncapped = {
            // Downstream closure size by brute force.
            let mut seen = BTreeSet::from([&group.symptom_service]);
            let mut frontier = vec![&group.symptom_service];
            while let Some(u) = frontier.pop() {
                for (a, b, _) in graph.edges() {
                    if a == u && seen.insert(b) {
                        frontier.push(b);
                    }
                }
            }
            seen.len()
        };
        if group.truncated != (uncapped > thresholds.max_group_size) {
            return Err(format!(
                "truncated={} but uncapped closure has {uncapped} services",
                group.truncated
            ));
        }

        // drain_set ⊆ restart_set, full-graph fan-in rule both directions.
        let stats = graph.connectivity_stats();
        for service in &group.drain_set {
            if !restart.contains(service) {
                return Err(format!("drained {service} outside restart_set"));
            }
        }
        for service in &group.restart_set {
            let needs_drain = stats.per_service[service].fan_in > thresholds.drain_threshold;
            if needs_drain != group.drain_set.contains(service) {
                return Err(format!("{service} drain marking disagrees with fan-in"));
            }
        }

        // Downstream-first: caller's batch strictly after callee's when they
        // sit in different SCCs.
        let scc_of: HashMap<&ServiceRef, usize> = scc
            .components
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |s| (s, i)))
            .collect();
        for (u, v, _) in graph.edges() {
            if let (Some(&bu), Some(&bv)) = (batch_index.get(u), batch_index.get(v)) {
                if scc_of[u] != scc_of[v] && bv >= bu {
                    return Err(format!("edge {u}->{v} not downstream-first ({bu} vs {bv})"));
                }
            }
        }

        // Blast radius matches the trace-model definition.
        let expected_blast = graph.blast_radius(&group.symptom_service).map_err(|e| e.to_string())?;
        if group.blast_radius_estimate != expected_blast {
            return Err("blast_radius_estimate mismatch".into());
        }
        Ok(())
    }

    #[test]
    fn group_serializes_with_stable_field_names() {
        let graph = graph_of(&[("a", "b")]);
        let group = infer(&graph, "a");
        let json = serde_json::to_value(&group).unwrap();
        for field in [
            "symptom_service",
            "restart_set",
            "batches",
            "drain_set",
            "blast_radius_estimate",
            "truncated",
        ] {
            assert!(json.get(field).is_some(), "missing {field}");
        }
        let back: RecoveryGroup = serde_json::from_value(json).unwrap();
        assert_eq!(back, group);
    }
}
