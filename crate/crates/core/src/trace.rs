//! Distributed-trace ingestion and call-graph construction.
//!
//! A trace corpus is a stream of spans; each span that carries both a caller
//! and a callee witnesses one inter-service call. Aggregating the spans that
//! fall inside a time window yields a weighted, directed call graph whose
//! edge weights count observed calls. Everything downstream (recovery-group
//! inference, blast-radius estimation) works off that graph.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

// --- errors ---------------------------------------------------------------

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read trace source: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid service reference {0:?}: expected non-empty \"namespace/name\"")]
    InvalidServiceRef(String),
    #[error("invalid time window: start {start_us} must be less than end {end_us}")]
    InvalidWindow { start_us: i64, end_us: i64 },
    #[error("unknown service {0}")]
    UnknownService(ServiceRef),
}

// --- service references ---------------------------------------------------

/// A namespace-qualified service identity, canonically `namespace/name`.
///
/// The namespace may not contain `/` (so the canonical form parses back
/// unambiguously); the name may. Ordering is lexicographic on the canonical
/// form, which is the tie-break order used everywhere in this crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceRef {
    namespace: String,
    name: String,
}

impl ServiceRef {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Result<Self, TraceError> {
        let namespace = namespace.into();
        let name = name.into();
        if namespace.is_empty() || name.is_empty() || namespace.contains('/') {
            return Err(TraceError::InvalidServiceRef(format!("{namespace}/{name}")));
        }
        Ok(ServiceRef { namespace, name })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The canonical `namespace/name` form.
    pub fn canonical(&self) -> String {
        format!("{}/{}", self.namespace, self.name)
    }

    fn canonical_bytes(&self) -> impl Iterator<Item = u8> + '_ {
        self.namespace
            .bytes()
            .chain(std::iter::once(b'/'))
            .chain(self.name.bytes())
    }
}

impl Ord for ServiceRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Compare canonical forms without allocating; (namespace, name) tuple
        // order would disagree with canonical order for namespaces that are
        // prefixes of each other.
        self.canonical_bytes().cmp(other.canonical_bytes())
    }
}

impl PartialOrd for ServiceRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ServiceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}

impl FromStr for ServiceRef {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (namespace, name) = s
            .split_once('/')
            .ok_or_else(|| TraceError::InvalidServiceRef(s.to_string()))?;
        ServiceRef::new(namespace, name)
    }
}

impl Serialize for ServiceRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ServiceRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(D::Error::custom)
    }
}

// --- spans ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanStatus {
    Ok,
    Error,
}

/// One span from a distributed trace.
///
/// `caller` is absent for root spans (ingress traffic has no upstream
/// service). Timestamps are integer microseconds since the epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub trace_id: String,
    pub span_id: String,
    #[serde(default)]
    pub parent_span_id: Option<String>,
    #[serde(default)]
    pub caller: Option<ServiceRef>,
    pub callee: ServiceRef,
    pub start_us: i64,
    pub duration_us: u64,
    pub status: SpanStatus,
}

/// Half-open time window `[start_us, end_us)`; spans are selected by start
/// time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    start_us: i64,
    end_us: i64,
}

impl TimeWindow {
    pub fn new(start_us: i64, end_us: i64) -> Result<Self, TraceError> {
        if start_us >= end_us {
            return Err(TraceError::InvalidWindow { start_us, end_us });
        }
        Ok(TimeWindow { start_us, end_us })
    }

    /// A window wide enough to admit any representable timestamp.
    pub fn all() -> Self {
        TimeWindow { start_us: i64::MIN, end_us: i64::MAX }
    }

    pub fn start_us(&self) -> i64 {
        self.start_us
    }

    pub fn end_us(&self) -> i64 {
        self.end_us
    }

    pub fn contains(&self, t_us: i64) -> bool {
        self.start_us <= t_us && t_us < self.end_us
    }
}

// --- ingestion --------------------------------------------------------------

/// Supported on-disk trace formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    /// One JSON object per line with the `SpanRecord` fields.
    JsonLines,
    /// The Alibaba cluster-trace CSV layout
    /// (`timestamp,traceid,rpcid,um,dm,rt`, extra columns ignored).
    AlibabaCsv,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(TraceFormat::JsonLines),
            "alibaba-csv" => Ok(TraceFormat::AlibabaCsv),
            other => Err(format!("unknown trace format {other:?}; expected \"jsonl\" or \"alibaba-csv\"")),
        }
    }
}

/// What ingestion kept and what it dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Rows (non-blank lines / CSV records) the parser looked at.
    pub rows_read: u64,
    /// Rows dropped as malformed or incomplete.
    pub rows_skipped: u64,
    /// Rows dropped because caller == callee.
    pub self_calls_dropped: u64,
}

/// Parses spans from `reader`, skipping malformed rows instead of failing.
///
/// Only an unreadable source is an error. Self-calls are dropped here so the
/// graph layer never sees them; the report accounts for every dropped row.
pub fn ingest_spans<R: BufRead>(
    reader: R,
    format: TraceFormat,
) -> Result<(Vec<SpanRecord>, IngestReport), TraceError> {
    match format {
        TraceFormat::JsonLines => ingest_jsonl(reader),
        TraceFormat::AlibabaCsv => ingest_alibaba_csv(reader),
    }
}

/// Convenience wrapper over [`ingest_spans`] for files.
pub fn ingest_spans_from_path(
    path: impl AsRef<Path>,
    format: TraceFormat,
) -> Result<(Vec<SpanRecord>, IngestReport), TraceError> {
    let file = File::open(path)?;
    ingest_spans(BufReader::new(file), format)
}

fn ingest_jsonl<R: BufRead>(reader: R) -> Result<(Vec<SpanRecord>, IngestReport), TraceError> {
    let mut spans = Vec::new();
    let mut report = IngestReport::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        match serde_json::from_str::<SpanRecord>(&line) {
            Ok(span) => {
                if span.caller.as_ref() == Some(&span.callee) {
                    report.self_calls_dropped += 1;
                } else {
                    spans.push(span);
                }
            }
            Err(_) => report.rows_skipped += 1,
        }
    }
    Ok((spans, report))
}

/// Maps one Alibaba CSV record onto the span model: `um -> dm` is the call
/// edge, `rpcid` encodes the span's position in the call tree (the parent id
/// is the rpcid with its last dot-segment removed), `timestamp` is in
/// milliseconds, and a negative `rt` marks a failed call.
fn ingest_alibaba_csv<R: BufRead>(reader: R) -> Result<(Vec<SpanRecord>, IngestReport), TraceError> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv_reader.headers().map_err(csv_io_error)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_ts), Some(c_trace), Some(c_rpc), Some(c_um), Some(c_dm), Some(c_rt)) = (
        col("timestamp"),
        col("traceid"),
        col("rpcid"),
        col("um"),
        col("dm"),
        col("rt"),
    ) else {
        return Err(TraceError::Malformed {
            line: 1,
            message: "missing required columns (timestamp,traceid,rpcid,um,dm,rt)".into(),
        });
    };

    let mut spans = Vec::new();
    let mut report = IngestReport::default();
    for record in csv_reader.into_records() {
        let record = record.map_err(csv_io_error)?;
        report.rows_read += 1;
        let Some(span) = alibaba_row_to_span(&record, c_ts, c_trace, c_rpc, c_um, c_dm, c_rt) else {
            report.rows_skipped += 1;
            continue;
        };
        if span.caller.as_ref() == Some(&span.callee) {
            report.self_calls_dropped += 1;
        } else {
            spans.push(span);
        }
    }
    Ok((spans, report))
}

fn csv_io_error(err: csv::Error) -> TraceError {
    match err.into_kind() {
        csv::ErrorKind::Io(io_err) => TraceError::Io(io_err),
        other => TraceError::Malformed { line: 0, message: format!("{other:?}") },
    }
}

fn alibaba_row_to_span(
    record: &csv::StringRecord,
    c_ts: usize,
    c_trace: usize,
    c_rpc: usize,
    c_um: usize,
    c_dm: usize,
    c_rt: usize,
) -> Option<SpanRecord> {
    let field = |i: usize| record.get(i).map(str::trim).filter(|s| !s.is_empty() && *s != "(?)");
    let callee = alibaba_endpoint(field(c_dm)?)?;
    let caller = match field(c_um) {
        Some(um) => Some(alibaba_endpoint(um)?),
        None => None,
    };
    let start_ms: i64 = field(c_ts)?.parse().ok()?;
    let rt_ms: f64 = field(c_rt)?.parse().ok()?;
    let rpcid = field(c_rpc)?.to_string();
    let parent_span_id = rpcid.rsplit_once('.').map(|(prefix, _)| prefix.to_string());
    Some(SpanRecord {
        trace_id: field(c_trace)?.to_string(),
        span_id: rpcid,
        parent_span_id,
        caller,
        callee,
        start_us: start_ms * 1000,
        duration_us: if rt_ms < 0.0 { 0 } else { (rt_ms * 1000.0).round() as u64 },
        status: if rt_ms < 0.0 { SpanStatus::Error } else { SpanStatus::Ok },
    })
}

/// Alibaba endpoints are bare hashed names; qualified `ns/name` forms pass
/// through, everything else lands in the `default` namespace.
fn alibaba_endpoint(raw: &str) -> Option<ServiceRef> {
    if raw.contains('/') {
        raw.parse().ok()
    } else {
        ServiceRef::new("default", raw).ok()
    }
}

// --- call graphs ------------------------------------------------------------

/// A weighted, directed service call graph over one time window.
///
/// Nodes are every service observed as caller or callee of an in-window
/// span; the weight of edge `u -> v` counts in-window spans with caller `u`
/// and callee `v`. Construction is deterministic: all containers are
/// ordered, so iteration order never depends on input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallGraph {
    window: TimeWindow,
    services: BTreeSet<ServiceRef>,
    edges: BTreeMap<(ServiceRef, ServiceRef), u64>,
}

/// Per-service degree summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DegreeStats {
    /// Number of distinct callers.
    pub fan_in: usize,
    /// Number of distinct callees.
    pub fan_out: usize,
}

/// Fan-in/fan-out per service plus the global extremes.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityStats {
    pub per_service: BTreeMap<ServiceRef, DegreeStats>,
    pub max_fan_in: Option<(ServiceRef, usize)>,
    pub max_fan_out: Option<(ServiceRef, usize)>,
}

/// Aggregates spans whose `start_us` falls in `window` into a [`CallGraph`].
///
/// Spans without a caller still register the callee as a node; self-calls
/// are dropped defensively (ingestion already filters them).
pub fn build_call_graph(spans: &[SpanRecord], window: TimeWindow) -> CallGraph {
    let mut services = BTreeSet::new();
    let mut edges: BTreeMap<(ServiceRef, ServiceRef), u64> = BTreeMap::new();
    for span in spans.iter().filter(|s| window.contains(s.start_us)) {
        services.insert(span.callee.clone());
        if let Some(caller) = &span.caller {
            if caller == &span.callee {
                continue;
            }
            services.insert(caller.clone());
            *edges.entry((caller.clone(), span.callee.clone())).or_insert(0) += 1;
        }
    }
    CallGraph { window, services, edges }
}

impl CallGraph {
    /// Builds a graph directly from weighted edges (synthetic topologies,
    /// scenario files). The window is recorded as given.
    pub fn from_edges(
        window: TimeWindow,
        services: impl IntoIterator<Item = ServiceRef>,
        edges: impl IntoIterator<Item = (ServiceRef, ServiceRef, u64)>,
    ) -> Self {
        let mut graph = CallGraph {
            window,
            services: services.into_iter().collect(),
            edges: BTreeMap::new(),
        };
        for (caller, callee, weight) in edges {
            if caller == callee || weight == 0 {
                continue;
            }
            graph.services.insert(caller.clone());
            graph.services.insert(callee.clone());
            *graph.edges.entry((caller, callee)).or_insert(0) += weight;
        }
        graph
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceRef> {
        self.services.iter()
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, service: &ServiceRef) -> bool {
        self.services.contains(service)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&ServiceRef, &ServiceRef, u64)> {
        self.edges.iter().map(|((u, v), w)| (u, v, *w))
    }

    pub fn edge_weight(&self, caller: &ServiceRef, callee: &ServiceRef) -> Option<u64> {
        self.edges.get(&(caller.clone(), callee.clone())).copied()
    }

    pub fn total_edge_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Number of services with a directed path *to* `service` (its
    /// transitive callers), excluding the service itself. This is the set of
    /// services whose user-visible behavior can degrade when `service`
    /// misbehaves.
    pub fn blast_radius(&self, service: &ServiceRef) -> Result<usize, TraceError> {
        let index = GraphIndex::new(self);
        let id = index
            .id(service)
            .ok_or_else(|| TraceError::UnknownService(service.clone()))?;
        Ok(index.blast_radius(id))
    }

    /// Fan-in/fan-out per service plus the global extremes. Ties on the
    /// extremes resolve to the lexicographically least service.
    pub fn connectivity_stats(&self) -> ConnectivityStats {
        let mut per_service: BTreeMap<ServiceRef, DegreeStats> = self
            .services
            .iter()
            .map(|s| (s.clone(), DegreeStats::default()))
            .collect();
        for (caller, callee) in self.edges.keys() {
            per_service.get_mut(caller).expect("edge endpoint registered").fan_out += 1;
            per_service.get_mut(callee).expect("edge endpoint registered").fan_in += 1;
        }
        let max_fan_in = per_service
            .iter()
            .max_by(|a, b| a.1.fan_in.cmp(&b.1.fan_in).then_with(|| b.0.cmp(a.0)))
            .filter(|(_, d)| d.fan_in > 0)
            .map(|(s, d)| (s.clone(), d.fan_in));
        let max_fan_out = per_service
            .iter()
            .max_by(|a, b| a.1.fan_out.cmp(&b.1.fan_out).then_with(|| b.0.cmp(a.0)))
            .filter(|(_, d)| d.fan_out > 0)
            .map(|(s, d)| (s.clone(), d.fan_out));
        ConnectivityStats { per_service, max_fan_in, max_fan_out }
    }
}

// --- indexed form -----------------------------------------------------------

/// A compact adjacency-list view of a [`CallGraph`] for repeated traversals.
///
/// Service ids are positions in canonical (sorted) order, so traversal order
/// — and therefore every downstream tie-break — is deterministic. Building
/// the index is `O(V + E log E)`; every query after that is linear in what
/// it touches.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    services: Vec<ServiceRef>,
    by_ref: HashMap<ServiceRef, u32>,
    out_edges: Vec<Vec<u32>>,
    in_edges: Vec<Vec<u32>>,
    out_weights: Vec<Vec<u64>>,
}

impl GraphIndex {
    pub fn new(graph: &CallGraph) -> Self {
        let services: Vec<ServiceRef> = graph.services.iter().cloned().collect();
        let by_ref: HashMap<ServiceRef, u32> = services
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let mut out_edges = vec![Vec::new(); services.len()];
        let mut in_edges = vec![Vec::new(); services.len()];
        let mut out_weights = vec![Vec::new(); services.len()];
        // BTreeMap iteration is already (caller, callee)-sorted, so the
        // adjacency lists come out sorted by id without an extra pass.
        for ((caller, callee), weight) in &graph.edges {
            let u = by_ref[caller] as usize;
            let v = by_ref[callee];
            out_edges[u].push(v);
            out_weights[u].push(*weight);
            in_edges[v as usize].push(u as u32);
        }
        for callers in &mut in_edges {
            callers.sort_unstable();
        }
        GraphIndex { services, by_ref, out_edges, in_edges, out_weights }
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn id(&self, service: &ServiceRef) -> Option<u32> {
        self.by_ref.get(service).copied()
    }

    pub fn service(&self, id: u32) -> &ServiceRef {
        &self.services[id as usize]
    }

    /// Callees of `id`, ascending.
    pub fn callees(&self, id: u32) -> &[u32] {
        &self.out_edges[id as usize]
    }

    /// Callers of `id`, ascending.
    pub fn callers(&self, id: u32) -> &[u32] {
        &self.in_edges[id as usize]
    }

    /// Edge weights parallel to [`GraphIndex::callees`].
    pub fn callee_weights(&self, id: u32) -> &[u64] {
        &self.out_weights[id as usize]
    }

    pub fn fan_in(&self, id: u32) -> usize {
        self.in_edges[id as usize].len()
    }

    /// Transitive-caller count (see [`CallGraph::blast_radius`]).
    pub fn blast_radius(&self, id: u32) -> usize {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::new();
        seen[id as usize] = true;
        queue.push_back(id);
        let mut count = 0usize;
        while let Some(v) = queue.pop_front() {
            for &u in self.callers(v) {
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count
    }
}

// --- tests --------------------------------------------------------------
