//! Domain types shared by the cost model, the assigner, the simulator, the
//! scenario loader and the wire protocol.
//!
//! Times are `f64` seconds, sizes are exact `u64` bytes, speeds are `f64`
//! bytes per second.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a participating node. Ordering is plain string ordering and
/// is used for every tie-break in the crate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    EdgeHost,
    Mist,
    Fog,
    Cloud,
}

/// Static specification of a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeProfile {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub cpu_benchmark: f64,
    pub cores_available: u32,
    /// Bytes.
    pub ram_total: u64,
    /// Bytes per second.
    pub disk_read: f64,
    /// Bytes per second.
    pub disk_write: f64,
}

/// Runtime state of a node, frozen at planning time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicContext {
    pub node_id: NodeId,
    /// Fraction of CPU in use, in `[0, 1]`.
    pub cpu_usage: f64,
    /// Bytes.
    pub ram_used: u64,
    /// Seconds on the sampler's monotonic clock.
    pub sampled_at: f64,
}

/// A directed network path. When `hops` is non-empty it lists every node on
/// the path including both endpoints, and the path's figures must equal the
/// sums over its direct segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkPath {
    pub from: NodeId,
    pub to: NodeId,
    /// Seconds per byte.
    pub per_byte_time: f64,
    /// Seconds.
    #[serde(default)]
    pub fixed_latency: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hops: Vec<NodeId>,
}

impl LinkPath {
    pub fn direct(from: impl Into<String>, to: impl Into<String>, per_byte_time: f64, fixed_latency: f64) -> Self {
        LinkPath {
            from: NodeId(from.into()),
            to: NodeId(to.into()),
            per_byte_time,
            fixed_latency,
            hops: Vec::new(),
        }
    }

    /// Transfer time for `bytes` over this path.
    pub fn transfer_time(&self, bytes: f64) -> f64 {
        self.per_byte_time * bytes + self.fixed_latency
    }

    fn connects(&self, a: &NodeId, b: &NodeId) -> bool {
        (&self.from == a && &self.to == b) || (&self.from == b && &self.to == a)
    }
}

/// Resource dimensions entering the capability score. Every value is "bigger
/// is faster": free RAM is `ram_total - ram_used`, idle is `1 - cpu_usage`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    CpuBenchmark,
    CoresAvailable,
    /// Free RAM measured in gigabytes (10^9 bytes).
    RamFree,
    CpuIdleFraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub kind: ResourceKind,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceWeights(pub Vec<WeightEntry>);

impl ResourceWeights {
    /// All four resource kinds weighted 1.
    pub fn uniform() -> Self {
        use ResourceKind::*;
        ResourceWeights(
            [CpuBenchmark, CoresAvailable, RamFree, CpuIdleFraction]
                .into_iter()
                .map(|kind| WeightEntry { kind, weight: 1.0 })
                .collect(),
        )
    }

    pub fn one_hot(kind: ResourceKind) -> Self {
        ResourceWeights(vec![WeightEntry { kind, weight: 1.0 }])
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.0
    }
}

/// Timespans measured by one local trial. Every field is in seconds except
/// `out_bytes_per_object`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Unpack modules/dependencies.
    pub t_upk_mdl: f64,
    /// Unpack the main program.
    pub t_upk_alg: f64,
    /// Pack modules/dependencies.
    pub t_pk_mdl: f64,
    /// Pack the main program.
    pub t_pk_alg: f64,
    /// Pack one data object.
    pub t_pk_d: f64,
    /// Unpack one data object.
    pub t_upk_d: f64,
    /// Pack one output.
    pub t_pk_o1: f64,
    /// Process one data object.
    pub t_proc1: f64,
    /// Unpack one archived output.
    pub t_upk_o1: f64,
    pub out_bytes_per_object: u64,
}

impl Calibration {
    pub(crate) fn timespans(&self) -> [(&'static str, f64); 9] {
        [
            ("t_upk_mdl", self.t_upk_mdl),
            ("t_upk_alg", self.t_upk_alg),
            ("t_pk_mdl", self.t_pk_mdl),
            ("t_pk_alg", self.t_pk_alg),
            ("t_pk_d", self.t_pk_d),
            ("t_upk_d", self.t_upk_d),
            ("t_pk_o1", self.t_pk_o1),
            ("t_proc1", self.t_proc1),
            ("t_upk_o1", self.t_upk_o1),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub byte_alg: u64,
    pub byte_mdl: u64,
    pub byte_desc: u64,
    /// Size of one data object.
    pub byte_d: u64,
    pub num_objects: u32,
    pub receiver: NodeId,
    pub requester: NodeId,
}

/// The seven terms of a worker's completion-time estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub pack: f64,
    pub request_send: f64,
    pub unpack: f64,
    pub process: f64,
    pub output_pack: f64,
    pub output_send: f64,
    pub output_unpack: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn from_parts(
        pack: f64,
        request_send: f64,
        unpack: f64,
        process: f64,
        output_pack: f64,
        output_send: f64,
        output_unpack: f64,
    ) -> Self {
        let mut b = CostBreakdown {
            pack,
            request_send,
            unpack,
            process,
            output_pack,
            output_send,
            output_unpack,
            total: 0.0,
        };
        b.total = b.parts().iter().sum();
        b
    }

    pub fn parts(&self) -> [f64; 7] {
        [
            self.pack,
            self.request_send,
            self.unpack,
            self.process,
            self.output_pack,
            self.output_send,
            self.output_unpack,
        ]
    }

    /// Pack, transmit and unpack.
    pub fn deploy(&self) -> f64 {
        self.pack + self.request_send + self.unpack
    }

    /// Execution plus everything needed to land the output at the receiver.
    pub fn process_and_response(&self) -> f64 {
        self.process + self.output_pack + self.output_send + self.output_unpack
    }
}

/// One iteration of the greedy assigner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: u32,
    pub chosen: NodeId,
    /// Estimated totals of every candidate before this step, in ascending
    /// node-id order (the key order of [`Plan::estimates`]).
    pub wt_before: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub assignments: BTreeMap<NodeId, u32>,
    pub estimates: BTreeMap<NodeId, f64>,
    pub trace: Vec<TraceStep>,
    pub predicted_makespan: f64,
    pub excluded: BTreeSet<NodeId>,
}

impl Plan {
    /// Builds a plan from final counts and their estimates, deriving the
    /// makespan and exclusion set.
    pub fn from_counts(
        assignments: BTreeMap<NodeId, u32>,
        estimates: BTreeMap<NodeId, f64>,
        trace: Vec<TraceStep>,
    ) -> Self {
        let predicted_makespan = assignments
            .iter()
            .filter(|(_, &wp)| wp > 0)
            .map(|(id, _)| estimates[id])
            .fold(0.0, f64::max);
        let excluded = assignments
            .iter()
            .filter(|(_, &wp)| wp == 0)
            .map(|(id, _)| id.clone())
            .collect();
        Plan {
            assignments,
            estimates,
            trace,
            predicted_makespan,
            excluded,
        }
    }

    pub fn total_objects(&self) -> u64 {
        self.assignments.values().map(|&wp| u64::from(wp)).sum()
    }

    pub fn active(&self) -> impl Iterator<Item = (&NodeId, u32)> {
        self.assignments
            .iter()
            .filter(|(_, &wp)| wp > 0)
            .map(|(id, &wp)| (id, wp))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub delegator: NodeId,
    pub nodes: Vec<NodeProfile>,
    pub contexts: Vec<DynamicContext>,
    pub links: Vec<LinkPath>,
    pub request: RequestSpec,
    pub calibration: Calibration,
    pub weights: ResourceWeights,
}

impl Scenario {
    pub fn profile(&self, id: &NodeId) -> Option<&NodeProfile> {
        self.nodes.iter().find(|n| &n.node_id == id)
    }

    pub fn context(&self, id: &NodeId) -> Option<&DynamicContext> {
        self.contexts.iter().find(|c| &c.node_id == id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter().map(|n| &n.node_id)
    }

    /// Path between two nodes. A link declared in one direction serves both;
    /// an exact-direction entry wins over a reversed one.
    pub fn path(&self, from: &NodeId, to: &NodeId) -> Option<&LinkPath> {
        self.links
            .iter()
            .find(|l| &l.from == from && &l.to == to)
            .or_else(|| self.links.iter().find(|l| l.connects(from, to)))
    }

    /// Position of a node in the scenario's listing order.
    pub fn node_rank(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| &n.node_id == id)
    }
}

/// One broken invariant or dangling reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks every type invariant and cross reference of a scenario. An empty
/// result means the scenario is usable everywhere in the crate.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();

    for n in &s.nodes {
        let subj = format!("node {}", n.node_id);
        if !ids.insert(&n.node_id) {
            out.push(Violation::new(&subj, "duplicate node_id"));
        }
        if !positive(n.cpu_benchmark) {
            out.push(Violation::new(&subj, "cpu_benchmark must be > 0"));
        }
        if n.cores_available == 0 {
            out.push(Violation::new(&subj, "cores_available must be >= 1"));
        }
        if n.ram_total == 0 {
            out.push(Violation::new(&subj, "ram_total must be > 0"));
        }
        if !positive(n.disk_read) || !positive(n.disk_write) {
            out.push(Violation::new(&subj, "disk speeds must be > 0"));
        }
    }

    if !ids.contains(&s.delegator) {
        out.push(Violation::new("delegator", format!("unknown node {}", s.delegator)));
    }

    let mut seen_ctx = HashSet::new();
    for c in &s.contexts {
        let subj = format!("context {}", c.node_id);
        if !seen_ctx.insert(&c.node_id) {
            out.push(Violation::new(&subj, "duplicate context"));
        }
        match s.profile(&c.node_id) {
            None => out.push(Violation::new(&subj, format!("unknown node {}", c.node_id))),
            Some(p) if c.ram_used > p.ram_total => out.push(Violation::new(&subj, "ram_used exceeds ram_total")),
            Some(_) => {}
        }
        if !(0.0..=1.0).contains(&c.cpu_usage) {
            out.push(Violation::new(&subj, "cpu_usage must lie in [0, 1]"));
        }
    }
    for n in &s.nodes {
        if !seen_ctx.contains(&n.node_id) {
            out.push(Violation::new(format!("node {}", n.node_id), "missing dynamic context"));
        }
    }

    for (i, l) in s.links.iter().enumerate() {
        let subj = format!("link #{i} {}->{}", l.from, l.to);
        for end in [&l.from, &l.to] {
            if !ids.contains(end) {
                out.push(Violation::new(&subj, format!("unknown node {end}")));
            }
        }
        if !positive(l.per_byte_time) {
            out.push(Violation::new(&subj, "per_byte_time must be > 0"));
        }
        if !(l.fixed_latency.is_finite() && l.fixed_latency >= 0.0) {
            out.push(Violation::new(&subj, "fixed_latency must be >= 0"));
        }
        if !l.hops.is_empty() {
            check_hops(s, l, &subj, &mut out);
        }
    }

    if s.weights.entries().is_empty() {
        out.push(Violation::new("weights", "no resource weights"));
    } else {
        let mut kinds = HashSet::new();
        for w in s.weights.entries() {
            if !kinds.insert(w.kind) {
                out.push(Violation::new("weights", format!("duplicate kind {:?}", w.kind)));
            }
            if !(w.weight.is_finite() && w.weight >= 0.0) {
                out.push(Violation::new(
                    "weights",
                    format!("weight of {:?} must be >= 0", w.kind),
                ));
            }
        }
        if !s.weights.entries().iter().any(|w| w.weight > 0.0) {
            out.push(Violation::new("weights", "at least one weight must be > 0"));
        }
    }

    for (name, v) in s.calibration.timespans() {
        if !positive(v) {
            out.push(Violation::new("calibration", format!("{name} must be > 0")));
        }
    }
    if s.calibration.out_bytes_per_object == 0 {
        out.push(Violation::new("calibration", "out_bytes_per_object must be > 0"));
    }

    let r = &s.request;
    if r.num_objects == 0 {
        out.push(Violation::new("request", "num_objects must be >= 1"));
    }
    for (what, id) in [("receiver", &r.receiver), ("requester", &r.requester)] {
        if !ids.contains(id) {
            out.push(Violation::new(
                "request",
                format!("{what} references unknown node {id}"),
            ));
        }
    }

    if ids.contains(&s.delegator) {
        for n in &s.nodes {
            if n.node_id != s.delegator && s.path(&s.delegator, &n.node_id).is_none() {
                out.push(Violation::new(
                    format!("node {}", n.node_id),
                    format!("no path from delegator {}", s.delegator),
                ));
            }
        }
    }
    if ids.contains(&r.receiver) {
        for n in &s.nodes {
            if n.node_id != r.receiver && s.path(&n.node_id, &r.receiver).is_none() {
                out.push(Violation::new(
                    format!("node {}", n.node_id),
                    format!("no path to receiver {}", r.receiver),
                ));
            }
        }
    }

    out
}

fn check_hops(s: &Scenario, l: &LinkPath, subj: &str, out: &mut Vec<Violation>) {
    if l.hops.len() < 2 || l.hops.first() != Some(&l.from) || l.hops.last() != Some(&l.to) {
        out.push(Violation::new(subj, "hops must start at `from` and end at `to`"));
        return;
    }
    let mut per_byte = 0.0;
    let mut latency = 0.0;
    for pair in l.hops.windows(2) {
        let seg = s
            .links
            .iter()
            .find(|x| x.hops.is_empty() && x.from == pair[0] && x.to == pair[1])
            .or_else(|| {
                s.links
                    .iter()
                    .find(|x| x.hops.is_empty() && x.connects(&pair[0], &pair[1]))
            });
        match seg {
            Some(seg) => {
                per_byte += seg.per_byte_time;
                latency += seg.fixed_latency;
            }
            None => {
                out.push(Violation::new(
                    subj,
                    format!("no direct segment {}->{}", pair[0], pair[1]),
                ));
                return;
            }
        }
    }
    if !close(per_byte, l.per_byte_time) {
        out.push(Violation::new(
            subj,
            format!("per_byte_time {} differs from hop sum {}", l.per_byte_time, per_byte),
        ));
    }
    if !close(latency, l.fixed_latency) && !(latency == 0.0 && l.fixed_latency == 0.0) {
        out.push(Violation::new(
            subj,
            format!("fixed_latency {} differs from hop sum {}", l.fixed_latency, latency),
        ));
    }
}
