//! Deterministic timeline execution of a plan.
//!
//! The delegator packs packages one after another on its own CPU and pushes
//! them through a single uplink one after another; a package's transmission
//! starts once it is packed and the uplink is free. Each worker then unpacks,
//! processes, packs its outputs, ships them and the receiver unpacks them, with
//! workers running in parallel. Every stage lasts exactly as long as the cost
//! model says, so the only difference from the per-worker estimate is the wait
//! for the delegator's CPU and uplink.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::assign::{baseline_assign, AssignError, AssignmentPolicy};
use crate::cost::{CostError, CostModel, WorkerView};
use crate::model::{CostBreakdown, NodeId, Plan, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("plan references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Whether the delegator's outgoing packages share one radio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UplinkMode {
    /// Packing and sending are each one-at-a-time on the delegator.
    #[default]
    Serialized,
    /// Every package is packed and sent independently; the simulated
    /// makespan then equals the plan's predicted makespan.
    Parallel,
}

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    pub uplink: UplinkMode,
    pub label: String,
}

/// Stage boundaries of one worker, in seconds from the start of the request.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkerSpan {
    pub objects: u32,
    pub pack_start: f64,
    pub send_start: f64,
    pub send_end: f64,
    pub unpack_end: f64,
    /// Start of the request until the package is unpacked, including any wait
    /// for the delegator.
    pub deploy_span: f64,
    /// Execution, output packing, output transfer and receiver unpack.
    pub proc_resp_span: f64,
    pub finish_at: f64,
    pub breakdown: CostBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub case_label: String,
    /// Workers with at least one object.
    pub per_worker: BTreeMap<NodeId, WorkerSpan>,
    pub makespan: f64,
    pub excluded: BTreeSet<NodeId>,
}

impl SimReport {
    /// The worker whose output lands last; ties go to the lowest id.
    pub fn critical(&self) -> Option<(&NodeId, &WorkerSpan)> {
        self.per_worker
            .iter()
            .reduce(|a, b| if b.1.finish_at > a.1.finish_at { b } else { a })
    }

    pub fn deploy_span(&self) -> f64 {
        self.critical().map_or(0.0, |(_, w)| w.deploy_span)
    }

    pub fn proc_resp_span(&self) -> f64 {
        self.critical().map_or(0.0, |(_, w)| w.proc_resp_span)
    }
}

/// Order in which the delegator handles packages: its own executor first,
/// then workers by first appearance in the plan's trace, then by scenario
/// listing order.
fn dispatch_order(s: &Scenario, plan: &Plan) -> Vec<NodeId> {
    let mut active: Vec<&NodeId> = plan.active().map(|(id, _)| id).collect();
    let first_pick = |id: &NodeId| plan.trace.iter().position(|t| &t.chosen == id).unwrap_or(usize::MAX);
    active.sort_by_key(|id| {
        (
            **id != s.delegator,
            first_pick(id),
            s.node_rank(id).unwrap_or(usize::MAX),
            (*id).clone(),
        )
    });
    active.into_iter().cloned().collect()
}

pub fn simulate(s: &Scenario, plan: &Plan) -> Result<SimReport, SimError> {
    simulate_with(s, plan, &SimOptions::default())
}

pub fn simulate_with(s: &Scenario, plan: &Plan, opts: &SimOptions) -> Result<SimReport, SimError> {
    for id in plan.assignments.keys() {
        if s.profile(id).is_none() {
            return Err(SimError::UnknownNode(id.clone()));
        }
    }
    let model = CostModel::from_scenario(s)?;

    let mut cpu_free = 0.0_f64;
    let mut uplink_free = 0.0_f64;
    let mut per_worker = BTreeMap::new();
    for id in dispatch_order(s, plan) {
        let wp = plan.assignments[&id];
        let b = model.get_time(&WorkerView::from_scenario(s, &id)?, wp)?;

        let (pack_start, send_start) = match opts.uplink {
            UplinkMode::Parallel => (0.0, b.pack),
            UplinkMode::Serialized => {
                let pack_start = cpu_free;
                cpu_free = pack_start + b.pack;
                let send_start = if b.request_send > 0.0 {
                    cpu_free.max(uplink_free)
                } else {
                    cpu_free
                };
                if b.request_send > 0.0 {
                    uplink_free = send_start + b.request_send;
                }
                (pack_start, send_start)
            }
        };
        let send_end = send_start + b.request_send;
        let unpack_end = send_end + b.unpack;
        let finish_at = unpack_end + b.process + b.output_pack + b.output_send + b.output_unpack;

        per_worker.insert(
            id,
            WorkerSpan {
                objects: wp,
                pack_start,
                send_start,
                send_end,
                unpack_end,
                deploy_span: unpack_end,
                proc_resp_span: finish_at - unpack_end,
                finish_at,
                breakdown: b,
            },
        );
    }

    let makespan = per_worker.values().map(|w| w.finish_at).fold(0.0, f64::max);
    Ok(SimReport {
        case_label: opts.label.clone(),
        per_worker,
        makespan,
        excluded: plan.excluded.clone(),
    })
}

/// A labelled policy to run through the simulator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Case {
    pub label: String,
    pub policy: AssignmentPolicy,
}

/// Concatenation of node ids in scenario listing order.
pub fn subset_label(s: &Scenario, ids: &[NodeId]) -> String {
    let mut v: Vec<&NodeId> = ids.iter().collect();
    v.sort_by_key(|id| (s.node_rank(id).unwrap_or(usize::MAX), (*id).clone()));
    v.dedup();
    v.iter().map(|id| id.as_str()).collect()
}

impl Case {
    pub fn local(s: &Scenario) -> Case {
        Case {
            label: s.delegator.to_string(),
            policy: AssignmentPolicy::LocalOnly,
        }
    }

    pub fn mono(target: &NodeId) -> Case {
        Case {
            label: target.to_string(),
            policy: AssignmentPolicy::Mono(target.clone()),
        }
    }

    pub fn equal(s: &Scenario, ids: &[NodeId]) -> Case {
        Case {
            label: subset_label(s, ids),
            policy: AssignmentPolicy::EqualSplit(ids.to_vec()),
        }
    }

    /// Greedy over a subset, labelled `A.<subset>`.
    pub fn rem_subset(s: &Scenario, ids: &[NodeId]) -> Case {
        Case {
            label: format!("A.{}", subset_label(s, ids)),
            policy: AssignmentPolicy::RemGreedy(ids.to_vec()),
        }
    }

    /// Greedy over every scenario node, labelled `REM`.
    pub fn rem_all(s: &Scenario) -> Case {
        Case {
            label: "REM".into(),
            policy: AssignmentPolicy::RemGreedy(s.node_ids().cloned().collect()),
        }
    }

    /// Parses the figure notation: `REM`, `A.<ids>`, a single node id (local
    /// run for the delegator, mono migration otherwise), or several node ids
    /// written back to back for an equal split.
    pub fn parse(s: &Scenario, token: &str) -> Result<Case, SimError> {
        let token = token.trim();
        if token == "REM" {
            return Ok(Case::rem_all(s));
        }
        if let Some(rest) = token.strip_prefix("A.") {
            let ids = split_ids(s, rest).ok_or_else(|| SimError::UnknownCase(token.into()))?;
            return Ok(Case::rem_subset(s, &ids));
        }
        let ids = split_ids(s, token).ok_or_else(|| SimError::UnknownCase(token.into()))?;
        Ok(match ids.as_slice() {
            [one] if *one == s.delegator => Case::local(s),
            [one] => Case::mono(one),
            many => Case::equal(s, many),
        })
    }
}

/// Splits concatenated node ids, longest id first at each position.
fn split_ids(s: &Scenario, mut text: &str) -> Option<Vec<NodeId>> {
    let mut known: Vec<&str> = s.node_ids().map(NodeId::as_str).collect();
    known.sort_by_key(|id| std::cmp::Reverse(id.len()));
    let mut out = Vec::new();
    while !text.is_empty() {
        let id = known.iter().find(|id| !id.is_empty() && text.starts_with(**id))?;
        out.push(NodeId::from(*id));
        text = &text[id.len()..];
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

pub fn run_case(s: &Scenario, case: &Case, uplink: UplinkMode) -> Result<SimReport, SimError> {
    let plan = baseline_assign(s, &case.policy)?;
    simulate_with(
        s,
        &plan,
        &SimOptions {
            uplink,
            label: case.label.clone(),
        },
    )
}

/// One report per case, in input order.
pub fn compare(s: &Scenario, cases: &[Case]) -> Result<Vec<SimReport>, SimError> {
    compare_with(s, cases, UplinkMode::default())
}

pub fn compare_with(s: &Scenario, cases: &[Case], uplink: UplinkMode) -> Result<Vec<SimReport>, SimError> {
    cases.iter().map(|c| run_case(s, c, uplink)).collect()
}

/// Every non-empty subset of the scenario's nodes, smallest first, in
/// listing order within a size.
pub fn node_subsets(s: &Scenario) -> Vec<Vec<NodeId>> {
    let ids: Vec<NodeId> = s.node_ids().cloned().collect();
    let mut subsets: Vec<Vec<NodeId>> = (1u32..(1 << ids.len()))
        .map(|mask| {
            ids.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, id)| id.clone())
                .collect()
        })
        .collect();
    subsets.sort_by_key(|v: &Vec<NodeId>| v.len());
    subsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::rem_assign;
    use crate::cost::estimate;
    use crate::model::tests::tiny;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn single_local_worker_matches_estimate() {
        let s = tiny();
        let plan = baseline_assign(&s, &AssignmentPolicy::LocalOnly).unwrap();
        let r = simulate(&s, &plan).unwrap();
        let est = estimate(&s, &"A".into(), s.request.num_objects).unwrap().total;
        assert!(rel(r.makespan, est) < 1e-9);
        let w = &r.per_worker[&NodeId::from("A")];
        assert!(rel(w.deploy_span + w.proc_resp_span, w.finish_at) < 1e-12);
    }

    #[test]
    fn zero_size_packages_reduce_to_processing() {
        let mut s = tiny();
        s.request.byte_alg = 0;
        s.request.byte_mdl = 0;
        s.request.byte_d = 0;
        s.calibration.t_pk_mdl = 1e-300;
        s.calibration.t_pk_alg = 1e-300;
        s.calibration.t_pk_d = 1e-300;
        s.calibration.t_upk_mdl = 1e-300;
        s.calibration.t_upk_alg = 1e-300;
        s.calibration.t_upk_d = 1e-300;
        for l in &mut s.links {
            l.fixed_latency = 0.0;
        }
        let plan = baseline_assign(&s, &AssignmentPolicy::EqualSplit(vec!["B".into(), "C".into()])).unwrap();
        let r = simulate(&s, &plan).unwrap();
        let expect = r
            .per_worker
            .values()
            .map(|w| w.breakdown.process_and_response())
            .fold(0.0, f64::max);
        assert!(rel(r.makespan, expect) < 1e-9);
    }

    #[test]
    fn serialized_gap_is_queueing_delay() {
        let s = tiny();
        let c: Vec<NodeId> = s.node_ids().cloned().collect();
        let plan = rem_assign(&s, &c).unwrap();
        let serial = simulate(&s, &plan).unwrap();
        let parallel = simulate_with(
            &s,
            &plan,
            &SimOptions {
                uplink: UplinkMode::Parallel,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rel(parallel.makespan, plan.predicted_makespan) < 1e-12);
        for (id, w) in &serial.per_worker {
            let p = &parallel.per_worker[id];
            let wait = w.send_start - w.breakdown.pack;
            assert!(wait >= -1e-12);
            assert!((w.finish_at - p.finish_at - wait).abs() < 1e-9);
        }
        assert!(serial.makespan >= plan.predicted_makespan - 1e-12);
    }

    #[test]
    fn unknown_node_in_plan() {
        let s = tiny();
        let mut plan = baseline_assign(&s, &AssignmentPolicy::LocalOnly).unwrap();
        plan.assignments.insert("Z".into(), 1);
        assert_eq!(simulate(&s, &plan), Err(SimError::UnknownNode("Z".into())));
    }

    #[test]
    fn case_parsing() {
        let s = tiny();
        assert_eq!(Case::parse(&s, "A").unwrap().policy, AssignmentPolicy::LocalOnly);
        assert_eq!(Case::parse(&s, "C").unwrap().policy, AssignmentPolicy::Mono("C".into()));
        let eq = Case::parse(&s, "CAB").unwrap();
        assert_eq!(eq.label, "ABC");
        assert!(matches!(eq.policy, AssignmentPolicy::EqualSplit(_)));
        let a = Case::parse(&s, "A.AB").unwrap();
        assert_eq!(a.label, "A.AB");
        assert_eq!(Case::parse(&s, "REM").unwrap().label, "REM");
        assert!(Case::parse(&s, "AQ").is_err());
        assert!(Case::parse(&s, "").is_err());
    }

    #[test]
    fn subsets_cover_power_set() {
        let s = tiny();
        let subs = node_subsets(&s);
        assert_eq!(subs.len(), 7);
        assert_eq!(subs.iter().filter(|v| v.len() >= 2).count(), 4);
    }

    #[test]
    fn compare_labels_in_order() {
        let s = tiny();
        let cases: Vec<Case> = ["A", "C", "ABC", "REM"]
            .iter()
            .map(|t| Case::parse(&s, t).unwrap())
            .collect();
        let r = compare(&s, &cases).unwrap();
        let labels: Vec<_> = r.iter().map(|r| r.case_label.as_str()).collect();
        assert_eq!(labels, ["A", "C", "ABC", "REM"]);
    }
}
