//! Plan construction: the greedy REM assigner, the fixed baselines it is
//! compared against, and an exhaustive optimum for small instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel, WorkerView};
use crate::model::{NodeId, Plan, Scenario, TraceStep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{states} candidate splits exceed the cap of {cap}")]
    StateSpaceExceeded { states: u128, cap: u64 },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// How a request is split across workers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentPolicy {
    /// Greedy cost-driven split over the given candidates.
    RemGreedy(Vec<NodeId>),
    /// Everything on the delegator's own executor.
    LocalOnly,
    /// Everything shipped to one worker.
    Mono(NodeId),
    /// Even split regardless of runtime context.
    EqualSplit(Vec<NodeId>),
}

/// Sorted, deduplicated candidate list; every id must be a scenario node.
fn normalize(s: &Scenario, ids: &[NodeId]) -> Result<Vec<NodeId>, AssignError> {
    if ids.is_empty() {
        return Err(AssignError::EmptyCandidates);
    }
    let mut out = ids.to_vec();
    out.sort();
    out.dedup();
    for id in &out {
        if s.profile(id).is_none() {
            return Err(AssignError::UnknownNode(id.clone()));
        }
    }
    Ok(out)
}

fn views(s: &Scenario, ids: &[NodeId]) -> Result<Vec<WorkerView>, AssignError> {
    ids.iter()
        .map(|id| WorkerView::from_scenario(s, id).map_err(AssignError::from))
        .collect()
}

/// Greedy assignment: start every candidate at its zero-object estimate, then
/// hand out objects one at a time to the candidate with the smallest current
/// estimate (lowest node id on ties) and re-estimate it.
pub fn rem_assign(s: &Scenario, candidates: &[NodeId]) -> Result<Plan, AssignError> {
    let ids = normalize(s, candidates)?;
    let model = CostModel::from_scenario(s)?;
    let views = views(s, &ids)?;

    let mut wp = vec![0u32; ids.len()];
    let mut wt = views
        .iter()
        .map(|v| model.get_time(v, 0).map(|b| b.total))
        .collect::<Result<Vec<_>, _>>()?;
    let mut trace = Vec::with_capacity(s.request.num_objects as usize);

    for step in 0..s.request.num_objects {
        // first index wins ties, and ids are sorted
        let chosen = (0..wt.len())
            .reduce(|best, i| if wt[i] < wt[best] { i } else { best })
            .expect("non-empty candidates");
        trace.push(TraceStep {
            step_index: step,
            chosen: ids[chosen].clone(),
            wt_before: wt.clone(),
        });
        wp[chosen] += 1;
        wt[chosen] = model.get_time(&views[chosen], wp[chosen])?.total;
    }

    Ok(Plan::from_counts(
        ids.iter().cloned().zip(wp).collect(),
        ids.into_iter().zip(wt).collect(),
        trace,
    ))
}

/// Estimates every worker at its final count and wraps the result as a plan.
fn plan_from_counts(s: &Scenario, counts: BTreeMap<NodeId, u32>) -> Result<Plan, AssignError> {
    let model = CostModel::from_scenario(s)?;
    let mut estimates = BTreeMap::new();
    for (id, &wp) in &counts {
        let view = WorkerView::from_scenario(s, id)?;
        estimates.insert(id.clone(), model.get_time(&view, wp)?.total);
    }
    Ok(Plan::from_counts(counts, estimates, Vec::new()))
}

/// Splits `total` evenly; the remainder goes one each to the lowest ids.
pub fn equal_counts(ids: &[NodeId], total: u32) -> BTreeMap<NodeId, u32> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len() as u32;
    let (base, extra) = (total / n, total % n);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, base + u32::from((i as u32) < extra)))
        .collect()
}

/// Plans for the non-adaptive policies. `RemGreedy` is forwarded to
/// [`rem_assign`].
pub fn baseline_assign(s: &Scenario, policy: &AssignmentPolicy) -> Result<Plan, AssignError> {
    let total = s.request.num_objects;
    let counts = match policy {
        AssignmentPolicy::RemGreedy(c) => return rem_assign(s, c),
        AssignmentPolicy::LocalOnly => {
            let id = normalize(s, std::slice::from_ref(&s.delegator))?.remove(0);
            BTreeMap::from([(id, total)])
        }
        AssignmentPolicy::Mono(target) => {
            let id = normalize(s, std::slice::from_ref(target))?.remove(0);
            BTreeMap::from([(id, total)])
        }
        AssignmentPolicy::EqualSplit(ids) => equal_counts(&normalize(s, ids)?, total),
    };
    plan_from_counts(s, counts)
}

pub fn plan_for(s: &Scenario, policy: &AssignmentPolicy) -> Result<Plan, AssignError> {
    baseline_assign(s, policy)
}

/// Number of ways to split `objects` over `workers`: C(objects + workers - 1, workers - 1).
pub fn composition_count(objects: u32, workers: usize) -> u128 {
    if workers == 0 {
        return 0;
    }
    let k = workers as u128 - 1;
    let n = u128::from(objects) + k;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exhaustive search for the split minimizing the largest estimate among
/// workers that receive at least one object. Ties go to the lexicographically
/// smallest count vector over ascending node ids.
pub fn brute_force_optimal(s: &Scenario, candidates: &[NodeId], cap: u64) -> Result<Plan, AssignError> {
    let ids = normalize(s, candidates)?;
    let total = s.request.num_objects;
    let states = composition_count(total, ids.len());
    if states > u128::from(cap) {
        return Err(AssignError::StateSpaceExceeded { states, cap });
    }
    let model = CostModel::from_scenario(s)?;
    let views = views(s, &ids)?;
    let table = views
        .iter()
        .map(|v| {
            (0..=total)
                .map(|wp| model.get_time(v, wp).map(|b| b.total))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<(f64, Vec<u32>)> = None;
    let mut current = vec![0u32; ids.len()];
    enumerate(&table, 0, total, 0.0, &mut current, &mut best);
    let (_, counts) = best.expect("at least one composition");

    let estimates = ids
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (id, &wp))| (id.clone(), table[i][wp as usize]))
        .collect();
    Ok(Plan::from_counts(
        ids.into_iter().zip(counts).collect(),
        estimates,
        Vec::new(),
    ))
}

/// Visits compositions in lexicographic order of the count vector, so the
/// first strict improvement found is also the lexicographically smallest.
fn enumerate(
    table: &[Vec<f64>],
    idx: usize,
    left: u32,
    running_max: f64,
    current: &mut Vec<u32>,
    best: &mut Option<(f64, Vec<u32>)>,
) {
    let last = idx + 1 == table.len();
    let range = if last { left..=left } else { 0..=left };
    for wp in range {
        current[idx] = wp;
        let m = if wp > 0 {
            running_max.max(table[idx][wp as usize])
        } else {
            running_max
        };
        if last {
            if best.as_ref().is_none_or(|(b, _)| m < *b) {
                *best = Some((m, current.clone()));
            }
        } else {
            enumerate(table, idx + 1, left - wp, m, current, best);
        }
    }
    current[idx] = 0;
}
