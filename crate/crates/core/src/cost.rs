//! Completion-time model for one worker handling `wp` data objects.
//!
//! Every term is affine in `wp`. Worker-side terms are the locally calibrated
//! timespans scaled by how much faster or slower the worker is than the
//! delegator: `t_worker = t_local * local_capability / worker_capability`.
//! Disk-bound stages (unpack, output pack, output unpack) use the mean of disk
//! read and write speed as capability, execution uses the weighted resource
//! score.

use thiserror::Error;

use crate::model::{
    Calibration, CostBreakdown, DynamicContext, LinkPath, NodeId, NodeProfile, RequestSpec, ResourceKind,
    ResourceWeights, Scenario,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
}

/// How capability ratios enter the worker-side terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FormulaVariant {
    /// `t_local * local / worker`: a time, summable with the other terms.
    #[default]
    RateInverted,
    /// `(1 / t_local) * worker / local`, evaluated as written. Yields a rate,
    /// not a time; kept only to compare against. Zero-object terms are 0.
    Literal,
}

/// A worker together with the paths its packages and outputs travel.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerView {
    pub profile: NodeProfile,
    pub context: DynamicContext,
    /// `None` for the delegator's own executor.
    pub path_from_delegator: Option<LinkPath>,
    /// `None` when the worker is the output receiver.
    pub path_to_receiver: Option<LinkPath>,
    pub is_delegator_local: bool,
}

impl WorkerView {
    pub fn from_scenario(s: &Scenario, id: &NodeId) -> Result<Self, CostError> {
        let profile = s.profile(id).ok_or_else(|| CostError::UnknownNode(id.clone()))?.clone();
        let context = s.context(id).ok_or_else(|| CostError::UnknownNode(id.clone()))?.clone();
        let is_delegator_local = *id == s.delegator;
        let path_from_delegator = if is_delegator_local {
            None
        } else {
            Some(s.path(&s.delegator, id).cloned().ok_or_else(|| CostError::NoPath {
                from: s.delegator.clone(),
                to: id.clone(),
            })?)
        };
        let receiver = &s.request.receiver;
        let path_to_receiver = if id == receiver {
            None
        } else {
            Some(s.path(id, receiver).cloned().ok_or_else(|| CostError::NoPath {
                from: id.clone(),
                to: receiver.clone(),
            })?)
        };
        Ok(WorkerView {
            profile,
            context,
            path_from_delegator,
            path_to_receiver,
            is_delegator_local,
        })
    }

    pub fn node_id(&self) -> &NodeId {
        &self.profile.node_id
    }

    pub fn rw(&self) -> Result<f64, CostError> {
        rw_average(self.profile.disk_read, self.profile.disk_write)
    }
}

fn require_positive(what: &str, x: f64) -> Result<(), CostError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(CostError::Domain(format!("{what} must be > 0, got {x}")))
    }
}

/// Mean of disk read and write speed.
pub fn rw_average(read: f64, write: f64) -> Result<f64, CostError> {
    require_positive("read speed", read)?;
    require_positive("write speed", write)?;
    Ok((read + write) / 2.0)
}

pub fn pack_time(c: &Calibration, wp: u32) -> f64 {
    c.t_pk_mdl + c.t_pk_alg + c.t_pk_d * f64::from(wp)
}

/// Transfer of modules, program and `wp` data objects from the delegator.
/// The metadata block is not counted.
pub fn request_transmit_time(w: &WorkerView, r: &RequestSpec, wp: u32) -> f64 {
    if w.is_delegator_local {
        return 0.0;
    }
    let Some(path) = &w.path_from_delegator else {
        return 0.0;
    };
    let bytes = r.byte_mdl as f64 + r.byte_alg as f64 + r.byte_d as f64 * f64::from(wp);
    path.transfer_time(bytes)
}

pub fn local_unpack_time(c: &Calibration, wp: u32) -> f64 {
    c.t_upk_mdl + c.t_upk_alg + c.t_upk_d * f64::from(wp)
}

pub fn worker_unpack_time(c: &Calibration, wp: u32, rw_local: f64, rw_i: f64) -> Result<f64, CostError> {
    require_positive("rw_local", rw_local)?;
    require_positive("rw_i", rw_i)?;
    Ok(local_unpack_time(c, wp) * rw_local / rw_i)
}

/// The value of one resource dimension for a node. Free RAM is in gigabytes.
pub fn resource_value(kind: ResourceKind, profile: &NodeProfile, context: &DynamicContext) -> f64 {
    match kind {
        ResourceKind::CpuBenchmark => profile.cpu_benchmark,
        ResourceKind::CoresAvailable => f64::from(profile.cores_available),
        ResourceKind::RamFree => profile.ram_total.saturating_sub(context.ram_used) as f64 / 1e9,
        ResourceKind::CpuIdleFraction => 1.0 - context.cpu_usage,
    }
}

/// Weighted mean of the node's resource values.
pub fn resource_score(
    profile: &NodeProfile,
    context: &DynamicContext,
    weights: &ResourceWeights,
) -> Result<f64, CostError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for w in weights.entries() {
        if !(w.weight.is_finite() && w.weight >= 0.0) {
            return Err(CostError::Domain(format!("weight of {:?} is {}", w.kind, w.weight)));
        }
        num += resource_value(w.kind, profile, context) * w.weight;
        den += w.weight;
    }
    if den <= 0.0 {
        return Err(CostError::Domain("all resource weights are zero".into()));
    }
    Ok(num / den)
}

pub fn worker_process_time(c: &Calibration, wp: u32, score_local: f64, score_i: f64) -> Result<f64, CostError> {
    require_positive("score_local", score_local)?;
    require_positive("score_i", score_i)?;
    Ok(c.t_proc1 * f64::from(wp) * score_local / score_i)
}

pub fn output_pack_time(c: &Calibration, wp: u32, rw_local: f64, rw_i: f64) -> Result<f64, CostError> {
    require_positive("rw_local", rw_local)?;
    require_positive("rw_i", rw_i)?;
    Ok(c.t_pk_o1 * f64::from(wp) * rw_local / rw_i)
}

/// Transfer of `wp` outputs from the worker to the receiver; zero when the
/// worker is the receiver.
pub fn output_transmit_time(w: &WorkerView, c: &Calibration, wp: u32) -> f64 {
    match &w.path_to_receiver {
        None => 0.0,
        Some(path) => path.transfer_time(c.out_bytes_per_object as f64 * f64::from(wp)),
    }
}

/// Unpacking of `wp` outputs at the receiver, scaled by the receiver's disk
/// speed.
pub fn receiver_unpack_time(c: &Calibration, wp: u32, rw_local: f64, rw_receiver: f64) -> Result<f64, CostError> {
    require_positive("rw_local", rw_local)?;
    require_positive("rw_receiver", rw_receiver)?;
    Ok(c.t_upk_o1 * f64::from(wp) * rw_local / rw_receiver)
}

/// Reciprocal-time reading of the scaled terms, used by
/// [`FormulaVariant::Literal`].
fn literal_term(local_time: f64, worker_cap: f64, local_cap: f64) -> f64 {
    if local_time == 0.0 {
        0.0
    } else {
        (1.0 / local_time) * (worker_cap / local_cap)
    }
}

/// The delegator and receiver sides of the estimate, shared by every worker.
#[derive(Clone, Debug, PartialEq)]
pub struct Endpoint {
    pub profile: NodeProfile,
    pub context: DynamicContext,
}

/// Full completion-time estimate for worker `w` handling `wp` objects.
#[allow(clippy::too_many_arguments)]
pub fn get_time(
    w: &WorkerView,
    c: &Calibration,
    r: &RequestSpec,
    weights: &ResourceWeights,
    delegator: &Endpoint,
    receiver: &Endpoint,
    variant: FormulaVariant,
    wp: u32,
) -> Result<CostBreakdown, CostError> {
    let pack = pack_time(c, wp);
    let request_send = request_transmit_time(w, r, wp);
    let output_send = output_transmit_time(w, c, wp);
    let rw_local = rw_average(delegator.profile.disk_read, delegator.profile.disk_write)?;

    let (unpack, process, output_pack) = if w.is_delegator_local {
        (
            local_unpack_time(c, wp),
            c.t_proc1 * f64::from(wp),
            c.t_pk_o1 * f64::from(wp),
        )
    } else {
        let rw_i = w.rw()?;
        let score_local = resource_score(&delegator.profile, &delegator.context, weights)?;
        let score_i = resource_score(&w.profile, &w.context, weights)?;
        match variant {
            FormulaVariant::RateInverted => (
                worker_unpack_time(c, wp, rw_local, rw_i)?,
                worker_process_time(c, wp, score_local, score_i)?,
                output_pack_time(c, wp, rw_local, rw_i)?,
            ),
            FormulaVariant::Literal => {
                require_positive("score_local", score_local)?;
                require_positive("score_i", score_i)?;
                let proc_local = c.t_proc1 * f64::from(wp);
                (
                    literal_term(local_unpack_time(c, wp), rw_i, rw_local),
                    if wp == 0 {
                        0.0
                    } else {
                        f64::from(wp) * literal_term(proc_local, score_i, score_local)
                    },
                    literal_term(c.t_pk_o1 * f64::from(wp), rw_i, rw_local),
                )
            }
        }
    };

    let output_unpack = if receiver.profile.node_id == delegator.profile.node_id {
        c.t_upk_o1 * f64::from(wp)
    } else {
        let rw_r = rw_average(receiver.profile.disk_read, receiver.profile.disk_write)?;
        match variant {
            FormulaVariant::RateInverted => receiver_unpack_time(c, wp, rw_local, rw_r)?,
            FormulaVariant::Literal => literal_term(c.t_upk_o1 * f64::from(wp), rw_r, rw_local),
        }
    };

    Ok(CostBreakdown::from_parts(
        pack,
        request_send,
        unpack,
        process,
        output_pack,
        output_send,
        output_unpack,
    ))
}

/// A scenario's cost inputs bound together, ready to evaluate any of its
/// workers.
#[derive(Clone, Debug)]
pub struct CostModel {
    pub calibration: Calibration,
    pub request: RequestSpec,
    pub weights: ResourceWeights,
    pub delegator: Endpoint,
    pub receiver: Endpoint,
    pub variant: FormulaVariant,
}

impl CostModel {
    pub fn from_scenario(s: &Scenario) -> Result<Self, CostError> {
        let endpoint = |id: &NodeId| -> Result<Endpoint, CostError> {
            Ok(Endpoint {
                profile: s.profile(id).ok_or_else(|| CostError::UnknownNode(id.clone()))?.clone(),
                context: s.context(id).ok_or_else(|| CostError::UnknownNode(id.clone()))?.clone(),
            })
        };
        Ok(CostModel {
            calibration: s.calibration.clone(),
            request: s.request.clone(),
            weights: s.weights.clone(),
            delegator: endpoint(&s.delegator)?,
            receiver: endpoint(&s.request.receiver)?,
            variant: FormulaVariant::default(),
        })
    }

    pub fn with_variant(mut self, variant: FormulaVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn get_time(&self, w: &WorkerView, wp: u32) -> Result<CostBreakdown, CostError> {
        get_time(
            w,
            &self.calibration,
            &self.request,
            &self.weights,
            &self.delegator,
            &self.receiver,
            self.variant,
            wp,
        )
    }
}

/// Convenience: estimate for node `id` of scenario `s` at `wp` objects.
pub fn estimate(s: &Scenario, id: &NodeId, wp: u32) -> Result<CostBreakdown, CostError> {
    let model = CostModel::from_scenario(s)?;
    model.get_time(&WorkerView::from_scenario(s, id)?, wp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny;
    use crate::model::NodeKind;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn calib() -> Calibration {
        tiny().calibration
    }

    #[test]
    fn rw_average_table2_values() {
        assert!(rel(rw_average(547e6, 220e6).unwrap(), 383.5e6) < 1e-12);
        assert!(rel(rw_average(237e6, 121e6).unwrap(), 179e6) < 1e-12);
        assert_eq!(rw_average(7.5, 7.5).unwrap(), 7.5);
        assert!(rw_average(0.0, 1.0).is_err());
        assert!(rw_average(1.0, -1.0).is_err());
    }

    #[test]
    fn pack_time_cases() {
        let c = Calibration {
            t_pk_mdl: 0.20,
            t_pk_alg: 0.01,
            t_pk_d: 0.05,
            ..calib()
        };
        assert!(rel(pack_time(&c, 10), 0.71) < 1e-12);
        assert_eq!(pack_time(&c, 0), 0.20 + 0.01);
        let k = 7;
        assert!((pack_time(&c, 2 * k) - pack_time(&c, k) - 0.05 * f64::from(k)).abs() < 1e-12);
    }

    #[test]
    fn request_transmit_cases() {
        let s = tiny();
        let mut w = WorkerView::from_scenario(&s, &"B".into()).unwrap();
        w.path_from_delegator = Some(LinkPath::direct("A", "B", 1e-7, 0.0));
        let r = RequestSpec {
            byte_d: 3_000_000,
            ..s.request.clone()
        };
        assert!(rel(request_transmit_time(&w, &r, 2), 2.0101203) < 1e-9);
        assert!(rel(request_transmit_time(&w, &r, 0), 1e-7 * 14_101_203.0) < 1e-12);
        let local = WorkerView::from_scenario(&s, &"A".into()).unwrap();
        assert_eq!(request_transmit_time(&local, &r, 5), 0.0);
    }

    #[test]
    fn local_unpack_cases() {
        let c = Calibration {
            t_upk_mdl: 0.1,
            t_upk_alg: 0.02,
            t_upk_d: 0.03,
            ..calib()
        };
        assert!(rel(local_unpack_time(&c, 5), 0.27) < 1e-12);
        assert_eq!(local_unpack_time(&c, 0), 0.1 + 0.02);
        assert!(local_unpack_time(&c, 4) < local_unpack_time(&c, 5));
    }

    #[test]
    fn worker_unpack_cases() {
        // local unpack of exactly 1 s
        let c = Calibration {
            t_upk_mdl: 0.5,
            t_upk_alg: 0.25,
            t_upk_d: 0.25,
            ..calib()
        };
        assert_eq!(local_unpack_time(&c, 1), 1.0);
        let t = worker_unpack_time(&c, 1, 383.5e6, 179e6).unwrap();
        assert!(rel(t, 383.5 / 179.0) < 1e-12);
        assert!((t - 2.1425).abs() < 1e-4);
        assert_eq!(worker_unpack_time(&c, 3, 5e6, 5e6).unwrap(), local_unpack_time(&c, 3));
        let a = worker_unpack_time(&c, 3, 5e6, 2e6).unwrap();
        let b = worker_unpack_time(&c, 3, 5e6, 4e6).unwrap();
        assert!(rel(b, a / 2.0) < 1e-12);
        assert!(worker_unpack_time(&c, 3, 5e6, 0.0).is_err());
    }

    #[test]
    fn resource_score_cases() {
        let s = tiny();
        let p = NodeProfile {
            cpu_benchmark: 1000.0,
            cores_available: 2,
            ..s.nodes[0].clone()
        };
        let ctx = &s.contexts[0];
        let w = ResourceWeights(vec![
            crate::model::WeightEntry {
                kind: ResourceKind::CpuBenchmark,
                weight: 1.0,
            },
            crate::model::WeightEntry {
                kind: ResourceKind::CoresAvailable,
                weight: 1.0,
            },
        ]);
        assert_eq!(resource_score(&p, ctx, &w).unwrap(), 501.0);
        let one = ResourceWeights::one_hot(ResourceKind::CpuBenchmark);
        assert_eq!(resource_score(&p, ctx, &one).unwrap(), 1000.0);
        let mut scaled = ResourceWeights::uniform();
        for e in &mut scaled.0 {
            e.weight *= 3.5;
        }
        let base = resource_score(&p, ctx, &ResourceWeights::uniform()).unwrap();
        assert!(rel(resource_score(&p, ctx, &scaled).unwrap(), base) < 1e-12);
        let mut zero = ResourceWeights::uniform();
        for e in &mut zero.0 {
            e.weight = 0.0;
        }
        assert!(resource_score(&p, ctx, &zero).is_err());
    }

    #[test]
    fn resource_values_are_bigger_is_faster() {
        let s = tiny();
        let p = &s.nodes[0];
        let ctx = &s.contexts[0];
        assert_eq!(resource_value(ResourceKind::RamFree, p, ctx), 3.0);
        assert_eq!(resource_value(ResourceKind::CpuIdleFraction, p, ctx), 0.75);
    }

    #[test]
    fn process_time_cases() {
        let c = Calibration {
            t_proc1: 0.4,
            ..calib()
        };
        let t = worker_process_time(&c, 5, 501.0, 1001.5).unwrap();
        assert!((t - 1.0005).abs() < 1e-3);
        assert!(rel(t, 0.4 * 5.0 * 501.0 / 1001.5) < 1e-12);
        assert_eq!(worker_process_time(&c, 5, 777.0, 777.0).unwrap(), 0.4 * 5.0);
        assert_eq!(worker_process_time(&c, 0, 1.0, 2.0).unwrap(), 0.0);
        assert!(worker_process_time(&c, 1, 0.0, 2.0).is_err());
    }

    #[test]
    fn output_pack_cases() {
        let c = Calibration {
            t_pk_o1: 0.02,
            ..calib()
        };
        assert!(rel(output_pack_time(&c, 10, 1e8, 1e8).unwrap(), 0.2) < 1e-12);
        assert!(rel(output_pack_time(&c, 10, 1e8, 2e8).unwrap(), 0.1) < 1e-12);
        assert_eq!(output_pack_time(&c, 0, 1e8, 2e8).unwrap(), 0.0);
    }

    #[test]
    fn output_transmit_cases() {
        let s = tiny();
        let c = Calibration {
            out_bytes_per_object: 1_000_000,
            ..calib()
        };
        let mut w = WorkerView::from_scenario(&s, &"B".into()).unwrap();
        w.path_to_receiver = Some(LinkPath::direct("B", "A", 2e-7, 0.0));
        assert!(rel(output_transmit_time(&w, &c, 3), 0.6) < 1e-12);
        w.path_to_receiver = Some(LinkPath::direct("B", "A", 2e-7, 0.04));
        assert_eq!(output_transmit_time(&w, &c, 0), 0.04);
        let receiver = WorkerView::from_scenario(&s, &"A".into()).unwrap();
        assert_eq!(output_transmit_time(&receiver, &c, 3), 0.0);
    }

    #[test]
    fn receiver_unpack_cases() {
        let c = Calibration {
            t_upk_o1: 0.01,
            ..calib()
        };
        assert!(rel(receiver_unpack_time(&c, 25, 1e8, 1e8).unwrap(), 0.25) < 1e-12);
        assert!(receiver_unpack_time(&c, 25, 1e8, 1e300).unwrap() < 1e-200);
        assert_eq!(receiver_unpack_time(&c, 0, 1e8, 1e8).unwrap(), 0.0);
    }

    #[test]
    fn local_worker_collapses_to_calibration() {
        let s = tiny();
        let c = &s.calibration;
        let b = estimate(&s, &"A".into(), 1).unwrap();
        assert_eq!(b.request_send, 0.0);
        assert_eq!(b.output_send, 0.0);
        let expect = pack_time(c, 1) + local_unpack_time(c, 1) + c.t_proc1 + c.t_pk_o1 + c.t_upk_o1;
        assert!(rel(b.total, expect) < 1e-12);
    }

    #[test]
    fn twin_differs_only_in_transmit_terms() {
        let mut s = tiny();
        let mut twin = s.nodes[0].clone();
        twin.node_id = "T2".into();
        twin.kind = NodeKind::Mist;
        let mut ctx = s.contexts[0].clone();
        ctx.node_id = "T2".into();
        s.nodes.push(twin);
        s.contexts.push(ctx);
        s.links.push(LinkPath::direct("A", "T2", 1e-9, 0.0));
        let local = estimate(&s, &"A".into(), 4).unwrap();
        let remote = estimate(&s, &"T2".into(), 4).unwrap();
        assert_eq!(local.pack, remote.pack);
        assert!(rel(remote.unpack, local.unpack) < 1e-12);
        assert!(rel(remote.process, local.process) < 1e-12);
        assert!(rel(remote.output_pack, local.output_pack) < 1e-12);
        assert_eq!(local.output_unpack, remote.output_unpack);
        assert!(remote.request_send > 0.0 && remote.output_send > 0.0);
    }

    #[test]
    fn literal_variant_is_a_rate() {
        let s = tiny();
        let m = CostModel::from_scenario(&s)
            .unwrap()
            .with_variant(FormulaVariant::Literal);
        let w = WorkerView::from_scenario(&s, &"B".into()).unwrap();
        let b = m.get_time(&w, 4).unwrap();
        // same disk speeds, so unpack is exactly the reciprocal of the local time
        assert!(rel(b.unpack, 1.0 / local_unpack_time(&s.calibration, 4)) < 1e-12);
        assert_eq!(m.get_time(&w, 0).unwrap().process, 0.0);
    }

    #[test]
    fn purity() {
        let s = tiny();
        let a = estimate(&s, &"C".into(), 9).unwrap();
        let b = estimate(&s, &"C".into(), 9).unwrap();
        assert_eq!(a.parts().map(f64::to_bits), b.parts().map(f64::to_bits));
    }
}
