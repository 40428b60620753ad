//! Fixtures and seeded scenario generators shared by the integration tests.
#![allow(dead_code)]

use epiot::model::{validate_scenario, WeightEntry};
use epiot::scenario::load_scenario;
use epiot::{
    Calibration, DynamicContext, LinkPath, NodeId, NodeKind, NodeProfile, RequestSpec, ResourceKind, ResourceWeights,
    Scenario,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn table2() -> Scenario {
    load_scenario(fixture_path("table2.scenario")).expect("bundled fixture loads")
}

pub fn table2_fast_cloud() -> Scenario {
    load_scenario(fixture_path("table2_fast_cloud.scenario")).expect("bundled fixture loads")
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

const IDS: [&str; 5] = ["A", "B", "C", "D", "E"];
const KINDS: [NodeKind; 4] = [NodeKind::EdgeHost, NodeKind::Mist, NodeKind::Fog, NodeKind::Cloud];

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn random_calibration(rng: &mut ChaCha8Rng) -> Calibration {
    Calibration {
        t_upk_mdl: log_uniform(rng, 1e-3, 2.0),
        t_upk_alg: log_uniform(rng, 1e-4, 0.05),
        t_pk_mdl: log_uniform(rng, 1e-3, 2.0),
        t_pk_alg: log_uniform(rng, 1e-4, 0.05),
        t_pk_d: log_uniform(rng, 1e-3, 0.2),
        t_upk_d: log_uniform(rng, 1e-3, 0.2),
        t_pk_o1: log_uniform(rng, 1e-4, 0.05),
        t_proc1: log_uniform(rng, 1e-2, 5.0),
        t_upk_o1: log_uniform(rng, 1e-4, 0.05),
        out_bytes_per_object: rng.gen_range(100..200_000),
    }
}

fn random_weights(rng: &mut ChaCha8Rng) -> ResourceWeights {
    if rng.gen_bool(0.5) {
        return ResourceWeights::uniform();
    }
    ResourceWeights(
        [
            ResourceKind::CpuBenchmark,
            ResourceKind::CoresAvailable,
            ResourceKind::RamFree,
            ResourceKind::CpuIdleFraction,
        ]
        .into_iter()
        .map(|kind| WeightEntry {
            kind,
            weight: rng.gen_range(0.1..3.0),
        })
        .collect(),
    )
}

/// A valid scenario with 1..=`max_nodes` heterogeneous nodes on a full mesh of
/// direct links and 1..=`max_objects` data objects.
pub fn random_scenario(rng: &mut ChaCha8Rng, max_nodes: usize, max_objects: u32) -> Scenario {
    let n = rng.gen_range(1..=max_nodes);
    let ids = &IDS[..n];
    let mut nodes = Vec::new();
    let mut contexts = Vec::new();
    for id in ids {
        let ram_total = rng.gen_range(1_000_000_000u64..16_000_000_000);
        nodes.push(NodeProfile {
            node_id: NodeId::new(*id),
            kind: KINDS[rng.gen_range(0..KINDS.len())],
            cpu_benchmark: rng.gen_range(500.0..5000.0),
            cores_available: rng.gen_range(1..=8),
            ram_total,
            disk_read: log_uniform(rng, 20e6, 600e6),
            disk_write: log_uniform(rng, 20e6, 600e6),
        });
        contexts.push(DynamicContext {
            node_id: NodeId::new(*id),
            cpu_usage: rng.gen_range(0.0..0.95),
            ram_used: (ram_total as f64 * rng.gen_range(0.0..0.9)) as u64,
            sampled_at: 0.0,
        });
    }
    let mut links = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            links.push(LinkPath::direct(
                *a,
                *b,
                log_uniform(rng, 1e-9, 2e-6),
                rng.gen_range(0.0..0.05),
            ));
        }
    }
    let delegator = NodeId::new(ids[rng.gen_range(0..n)]);
    let receiver = NodeId::new(ids[rng.gen_range(0..n)]);
    let s = Scenario {
        delegator: delegator.clone(),
        nodes,
        contexts,
        links,
        request: RequestSpec {
            byte_alg: rng.gen_range(100..20_000),
            byte_mdl: rng.gen_range(1_000..20_000_000),
            byte_desc: rng.gen_range(1..1_000),
            byte_d: rng.gen_range(1_000..5_000_000),
            num_objects: rng.gen_range(1..=max_objects),
            receiver,
            requester: delegator,
        },
        calibration: random_calibration(rng),
        weights: random_weights(rng),
    };
    assert!(
        validate_scenario(&s).is_empty(),
        "generator produced {:?}",
        validate_scenario(&s)
    );
    s
}

/// A delegator `H` plus `k` identical workers `W0..` on identical links.
/// Returns the scenario and the worker ids.
pub fn homogeneous_scenario(rng: &mut ChaCha8Rng, k: usize, objects: u32) -> (Scenario, Vec<NodeId>) {
    let mut s = random_scenario(rng, 1, 1);
    let base = s.nodes[0].clone();
    let ctx = s.contexts[0].clone();
    s.nodes[0].node_id = NodeId::new("H");
    s.contexts[0].node_id = NodeId::new("H");
    s.delegator = NodeId::new("H");
    s.request.receiver = NodeId::new("H");
    s.request.requester = NodeId::new("H");
    s.request.num_objects = objects;
    let pbt = log_uniform(rng, 1e-9, 2e-6);
    let lat = rng.gen_range(0.0..0.05);
    let mut workers = Vec::new();
    for i in 0..k {
        let id = NodeId::new(format!("W{i}"));
        s.nodes.push(NodeProfile {
            node_id: id.clone(),
            ..base.clone()
        });
        s.contexts.push(DynamicContext {
            node_id: id.clone(),
            ..ctx.clone()
        });
        s.links.push(LinkPath::direct("H", id.as_str(), pbt, lat));
        workers.push(id);
    }
    assert!(validate_scenario(&s).is_empty());
    (s, workers)
}
