//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use dispatch_core::agent::{backward, loss, LossTargets, LossWeights, PolicyParams};
use dispatch_core::env::{onehot, DispatchState, FILLER_ROW};
use dispatch_core::geo::{Category, Facility, GeoPoint, NodeIdx, RoadGraph};
use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Random d=4 policy, 3-6 facility state and loss targets.
pub fn random_gradient_instance(
    rng: &mut ChaCha8Rng,
) -> (PolicyParams, DispatchState, LossTargets) {
    let d = 4;
    let mut params = PolicyParams::zeros(d);
    let flat: Vec<f64> = (0..params.n_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    params.set_flat(&flat);
    let n = rng.random_range(3..=6);
    let mut features = Vec::new();
    let mut mask = Vec::new();
    for j in 0..n {
        if j > 0 && rng.random_bool(0.25) {
            features.push(FILLER_ROW);
            mask.push(false);
        } else {
            let tau = rng.random_range(0.0..1.0);
            let delta = if j == 0 {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
            features.push([tau, 1.0, delta]);
            mask.push(true);
        }
    }
    let category = Category::ALL[rng.random_range(0..4)];
    let feasible: Vec<usize> = (0..n).filter(|&j| mask[j]).collect();
    let action = feasible[rng.random_range(0..feasible.len())];
    let targets = LossTargets {
        action,
        reward: rng.random_range(-1.0..1.0),
        advantage: rng.random_range(-1.0..1.0),
        weights: LossWeights {
            actor: 1.0,
            critic: 1.0,
            entropy: 0.01,
        },
    };
    let state = DispatchState {
        category,
        category_onehot: onehot(category),
        features,
        mask,
    };
    (params, state, targets)
}

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// numeric by central differences on the total loss.
pub fn max_relative_gradient_error(
    params: &PolicyParams,
    state: &DispatchState,
    targets: &LossTargets,
) -> f64 {
    let (_, grad) = backward(params, state, targets).unwrap();
    let analytic = grad.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + FD_STEP;
        probe.set_flat(&shifted);
        let up = loss(&probe, state, targets).unwrap().total;
        shifted[i] = base[i] - FD_STEP;
        probe.set_flat(&shifted);
        let down = loss(&probe, state, targets).unwrap().total;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// A random road network with its raw edge list.
pub struct RandomNetwork {
    pub graph: RoadGraph,
    /// `(from, to, length_m, oneway)` by node index, duplicates included.
    pub edges: Vec<(usize, usize, f64, bool)>,
    pub facilities: Vec<Facility>,
    pub incident_nodes: Vec<NodeIdx>,
}

pub fn random_network(rng: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize) -> RandomNetwork {
    let n = rng.random_range(2..=max_nodes);
    let m = rng.random_range(0..=max_edges);
    let nodes: Vec<(String, GeoPoint)> = (0..n)
        .map(|i| {
            (
                format!("v{i}"),
                GeoPoint {
                    lon: rng.random_range(6.0..7.0),
                    lat: rng.random_range(4.0..5.0),
                },
            )
        })
        .collect();
    let mut edges = Vec::new();
    for _ in 0..m {
        let u = rng.random_range(0..n);
        let mut v = rng.random_range(0..n);
        while v == u {
            v = rng.random_range(0..n);
        }
        edges.push((u, v, rng.random_range(10.0..5000.0), rng.random_bool(0.3)));
    }
    let named: Vec<_> = edges
        .iter()
        .map(|&(u, v, l, o)| (format!("v{u}"), format!("v{v}"), l, o))
        .collect();
    let graph = RoadGraph::new(nodes.clone(), named).unwrap();
    let facilities = (0..rng.random_range(1..=6))
        .map(|j| {
            let node = graph
                .index_of(&format!("v{}", rng.random_range(0..n)))
                .unwrap();
            Facility {
                id: format!("f{j}"),
                category: Category::ALL[j % 4],
                location: graph.point(node),
                node,
            }
        })
        .collect();
    let incident_nodes = (0..rng.random_range(1..=n))
        .map(|_| {
            graph
                .index_of(&format!("v{}", rng.random_range(0..n)))
                .unwrap()
        })
        .collect();
    RandomNetwork {
        graph,
        edges,
        facilities,
        incident_nodes,
    }
}

/// Single-pair shortest time in minutes from `from` to `to`, by petgraph
/// Dijkstra over the reversed arcs starting at `to`.
pub fn oracle_time(
    network: &RandomNetwork,
    speed_kmh: f64,
    from: NodeIdx,
    to: NodeIdx,
) -> Option<f64> {
    let id = |i: NodeIdx| {
        network
            .graph
            .node_id(i)
            .trim_start_matches('v')
            .parse::<usize>()
            .unwrap()
    };
    let n = network.graph.node_count();
    let mut g: DiGraph<(), f64> = DiGraph::new();
    let idx: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    let per_minute = speed_kmh * 1000.0 / 60.0;
    for &(u, v, len, oneway) in &network.edges {
        let t = len / per_minute;
        g.add_edge(idx[v], idx[u], t);
        if !oneway {
            g.add_edge(idx[u], idx[v], t);
        }
    }
    let (src, dst) = (idx[id(to)], idx[id(from)]);
    dijkstra(&g, src, Some(dst), |e| *e.weight())
        .get(&dst)
        .copied()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
