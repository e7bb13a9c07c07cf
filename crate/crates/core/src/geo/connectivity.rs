use petgraph::unionfind::UnionFind;
use serde::Serialize;

use super::{Facility, NodeIdx, RoadGraph};

/// Connected components of the undirected road network and the facilities
/// stranded in components nobody else uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub component_count: usize,
    /// Sizes in order of each component's lowest node index.
    pub component_sizes: Vec<usize>,
    pub orphaned_facility_ids: Vec<String>,
    /// Component number for every node, aligned with `component_sizes`.
    #[serde(skip)]
    pub component_of: Vec<usize>,
}

/// Components are computed on the undirected view of the graph. A facility
/// is orphaned when its component holds no incident node and no other
/// facility.
pub fn audit_connectivity(
    graph: &RoadGraph,
    facilities: &[Facility],
    incident_nodes: &[NodeIdx],
) -> ConnectivityReport {
    let n = graph.node_count();
    let mut uf = UnionFind::<usize>::new(n);
    for e in graph.edges() {
        uf.union(e.from, e.to);
    }
    let mut label = vec![usize::MAX; n];
    let mut component_of = vec![0; n];
    let mut sizes = Vec::new();
    for v in 0..n {
        let root = uf.find(v);
        if label[root] == usize::MAX {
            label[root] = sizes.len();
            sizes.push(0);
        }
        component_of[v] = label[root];
        sizes[label[root]] += 1;
    }

    let mut facility_count = vec![0usize; sizes.len()];
    for f in facilities {
        facility_count[component_of[f.node]] += 1;
    }
    let mut has_incident = vec![false; sizes.len()];
    for &v in incident_nodes {
        has_incident[component_of[v]] = true;
    }
    let orphaned_facility_ids = facilities
        .iter()
        .filter(|f| {
            let c = component_of[f.node];
            facility_count[c] == 1 && !has_incident[c]
        })
        .map(|f| f.id.clone())
        .collect();

    ConnectivityReport {
        component_count: sizes.len(),
        component_sizes: sizes,
        orphaned_facility_ids,
        component_of,
    }
}
