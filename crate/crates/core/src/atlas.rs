//! The travel-time atlas: shortest-path travel times from every incident node
//! to every facility, precomputed once and looked up in constant time.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Category, Facility, NodeIdx, RoadGraph};
use crate::par;

pub type Minutes = f64;

pub const DEFAULT_SPEED_KMH: f64 = 40.0;

/// Serialized form of an unreachable entry.
pub const UNREACHABLE_TOKEN: &str = "unreachable";

/// Minutes needed to cover `length_m` meters at a constant `speed_kmh`.
pub fn edge_travel_time(length_m: f64, speed_kmh: f64) -> Result<Minutes> {
    if !(length_m > 0.0) {
        return Err(Error::NonPositive {
            what: "edge length",
            value: length_m,
        });
    }
    if !(speed_kmh > 0.0) {
        return Err(Error::NonPositive {
            what: "speed",
            value: speed_kmh,
        });
    }
    Ok(length_m / (speed_kmh * 1000.0 / 60.0))
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    time: f64,
    node: NodeIdx,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, then node for a total order
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reverse adjacency of a road graph weighted in minutes. Running Dijkstra
/// from a target over reversed arcs gives the time from every node *to* it.
#[derive(Debug, Clone)]
pub struct ReverseNetwork {
    offsets: Vec<usize>,
    arcs: Vec<(NodeIdx, f64)>,
    speed_kmh: f64,
}

impl ReverseNetwork {
    pub fn new(graph: &RoadGraph, speed_kmh: f64) -> Result<Self> {
        let n = graph.node_count();
        // (head, tail, minutes): tail -> head in the forward graph
        let mut incoming: Vec<(NodeIdx, NodeIdx, f64)> = Vec::with_capacity(graph.edge_count() * 2);
        for e in graph.edges() {
            let t = edge_travel_time(e.length_m, speed_kmh)?;
            incoming.push((e.to, e.from, t));
            if !e.oneway {
                incoming.push((e.from, e.to, t));
            }
        }
        incoming.sort_by_key(|&(head, tail, _)| (head, tail));
        let mut offsets = vec![0usize; n + 1];
        for &(head, _, _) in &incoming {
            offsets[head + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let arcs = incoming.into_iter().map(|(_, tail, t)| (tail, t)).collect();
        Ok(Self {
            offsets,
            arcs,
            speed_kmh,
        })
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed_kmh
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Shortest travel time from every node to `target`; `None` where no
    /// directed path exists.
    pub fn times_to(&self, target: NodeIdx) -> Vec<Option<Minutes>> {
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[target] = 0.0;
        heap.push(HeapEntry {
            time: 0.0,
            node: target,
        });
        while let Some(HeapEntry { time, node }) = heap.pop() {
            if time > dist[node] {
                continue;
            }
            for &(tail, w) in &self.arcs[self.offsets[node]..self.offsets[node + 1]] {
                let candidate = time + w;
                if candidate < dist[tail] {
                    dist[tail] = candidate;
                    heap.push(HeapEntry {
                        time: candidate,
                        node: tail,
                    });
                }
            }
        }
        dist.into_iter()
            .map(|d| d.is_finite().then_some(d))
            .collect()
    }
}

/// The best feasible facility for one incident row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestChoice {
    pub facility_index: usize,
    pub t_star: Minutes,
}

/// Incident-node × facility matrix of travel times in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeAtlas {
    incident_nodes: Vec<NodeIdx>,
    row_of: HashMap<NodeIdx, usize>,
    facilities: Vec<Facility>,
    times: Vec<Option<Minutes>>,
    speed_kmh: f64,
}

/// Builds the atlas with one reverse Dijkstra per facility. Duplicate
/// incident nodes are collapsed, keeping first-occurrence order.
pub fn build_atlas(
    graph: &RoadGraph,
    incident_nodes: &[NodeIdx],
    facilities: &[Facility],
    speed_kmh: f64,
) -> Result<TravelTimeAtlas> {
    let n = graph.node_count();
    if let Some(bad) = incident_nodes
        .iter()
        .chain(facilities.iter().map(|f| &f.node))
        .find(|&&v| v >= n)
    {
        return Err(Error::UnknownNode(bad.to_string()));
    }
    let network = ReverseNetwork::new(graph, speed_kmh)?;
    build_atlas_with(&network, incident_nodes, facilities)
}

pub fn build_atlas_with(
    network: &ReverseNetwork,
    incident_nodes: &[NodeIdx],
    facilities: &[Facility],
) -> Result<TravelTimeAtlas> {
    let n = network.node_count();
    let mut rows = Vec::new();
    let mut row_of = HashMap::new();
    for &v in incident_nodes {
        if v >= n {
            return Err(Error::UnknownNode(v.to_string()));
        }
        row_of.entry(v).or_insert_with(|| {
            rows.push(v);
            rows.len() - 1
        });
    }

    let columns: Vec<Vec<Option<Minutes>>> = par::map(facilities, |f| {
        let to_facility = network.times_to(f.node);
        rows.iter().map(|&v| to_facility[v]).collect()
    });

    let m = facilities.len();
    let mut times = vec![None; rows.len() * m];
    for (j, col) in columns.into_iter().enumerate() {
        for (i, t) in col.into_iter().enumerate() {
            times[i * m + j] = t;
        }
    }
    Ok(TravelTimeAtlas {
        incident_nodes: rows,
        row_of,
        facilities: facilities.to_vec(),
        times,
        speed_kmh: network.speed_kmh(),
    })
}

impl TravelTimeAtlas {
    pub fn incident_nodes(&self) -> &[NodeIdx] {
        &self.incident_nodes
    }

    pub fn facilities(&self) -> &[Facility] {
        &self.facilities
    }

    pub fn n_rows(&self) -> usize {
        self.incident_nodes.len()
    }

    pub fn n_facilities(&self) -> usize {
        self.facilities.len()
    }

    pub fn speed_kmh(&self) -> f64 {
        self.speed_kmh
    }

    pub fn row_index(&self, node: NodeIdx) -> Option<usize> {
        self.row_of.get(&node).copied()
    }

    pub fn row(&self, i: usize) -> &[Option<Minutes>] {
        let m = self.facilities.len();
        &self.times[i * m..(i + 1) * m]
    }

    pub fn time(&self, i: usize, j: usize) -> Option<Minutes> {
        self.times[i * self.facilities.len() + j]
    }

    /// Fastest reachable facility of `category` for row `i`, ties to the
    /// lowest facility index. `None` marks an unsolvable incident.
    pub fn best_feasible(&self, i: usize, category: Category) -> Option<BestChoice> {
        best_in_row(self.row(i), &self.facilities, category)
    }

    /// Writes the CSV form: header `incident_node,<facility ids>`, then one
    /// row per incident node with decimal minutes or `unreachable`.
    pub fn write_csv<W: Write>(&self, graph: &RoadGraph, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["incident_node".to_string()];
        header.extend(self.facilities.iter().map(|f| f.id.clone()));
        w.write_record(&header)?;
        for (i, &v) in self.incident_nodes.iter().enumerate() {
            let mut record = vec![graph.node_id(v).to_string()];
            record.extend(self.row(i).iter().map(|t| match t {
                Some(t) => t.to_string(),
                None => UNREACHABLE_TOKEN.to_string(),
            }));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<atlas csv>", e))?;
        Ok(())
    }

    /// Reads the CSV form back. Facilities are matched to header columns by
    /// id and must appear in the same order.
    pub fn read_csv<R: Read>(
        input: R,
        graph: &RoadGraph,
        facilities: &[Facility],
        speed_kmh: f64,
    ) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = r.headers()?.clone();
        let ids: Vec<&str> = header.iter().skip(1).collect();
        let expected: Vec<&str> = facilities.iter().map(|f| f.id.as_str()).collect();
        if header.get(0) != Some("incident_node") || ids != expected {
            return Err(Error::Parse {
                line: 1,
                message: "atlas header does not match the facility list".into(),
            });
        }
        let mut incident_nodes = Vec::new();
        let mut row_of = HashMap::new();
        let mut times = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let node = graph.index_of(&rec[0])?;
            if row_of.insert(node, incident_nodes.len()).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate incident node `{}`", &rec[0]),
                });
            }
            incident_nodes.push(node);
            for field in rec.iter().skip(1) {
                times.push(if field == UNREACHABLE_TOKEN {
                    None
                } else {
                    let t: f64 = field.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("invalid travel time `{field}`"),
                    })?;
                    if !(t >= 0.0) || !t.is_finite() {
                        return Err(Error::Parse {
                            line,
                            message: format!("invalid travel time `{field}`"),
                        });
                    }
                    Some(t)
                });
            }
        }
        Ok(Self {
            incident_nodes,
            row_of,
            facilities: facilities.to_vec(),
            times,
            speed_kmh,
        })
    }

    pub fn metadata(&self, graph: &RoadGraph) -> AtlasMetadata {
        AtlasMetadata {
            speed_kmh: self.speed_kmh,
            n_incident_nodes: self.n_rows(),
            n_facilities: self.n_facilities(),
            graph_sha256: graph.content_hash(),
            unreachable: UNREACHABLE_TOKEN.to_string(),
        }
    }
}

pub(crate) fn best_in_row(
    row: &[Option<Minutes>],
    facilities: &[Facility],
    category: Category,
) -> Option<BestChoice> {
    let mut best: Option<BestChoice> = None;
    for (j, (t, f)) in row.iter().zip(facilities).enumerate() {
        let Some(t) = *t else { continue };
        if f.category != category {
            continue;
        }
        if best.is_none_or(|b| t < b.t_star) {
            best = Some(BestChoice {
                facility_index: j,
                t_star: t,
            });
        }
    }
    best
}

/// Sidecar written next to the atlas CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasMetadata {
    pub speed_kmh: f64,
    pub n_incident_nodes: usize,
    pub n_facilities: usize,
    pub graph_sha256: String,
    pub unreachable: String,
}
