use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::GeoPoint;
use crate::error::{Error, Result};

/// Dense index of a node inside a [`RoadGraph`].
pub type NodeIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub length_m: f64,
    pub oneway: bool,
}

/// Weighted road network. Immutable once built.
///
/// Text format, one record per line:
///
/// ```text
/// # comment
/// N <id> <lon> <lat>
/// E <u> <v> <length_m> <oneway:0|1>
/// ```
///
/// Node lines may appear anywhere in the file; edges are resolved after the
/// whole file is read. Repeated edges between the same endpoints (same
/// direction for one-way edges, either direction otherwise) collapse to the
/// shortest one.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    ids: Vec<String>,
    points: Vec<GeoPoint>,
    index: HashMap<String, NodeIdx>,
    edges: Vec<Edge>,
}

#[derive(Hash, PartialEq, Eq)]
struct EdgeKey(NodeIdx, NodeIdx, bool);

impl EdgeKey {
    fn of(from: NodeIdx, to: NodeIdx, oneway: bool) -> Self {
        if oneway {
            EdgeKey(from, to, true)
        } else {
            EdgeKey(from.min(to), from.max(to), false)
        }
    }
}

impl RoadGraph {
    /// Builds a graph from explicit nodes and `(u, v, length, oneway)` edges.
    pub fn new<S: Into<String>>(
        nodes: impl IntoIterator<Item = (S, GeoPoint)>,
        edges: impl IntoIterator<Item = (String, String, f64, bool)>,
    ) -> Result<Self> {
        let mut builder = Builder::default();
        for (i, (id, p)) in nodes.into_iter().enumerate() {
            builder.node(i + 1, id.into(), p)?;
        }
        let raw: Vec<_> = edges
            .into_iter()
            .enumerate()
            .map(|(i, (u, v, len, ow))| (i + 1, u, v, len, ow))
            .collect();
        builder.finish(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut builder = Builder::default();
        let mut raw_edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let parse_err = |message: String| Error::Parse { line, message };
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("invalid {what} `{s}`")))
            };
            match fields.as_slice() {
                ["N", id, lon, lat] => {
                    let p = GeoPoint::new(num(lon, "longitude")?, num(lat, "latitude")?)
                        .map_err(|e| parse_err(e.to_string()))?;
                    builder.node(line, (*id).to_string(), p)?;
                }
                ["E", u, v, len, oneway] => {
                    let length = num(len, "length")?;
                    let oneway = match *oneway {
                        "0" => false,
                        "1" => true,
                        other => return Err(parse_err(format!("oneway flag must be 0 or 1, got `{other}`"))),
                    };
                    raw_edges.push((line, (*u).to_string(), (*v).to_string(), length, oneway));
                }
                _ => {
                    return Err(parse_err(format!(
                        "expected `N <id> <lon> <lat>` or `E <u> <v> <length_m> <oneway>`, got `{content}`"
                    )))
                }
            }
        }
        builder.finish(raw_edges)
    }

    /// Canonical text form; parsing it yields an identical graph.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, p) in self.ids.iter().zip(&self.points) {
            let _ = writeln!(out, "N {id} {} {}", p.lon, p.lat);
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "E {} {} {} {}",
                self.ids[e.from],
                self.ids[e.to],
                e.length_m,
                u8::from(e.oneway)
            );
        }
        out
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, idx: NodeIdx) -> &str {
        &self.ids[idx]
    }

    pub fn point(&self, idx: NodeIdx) -> GeoPoint {
        self.points[idx]
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn index_of(&self, id: &str) -> Result<NodeIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Nearest node by haversine distance; ties go to the lexicographically
    /// smallest node id.
    pub fn snap(&self, p: &GeoPoint) -> Result<NodeIdx> {
        let mut best: Option<(f64, NodeIdx)> = None;
        for (idx, q) in self.points.iter().enumerate() {
            let d = p.haversine_m(q);
            best = match best {
                Some((bd, bi)) if d > bd || (d == bd && self.ids[bi] <= self.ids[idx]) => {
                    Some((bd, bi))
                }
                _ => Some((d, idx)),
            };
        }
        best.map(|(_, idx)| idx).ok_or(Error::EmptyGraph)
    }
}

#[derive(Default)]
struct Builder {
    ids: Vec<String>,
    points: Vec<GeoPoint>,
    index: HashMap<String, NodeIdx>,
}

impl Builder {
    fn node(&mut self, line: usize, id: String, p: GeoPoint) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate node id `{id}`"),
            });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.points.push(p);
        Ok(())
    }

    fn finish(self, raw_edges: Vec<(usize, String, String, f64, bool)>) -> Result<RoadGraph> {
        let mut edges: Vec<Edge> = Vec::with_capacity(raw_edges.len());
        let mut seen: HashMap<EdgeKey, usize> = HashMap::new();
        for (line, u, v, length, oneway) in raw_edges {
            let from = *self.index.get(&u).ok_or(Error::DanglingEndpoint {
                line,
                node: u.clone(),
            })?;
            let to = *self.index.get(&v).ok_or(Error::DanglingEndpoint {
                line,
                node: v.clone(),
            })?;
            if !(length > 0.0) || !length.is_finite() {
                return Err(Error::NonPositiveLength { line, length });
            }
            match seen.get(&EdgeKey::of(from, to, oneway)) {
                Some(&slot) => {
                    if length < edges[slot].length_m {
                        edges[slot].length_m = length;
                    }
                }
                None => {
                    seen.insert(EdgeKey::of(from, to, oneway), edges.len());
                    edges.push(Edge {
                        from,
                        to,
                        length_m: length,
                        oneway,
                    });
                }
            }
        }
        Ok(RoadGraph {
            ids: self.ids,
            points: self.points,
            index: self.index,
            edges,
        })
    }
}
