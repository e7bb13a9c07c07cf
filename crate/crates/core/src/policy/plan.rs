//! Greedy placement of new facilities for flagged regions.
//!
//! Each flagged (region, category) repeatedly gains the candidate node that
//! leaves the fewest probes unsolvable and then the lowest mean best time,
//! until the region grades Green or no candidate improves it. This is a
//! greedy approximation; minimal placement is a set-cover problem. Sites
//! accumulate: a site placed for one region counts as existing for every
//! later one, and every `time_after` reflects the whole plan.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::assess::{
    grade_times, probe_best_times, summarize, Grade, GradeThresholds, RegionProbes, ServiceGrade,
};
use crate::atlas::{Minutes, ReverseNetwork, TravelTimeAtlas};
use crate::error::{Error, Result};
use crate::geo::{
    point_in_region, Category, Facility, GeoPoint, NodeIdx, RegionBoundary, RoadGraph,
};
use crate::par;

pub const DEFAULT_CANDIDATE_CAP: usize = 500;

/// Graph nodes inside `region`, in index order. Above `cap` a seeded
/// subsample is kept.
pub fn region_candidates(
    graph: &RoadGraph,
    region: &RegionBoundary,
    cap: usize,
    seed: u64,
) -> Vec<NodeIdx> {
    let inside: Vec<NodeIdx> = (0..graph.node_count())
        .filter(|&v| point_in_region(&graph.point(v), region))
        .collect();
    if inside.len() <= cap {
        return inside;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<NodeIdx> = sample(&mut rng, inside.len(), cap)
        .into_iter()
        .map(|i| inside[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    /// Green before planning; nothing proposed.
    AlreadyEffective,
    /// Flagged and brought to Green.
    Planned,
    /// Flagged and no sequence of candidates reaches Green.
    Infeasible,
    Ungradable,
}

impl PlanStatus {
    pub fn name(self) -> &'static str {
        match self {
            PlanStatus::AlreadyEffective => "already_effective",
            PlanStatus::Planned => "planned",
            PlanStatus::Infeasible => "infeasible",
            PlanStatus::Ungradable => "ungradable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposedSite {
    pub node: NodeIdx,
    pub node_id: String,
    pub location: GeoPoint,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionPlan {
    pub region_id: String,
    pub category: Category,
    pub grade_before: Grade,
    pub time_before: Option<Minutes>,
    pub coverage_before: f64,
    pub sites: Vec<ProposedSite>,
    pub time_after: Option<Minutes>,
    pub coverage_after: f64,
    pub grade_after: Grade,
    pub status: PlanStatus,
}

impl RegionPlan {
    pub fn n_new(&self) -> usize {
        self.sites.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionPlan {
    pub entries: Vec<RegionPlan>,
}

impl InterventionPlan {
    pub fn n_new(&self) -> usize {
        self.entries.iter().map(RegionPlan::n_new).sum()
    }

    /// True when no flagged entry ended Infeasible.
    pub fn is_accepted(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.status != PlanStatus::Infeasible)
    }

    /// The proposed sites as facilities, ready to append to the current set.
    pub fn new_facilities(&self) -> Vec<Facility> {
        self.entries
            .iter()
            .flat_map(|e| {
                e.sites.iter().enumerate().map(move |(k, s)| Facility {
                    id: format!("new-{}-{}-{}", e.region_id, e.category.name(), k + 1),
                    category: s.category,
                    location: s.location,
                    node: s.node,
                })
            })
            .collect()
    }
}

/// Probe ordering key: fewer unsolvable probes first, then lower mean.
fn objective(times: &[Option<Minutes>]) -> (usize, f64) {
    let unsolved = times.iter().filter(|t| t.is_none()).count();
    (unsolved, summarize(times).0.unwrap_or(f64::INFINITY))
}

fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn merge(base: &[Option<Minutes>], column: &[Option<Minutes>]) -> Vec<Option<Minutes>> {
    base.iter()
        .zip(column)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(a.min(*b)),
            (a, b) => a.or(*b),
        })
        .collect()
}

/// Times from each probe node to `site`.
fn column(network: &ReverseNetwork, site: NodeIdx, nodes: &[NodeIdx]) -> Vec<Option<Minutes>> {
    let to_site = network.times_to(site);
    nodes.iter().map(|&v| to_site[v]).collect()
}

/// Plans every region × category in `grades`. `candidates[i]` lists the
/// candidate nodes for `regions[i]`; `atlas` must hold every probe node.
pub fn plan_interventions(
    graph: &RoadGraph,
    network: &ReverseNetwork,
    atlas: &TravelTimeAtlas,
    regions: &[RegionProbes],
    candidates: &[Vec<NodeIdx>],
    grades: &[ServiceGrade],
    thresholds: &GradeThresholds,
) -> Result<InterventionPlan> {
    thresholds.validate()?;
    if candidates.len() != regions.len() {
        return Err(Error::Shape(format!(
            "{} candidate lists for {} regions",
            candidates.len(),
            regions.len()
        )));
    }
    let region_index: HashMap<&str, usize> = regions
        .iter()
        .enumerate()
        .map(|(i, r)| (r.region.region_id.as_str(), i))
        .collect();
    let mut placed: Vec<Vec<NodeIdx>> = vec![Vec::new(); Category::COUNT];
    let mut entries = Vec::with_capacity(grades.len());

    for g in grades {
        let &r = region_index
            .get(g.region_id.as_str())
            .ok_or_else(|| Error::Config(format!("grade for unknown region `{}`", g.region_id)))?;
        let mut entry = RegionPlan {
            region_id: g.region_id.clone(),
            category: g.category,
            grade_before: g.grade,
            time_before: g.mean_best_time,
            coverage_before: g.coverage,
            sites: Vec::new(),
            time_after: g.mean_best_time,
            coverage_after: g.coverage,
            grade_after: g.grade,
            status: match g.grade {
                Grade::Green => PlanStatus::AlreadyEffective,
                Grade::Ungradable => PlanStatus::Ungradable,
                _ => PlanStatus::Planned,
            },
        };
        if !g.grade.is_flagged() {
            entries.push(entry);
            continue;
        }
        if candidates[r].is_empty() {
            return Err(Error::Config(format!(
                "no candidate sites for region `{}`",
                g.region_id
            )));
        }

        let nodes: Vec<NodeIdx> = regions[r]
            .probes
            .iter()
            .filter(|p| p.category == g.category)
            .map(|p| p.node)
            .collect();
        let mut best = probe_best_times(&regions[r].probes, g.category, atlas)?;
        for &site in &placed[g.category.index()] {
            best = merge(&best, &column(network, site, &nodes));
        }
        let columns = par::map(&candidates[r], |&v| column(network, v, &nodes));
        let mut used = vec![false; columns.len()];

        loop {
            let (mean, coverage) = summarize(&best);
            if thresholds.grade(mean, coverage) == Grade::Green {
                break;
            }
            let current = objective(&best);
            let scored = par::map_range(columns.len(), |k| {
                (!used[k]).then(|| objective(&merge(&best, &columns[k])))
            });
            let mut pick: Option<(usize, (usize, f64))> = None;
            for (k, s) in scored.into_iter().enumerate() {
                if let Some(s) = s {
                    if pick.is_none_or(|(_, p)| better(s, p)) {
                        pick = Some((k, s));
                    }
                }
            }
            let Some((k, score)) = pick.filter(|&(_, s)| better(s, current)) else {
                entry.status = PlanStatus::Infeasible;
                break;
            };
            used[k] = true;
            best = merge(&best, &columns[k]);
            let node = candidates[r][k];
            placed[g.category.index()].push(node);
            entry.sites.push(ProposedSite {
                node,
                node_id: graph.node_id(node).to_string(),
                location: graph.point(node),
                category: g.category,
            });
            debug_assert_eq!(score, objective(&best));
        }
        entries.push(entry);
    }

    // final state with every placed site
    let mut site_columns: HashMap<NodeIdx, Vec<Option<Minutes>>> = HashMap::new();
    for e in &mut entries {
        if e.grade_before == Grade::Ungradable || placed[e.category.index()].is_empty() {
            continue;
        }
        let r = region_index[e.region_id.as_str()];
        let mut best = probe_best_times(&regions[r].probes, e.category, atlas)?;
        for &site in &placed[e.category.index()] {
            let full = site_columns
                .entry(site)
                .or_insert_with(|| network.times_to(site));
            let col: Vec<Option<Minutes>> = regions[r]
                .probes
                .iter()
                .filter(|p| p.category == e.category)
                .map(|p| full[p.node])
                .collect();
            best = merge(&best, &col);
        }
        let after = grade_times(&e.region_id, e.category, &best, thresholds);
        e.time_after = after.mean_best_time;
        e.coverage_after = after.coverage;
        e.grade_after = after.grade;
    }
    Ok(InterventionPlan { entries })
}
