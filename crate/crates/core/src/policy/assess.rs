//! Region × category service grading.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{Minutes, TravelTimeAtlas};
use crate::error::{Error, Result};
use crate::geo::{Category, RegionBoundary, RoadGraph};
use crate::scenario::{generate, Incident, ScenarioConfig, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeThresholds {
    /// Mean best time at or below which a region can be Green.
    pub t_green: Minutes,
    /// Mean best time above which a region is Red.
    pub t_red: Minutes,
    /// Coverage needed for Green.
    pub c_min: f64,
    /// Coverage below which a region is Red.
    pub c_red: f64,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        Self {
            t_green: 14.0,
            t_red: 30.0,
            c_min: 0.95,
            c_red: 0.5,
        }
    }
}

impl GradeThresholds {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.t_green
            && self.t_green <= self.t_red
            && 0.0 <= self.c_red
            && self.c_red <= self.c_min
            && self.c_min <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "grade thresholds need 0 < t_green <= t_red and 0 <= c_red <= c_min <= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn grade(&self, mean_best_time: Option<Minutes>, coverage: f64) -> Grade {
        match mean_best_time {
            None => Grade::Red,
            Some(t) if t > self.t_red || coverage < self.c_red => Grade::Red,
            Some(t) if t <= self.t_green && coverage >= self.c_min => Grade::Green,
            Some(_) => Grade::Yellow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    /// Effective.
    Green,
    /// At risk.
    Yellow,
    /// Service desert.
    Red,
    /// No probes of this category fell in the region.
    Ungradable,
}

impl Grade {
    pub fn name(self) -> &'static str {
        match self {
            Grade::Green => "green",
            Grade::Yellow => "yellow",
            Grade::Red => "red",
            Grade::Ungradable => "ungradable",
        }
    }

    pub fn is_flagged(self) -> bool {
        matches!(self, Grade::Yellow | Grade::Red)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceGrade {
    pub region_id: String,
    pub category: Category,
    pub n_probes: usize,
    pub n_solvable: usize,
    /// Mean of t* over solvable probes; `None` if there are none.
    pub mean_best_time: Option<Minutes>,
    pub coverage: f64,
    pub grade: Grade,
}

/// A region with the probe incidents drawn inside it.
#[derive(Debug, Clone)]
pub struct RegionProbes {
    pub region: RegionBoundary,
    pub probes: Vec<Incident>,
}

/// Mean and coverage of per-probe best times.
pub fn summarize(best_times: &[Option<Minutes>]) -> (Option<Minutes>, f64) {
    if best_times.is_empty() {
        return (None, 0.0);
    }
    let solvable: Vec<Minutes> = best_times.iter().flatten().copied().collect();
    let coverage = solvable.len() as f64 / best_times.len() as f64;
    let mean = (!solvable.is_empty()).then(|| solvable.iter().sum::<f64>() / solvable.len() as f64);
    (mean, coverage)
}

pub fn grade_times(
    region_id: &str,
    category: Category,
    best_times: &[Option<Minutes>],
    thresholds: &GradeThresholds,
) -> ServiceGrade {
    let (mean_best_time, coverage) = summarize(best_times);
    ServiceGrade {
        region_id: region_id.to_string(),
        category,
        n_probes: best_times.len(),
        n_solvable: best_times.iter().flatten().count(),
        mean_best_time,
        coverage,
        grade: if best_times.is_empty() {
            Grade::Ungradable
        } else {
            thresholds.grade(mean_best_time, coverage)
        },
    }
}

/// t* of each probe of `category` in probe order.
pub(crate) fn probe_best_times(
    probes: &[Incident],
    category: Category,
    atlas: &TravelTimeAtlas,
) -> Result<Vec<Option<Minutes>>> {
    probes
        .iter()
        .filter(|p| p.category == category)
        .map(|p| {
            let i = atlas
                .row_index(p.node)
                .ok_or_else(|| Error::UnknownNode(p.node.to_string()))?;
            Ok(atlas.best_feasible(i, category).map(|b| b.t_star))
        })
        .collect()
}

/// Grades every region × category. The atlas must contain a row for every
/// probe node.
pub fn assess(
    regions: &[RegionProbes],
    atlas: &TravelTimeAtlas,
    thresholds: &GradeThresholds,
) -> Result<Vec<ServiceGrade>> {
    thresholds.validate()?;
    let mut out = Vec::with_capacity(regions.len() * Category::COUNT);
    for rp in regions {
        for c in Category::ALL {
            let times = probe_best_times(&rp.probes, c, atlas)?;
            out.push(grade_times(&rp.region.region_id, c, &times, thresholds));
        }
    }
    Ok(out)
}

/// Uniform probes inside each region, `per_category` of every category,
/// drawn by the scenario generator. Region `i` uses a seed derived from
/// `seed` and `i`; ids are `probe-<region>-<nnnn>`.
pub fn generate_probes(
    regions: &[RegionBoundary],
    graph: &RoadGraph,
    per_category: usize,
    seed: u64,
) -> Result<Vec<RegionProbes>> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    regions
        .iter()
        .map(|region| {
            let cfg = ScenarioConfig {
                n_incidents: per_category * Category::COUNT,
                cluster_fraction: 0.0,
                category_counts: [per_category; Category::COUNT],
                rng_seed: seeds.next_u64(),
            };
            let mut probes = generate(&cfg, &[], region, graph, Split::Probe)?;
            for (i, p) in probes.iter_mut().enumerate() {
                p.id = format!("probe-{}-{i:04}", region.region_id);
            }
            Ok(RegionProbes {
                region: region.clone(),
                probes,
            })
        })
        .collect()
}
