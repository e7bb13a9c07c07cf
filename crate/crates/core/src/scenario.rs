//! Population-weighted synthetic incident sets.
//!
//! A fixed fraction of incidents is drawn around population centers with
//! isotropic Gaussian noise; the rest are uniform over the region's bounding
//! box. Every draw is rejected and redrawn until it falls inside the region.
//! Category quotas are met exactly. Output is a pure function of the seed.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{point_in_region, Category, GeoPoint, NodeIdx, RegionBoundary, RoadGraph};

/// Draws allowed per point before giving up on a region.
pub const REJECTION_BUDGET: usize = 1000;
pub const DEFAULT_SIGMA_DEG: f64 = 0.05;
pub const DEFAULT_CLUSTER_FRACTION: f64 = 0.60;
/// Name of the generator recorded in metadata.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Training,
    Challenge,
    Probe,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Training => "training",
            Split::Challenge => "challenge",
            Split::Probe => "probe",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(Split::Training),
            "challenge" => Ok(Split::Challenge),
            "probe" => Ok(Split::Probe),
            other => Err(Error::GeoJson(format!("unknown split `{other}`"))),
        }
    }
}

/// Which branch of the mixture produced a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Clustered,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incident {
    pub id: String,
    pub category: Category,
    pub location: GeoPoint,
    pub node: NodeIdx,
    pub split: Split,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationCenter {
    pub center: GeoPoint,
    pub weight: f64,
    pub sigma: f64,
}

impl PopulationCenter {
    pub fn new(center: GeoPoint, weight: f64, sigma: f64) -> Result<Self> {
        if !(weight > 0.0) {
            return Err(Error::NonPositive {
                what: "center weight",
                value: weight,
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::NonPositive {
                what: "center sigma",
                value: sigma,
            });
        }
        Ok(Self {
            center,
            weight,
            sigma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_incidents: usize,
    pub cluster_fraction: f64,
    /// Quota per category code.
    pub category_counts: [usize; Category::COUNT],
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Equal quotas, remainder to the lowest codes.
    pub fn balanced(n_incidents: usize, rng_seed: u64) -> Self {
        let mut counts = [n_incidents / Category::COUNT; Category::COUNT];
        for c in counts.iter_mut().take(n_incidents % Category::COUNT) {
            *c += 1;
        }
        Self {
            n_incidents,
            cluster_fraction: DEFAULT_CLUSTER_FRACTION,
            category_counts: counts,
            rng_seed,
        }
    }

    /// The 2000-incident training mix.
    pub fn reference_training(rng_seed: u64) -> Self {
        Self {
            n_incidents: 2000,
            cluster_fraction: DEFAULT_CLUSTER_FRACTION,
            category_counts: [570, 532, 454, 444],
            rng_seed,
        }
    }

    /// The 500-incident hold-out mix.
    pub fn reference_challenge(rng_seed: u64) -> Self {
        Self {
            n_incidents: 500,
            cluster_fraction: DEFAULT_CLUSTER_FRACTION,
            category_counts: [142, 142, 108, 108],
            rng_seed,
        }
    }

    pub fn n_clustered(&self) -> usize {
        (self.n_incidents as f64 * self.cluster_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cluster_fraction) {
            return Err(Error::Scenario(format!(
                "cluster_fraction must lie in [0, 1], got {}",
                self.cluster_fraction
            )));
        }
        let total: usize = self.category_counts.iter().sum();
        if total != self.n_incidents {
            return Err(Error::Scenario(format!(
                "category counts sum to {total} but n_incidents is {}",
                self.n_incidents
            )));
        }
        Ok(())
    }
}

fn draw_inside(
    rng: &mut ChaCha8Rng,
    boundary: &RegionBoundary,
    mut propose: impl FnMut(&mut ChaCha8Rng) -> (f64, f64),
) -> Result<GeoPoint> {
    for _ in 0..REJECTION_BUDGET {
        let (lon, lat) = propose(rng);
        let Ok(p) = GeoPoint::new(lon, lat) else {
            continue;
        };
        if point_in_region(&p, boundary) {
            return Ok(p);
        }
    }
    Err(Error::RejectionBudget {
        attempts: REJECTION_BUDGET,
    })
}

/// Generates `cfg.n_incidents` incidents inside `boundary`, snapped onto
/// `graph`. Ids are `<split>-<nnnn>`.
pub fn generate(
    cfg: &ScenarioConfig,
    centers: &[PopulationCenter],
    boundary: &RegionBoundary,
    graph: &RoadGraph,
    split: Split,
) -> Result<Vec<Incident>> {
    cfg.validate()?;
    let n_clustered = cfg.n_clustered();
    if n_clustered > 0 && centers.is_empty() {
        return Err(Error::Scenario(
            "clustered incidents requested but no population centers given".into(),
        ));
    }
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let mut draws: Vec<(GeoPoint, Origin)> = Vec::with_capacity(cfg.n_incidents);
    if n_clustered > 0 {
        let pick = WeightedIndex::new(centers.iter().map(|c| c.weight))
            .map_err(|e| Error::Scenario(format!("center weights: {e}")))?;
        for _ in 0..n_clustered {
            let c = centers[pick.sample(&mut rng)];
            let noise = Normal::new(0.0, c.sigma).map_err(|e| Error::Scenario(e.to_string()))?;
            let p = draw_inside(&mut rng, boundary, |r| {
                (
                    c.center.lon + noise.sample(r),
                    c.center.lat + noise.sample(r),
                )
            })?;
            draws.push((p, Origin::Clustered));
        }
    }
    let (min, max) = boundary.bbox();
    for _ in n_clustered..cfg.n_incidents {
        let p = draw_inside(&mut rng, boundary, |r| {
            (
                r.random_range(min.lon..=max.lon),
                r.random_range(min.lat..=max.lat),
            )
        })?;
        draws.push((p, Origin::Uniform));
    }
    draws.shuffle(&mut rng);

    let mut categories: Vec<Category> = Category::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, cfg.category_counts[c.index()]))
        .collect();
    categories.shuffle(&mut rng);

    draws
        .into_iter()
        .zip(categories)
        .enumerate()
        .map(|(i, ((location, origin), category))| {
            Ok(Incident {
                id: format!("{}-{i:04}", split.name()),
                category,
                location,
                node: graph.snap(&location)?,
                split,
                origin,
            })
        })
        .collect()
}

/// Training-set generation.
pub fn generate_incidents(
    cfg: &ScenarioConfig,
    centers: &[PopulationCenter],
    boundary: &RegionBoundary,
    graph: &RoadGraph,
) -> Result<Vec<Incident>> {
    generate(cfg, centers, boundary, graph, Split::Training)
}

/// Hold-out generation: same sampler, different seed, `Challenge` split.
pub fn generate_challenge_set(
    cfg: &ScenarioConfig,
    centers: &[PopulationCenter],
    boundary: &RegionBoundary,
    graph: &RoadGraph,
) -> Result<Vec<Incident>> {
    generate(cfg, centers, boundary, graph, Split::Challenge)
}

pub fn incidents_to_geojson(incidents: &[Incident], graph: &RoadGraph) -> Value {
    let features: Vec<Value> = incidents
        .iter()
        .map(|inc| {
            json!({
                "type": "Feature",
                "properties": {
                    "id": inc.id,
                    "category": inc.category.code(),
                    "split": inc.split.name(),
                    "node": graph.node_id(inc.node),
                    "origin": inc.origin,
                },
                "geometry": {"type": "Point", "coordinates": [inc.location.lon, inc.location.lat]},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// Reads incidents written by [`incidents_to_geojson`]. A missing `node`
/// property is filled by snapping; missing `split` defaults to `challenge`.
pub fn parse_incidents(text: &str, graph: &RoadGraph) -> Result<Vec<Incident>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("incidents must be a FeatureCollection".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let coords = f
                .pointer("/geometry/coordinates")
                .and_then(Value::as_array)
                .filter(|c| c.len() >= 2)
                .ok_or_else(|| Error::GeoJson(format!("incident {i} is not a Point")))?;
            let location = GeoPoint::new(
                coords[0].as_f64().unwrap_or(f64::NAN),
                coords[1].as_f64().unwrap_or(f64::NAN),
            )?;
            let id = match props.get("id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => return Err(Error::GeoJson(format!("incident {i} has no `id`"))),
            };
            let category = match props.get("category") {
                Some(Value::Number(n)) => Category::from_code(
                    n.as_u64()
                        .filter(|&c| c < 4)
                        .ok_or_else(|| Error::InvalidCategory(n.to_string()))?
                        as u8,
                )?,
                Some(Value::String(s)) => s.parse()?,
                _ => return Err(Error::GeoJson(format!("incident {i} has no `category`"))),
            };
            let split = match props.get("split").and_then(Value::as_str) {
                Some(s) => Split::parse(s)?,
                None => Split::Challenge,
            };
            let node = match props.get("node").and_then(Value::as_str) {
                Some(id) => graph.index_of(id)?,
                None => graph.snap(&location)?,
            };
            let origin = match props.get("origin").and_then(Value::as_str) {
                Some("clustered") => Origin::Clustered,
                _ => Origin::Uniform,
            };
            Ok(Incident {
                id,
                category,
                location,
                node,
                split,
                origin,
            })
        })
        .collect()
}

pub fn load_incidents(path: impl AsRef<Path>, graph: &RoadGraph) -> Result<Vec<Incident>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_incidents(&text, graph)
}

/// Sidecar recorded next to a generated incident set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub rng: String,
    pub split: Split,
    pub config: ScenarioConfig,
    pub centers: Vec<PopulationCenter>,
    pub rejection_budget: usize,
}

impl ScenarioMetadata {
    pub fn new(cfg: &ScenarioConfig, centers: &[PopulationCenter], split: Split) -> Self {
        Self {
            rng: RNG_NAME.to_string(),
            split,
            config: cfg.clone(),
            centers: centers.to_vec(),
            rejection_budget: REJECTION_BUDGET,
        }
    }
}
