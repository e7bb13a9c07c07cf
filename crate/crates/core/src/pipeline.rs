//! Run directories and the stages that fill them.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json            sha256 of every artifact, config hash, timestamps
//! world/                   synthetic world files (built-in worlds only)
//! incidents/               training, challenge and probe incidents
//! atlas/                   atlas.csv and metadata.json
//! model/                   checkpoint.json and training_curve.csv
//! reports/                 evaluation, latency, connectivity, zones,
//!                          assessment and intervention plan
//! ```
//!
//! Each stage reads what earlier stages wrote, so stages can run one at a
//! time from the command line or all together through [`run_pipeline`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::agent::{forward, greedy_action, Checkpoint, PolicyParams};
use crate::atlas::{build_atlas, Minutes, ReverseNetwork, TravelTimeAtlas};
use crate::config::{RunConfig, WorldSource};
use crate::env::Episode;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, latency_bench, summary_text, write_dispatch_log, write_report_csv, AttentionPolicy,
    EvaluationReport, LatencyStats, NearestNeighbor, Oracle,
};
use crate::geo::{
    audit_connectivity, facilities_to_geojson, load_facilities, load_regions, regions_to_geojson,
    Category, ConnectivityReport, Facility, GeoPoint, NodeIdx, RegionBoundary, RoadGraph,
};
use crate::policy::{
    assess, assessment_geojson, cluster_zones, generate_probes, plan_geojson, plan_interventions,
    region_candidates, write_assessment_csv, write_plan_csv, write_zones_csv, InterventionPlan,
    RegionProbes, ServiceGrade,
};
use crate::scenario::{
    generate, incidents_to_geojson, load_incidents, Incident, ScenarioMetadata, Split,
};
use crate::trainer::{train, training_examples, TrainOutcome};
use crate::world::{barrier_world, BarrierWorldConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "dispatch-run-manifest";

pub const WORLD_GRAPH: &str = "world/graph.txt";
pub const WORLD_FACILITIES: &str = "world/facilities.geojson";
pub const WORLD_BOUNDARY: &str = "world/boundary.geojson";
pub const WORLD_REGIONS: &str = "world/regions.geojson";
pub const TRAINING_INCIDENTS: &str = "incidents/training.geojson";
pub const CHALLENGE_INCIDENTS: &str = "incidents/challenge.geojson";
pub const PROBE_INCIDENTS: &str = "incidents/probes.geojson";
pub const INCIDENT_METADATA: &str = "incidents/metadata.json";
pub const ATLAS_CSV: &str = "atlas/atlas.csv";
pub const ATLAS_METADATA: &str = "atlas/metadata.json";
pub const CHECKPOINT: &str = "model/checkpoint.json";
pub const TRAINING_CURVE: &str = "model/training_curve.csv";
pub const EVALUATION_CSV: &str = "reports/evaluation.csv";
pub const EVALUATION_TXT: &str = "reports/evaluation.txt";
pub const DISPATCH_LOG: &str = "reports/dispatch_log.csv";
pub const BASELINE_DISPATCH_LOG: &str = "reports/dispatch_log_baseline.csv";
pub const LATENCY_CSV: &str = "reports/latency.csv";
pub const CONNECTIVITY: &str = "reports/connectivity.json";
pub const ZONES_CSV: &str = "reports/zones.csv";
pub const ASSESSMENT_CSV: &str = "reports/assessment.csv";
pub const ASSESSMENT_GEOJSON: &str = "reports/assessment.geojson";
pub const PLAN_CSV: &str = "reports/plan.csv";
pub const PLAN_GEOJSON: &str = "reports/plan_sites.geojson";
pub const PLAN_VERIFICATION: &str = "reports/plan_verification.csv";
pub const ASSESSMENT_AFTER_CSV: &str = "reports/assessment_after.csv";

/// Directories owned by a run; `--force` clears exactly these.
const OWNED: [&str; 5] = ["world", "incidents", "atlas", "model", "reports"];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
    /// Content differs between identical runs (wall-clock measurements).
    pub volatile: bool,
    pub written_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input file path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the run directory.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub created_at: String,
    pub updated_at: String,
}

impl Manifest {
    fn new(cfg: &RunConfig) -> Self {
        let t = now();
        Self {
            format: MANIFEST_FORMAT.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            created_at: t.clone(),
            updated_at: t,
        }
    }

    pub fn load(root: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(
            &root.join(MANIFEST_FILE),
        )?)?)
    }

    /// Artifacts whose file is missing or no longer matches its hash.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(rel, entry)| match std::fs::read(root.join(rel)) {
                Ok(bytes) => sha256_hex(&bytes) != entry.sha256,
                Err(_) => true,
            })
            .map(|(rel, _)| rel.clone())
            .collect()
    }

    /// `path -> sha256` of every non-volatile artifact.
    pub fn stable_hashes(&self) -> BTreeMap<String, String> {
        self.artifacts
            .iter()
            .filter(|(_, e)| !e.volatile)
            .map(|(k, e)| (k.clone(), e.sha256.clone()))
            .collect()
    }
}

/// Road network, facilities and regions for one run.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: RoadGraph,
    pub facilities: Vec<Facility>,
    pub boundary: RegionBoundary,
    pub regions: Vec<RegionBoundary>,
    pub centers: Vec<crate::scenario::PopulationCenter>,
    /// Input files read, for the manifest.
    pub inputs: Vec<PathBuf>,
    pub synthetic: bool,
}

pub fn load_world(cfg: &RunConfig) -> Result<World> {
    match &cfg.world {
        WorldSource::Barrier {
            crossings,
            omit_facilities,
        } => {
            let mut layout = BarrierWorldConfig {
                crossings: crossings.clone(),
                ..Default::default()
            };
            if let Some(id) = omit_facilities
                .iter()
                .find(|id| !layout.facilities.iter().any(|f| &f.0 == *id))
            {
                return Err(Error::Config(format!(
                    "omit_facilities: no built-in facility `{id}`"
                )));
            }
            layout
                .facilities
                .retain(|f| !omit_facilities.contains(&f.0));
            let w = barrier_world(&layout)?;
            let centers = if cfg.centers.is_empty() {
                w.centers
            } else {
                cfg.centers.clone()
            };
            Ok(World {
                graph: w.graph,
                facilities: w.facilities,
                boundary: w.boundary,
                regions: w.regions,
                centers,
                inputs: Vec::new(),
                synthetic: true,
            })
        }
        WorldSource::Files {
            graph,
            facilities,
            boundary,
            regions,
        } => {
            let g = RoadGraph::load(graph)?;
            let f = load_facilities(facilities, &g)?;
            let mut b = load_regions(boundary)?;
            if b.len() != 1 {
                return Err(Error::Config(format!(
                    "{}: boundary must hold exactly one polygon, found {}",
                    boundary.display(),
                    b.len()
                )));
            }
            let boundary_region = b.remove(0);
            let r = match regions {
                Some(p) => load_regions(p)?,
                None => vec![boundary_region.clone()],
            };
            let mut inputs = vec![graph.clone(), facilities.clone(), boundary.clone()];
            inputs.extend(regions.clone());
            Ok(World {
                graph: g,
                facilities: f,
                boundary: boundary_region,
                regions: r,
                centers: cfg.centers.clone(),
                inputs,
                synthetic: false,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct IncidentSets {
    pub training: Vec<Incident>,
    pub challenge: Vec<Incident>,
    pub probes: Vec<RegionProbes>,
}

impl IncidentSets {
    pub fn all_probes(&self) -> Vec<Incident> {
        self.probes
            .iter()
            .flat_map(|r| r.probes.iter().cloned())
            .collect()
    }

    /// Every incident node, training first, then challenge, then probes.
    pub fn nodes(&self) -> Vec<NodeIdx> {
        self.training
            .iter()
            .chain(&self.challenge)
            .chain(self.probes.iter().flat_map(|r| &r.probes))
            .map(|i| i.node)
            .collect()
    }
}

/// Probe ids are `probe-<region_id>-<nnnn>`.
fn group_probes(regions: &[RegionBoundary], probes: Vec<Incident>) -> Result<Vec<RegionProbes>> {
    let mut groups: Vec<RegionProbes> = regions
        .iter()
        .map(|r| RegionProbes {
            region: r.clone(),
            probes: Vec::new(),
        })
        .collect();
    for p in probes {
        let region = p
            .id
            .strip_prefix("probe-")
            .and_then(|rest| rest.rsplit_once('-'))
            .map(|(region, _)| region)
            .ok_or_else(|| Error::GeoJson(format!("probe id `{}` does not name a region", p.id)))?;
        let g = groups
            .iter_mut()
            .find(|g| g.region.region_id == region)
            .ok_or_else(|| {
                Error::GeoJson(format!("probe `{}` names unknown region `{region}`", p.id))
            })?;
        g.probes.push(p);
    }
    Ok(groups)
}

#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub agent: EvaluationReport,
    pub baseline: EvaluationReport,
    pub oracle: EvaluationReport,
    pub agent_latency: LatencyStats,
    pub baseline_latency: LatencyStats,
}

#[derive(Debug, Clone)]
pub struct PlanSummary {
    pub grades_before: Vec<ServiceGrade>,
    pub plan: InterventionPlan,
    /// Assessment after rebuilding the atlas with the proposed sites added.
    pub grades_after: Vec<ServiceGrade>,
    /// Largest gap between the planner's time_after and the rebuilt mean.
    pub max_time_after_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub node_id: String,
    pub category: Category,
    pub facility_id: String,
    pub travel_time: Minutes,
    pub best_time: Minutes,
    pub delta: Minutes,
    pub elapsed_ms: f64,
}

/// An output directory bound to one config.
pub struct Run {
    pub cfg: RunConfig,
    pub root: PathBuf,
    pub world: World,
    force: bool,
    manifest: Manifest,
}

impl Run {
    /// Starts a fresh run. An existing non-empty directory is refused unless
    /// `force` is set, in which case the run-owned subdirectories and the
    /// manifest are removed first.
    pub fn create(cfg: RunConfig, root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        let non_empty = root
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty {
            if !force {
                return Err(Error::Refused(format!(
                    "output directory {} already exists and is not empty; pass --force to overwrite",
                    root.display()
                )));
            }
            for dir in OWNED {
                let p = root.join(dir);
                if p.exists() {
                    std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
            let m = root.join(MANIFEST_FILE);
            if m.exists() {
                std::fs::remove_file(&m).map_err(|e| Error::io(&m, e))?;
            }
        }
        Self::open(cfg, root, force)
    }

    /// Opens a run directory for single stages, creating it if needed.
    /// Existing artifacts are only overwritten with `force`.
    pub fn open(cfg: RunConfig, root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let world = load_world(&cfg).map_err(|e| e.in_stage("load-world"))?;
        let manifest = match Manifest::load(&root) {
            Ok(m) if m.config_hash == cfg.hash() => m,
            Ok(_) if !force => {
                return Err(Error::Refused(format!(
                    "{} was produced with a different config; pass --force to overwrite",
                    root.display()
                )))
            }
            _ => Manifest::new(&cfg),
        };
        let mut run = Self {
            cfg,
            root,
            world,
            force,
            manifest,
        };
        for input in run.world.inputs.clone() {
            let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
            run.manifest
                .inputs
                .insert(input.display().to_string(), sha256_hex(&bytes));
        }
        Ok(run)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&mut self, stage: &str, rel: &str, bytes: &[u8], volatile: bool) -> Result<()> {
        let path = self.path(rel);
        if path.exists() && !self.force {
            return Err(Error::Refused(format!(
                "{} exists; pass --force to overwrite",
                path.display()
            )));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.insert(
            rel.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                stage: stage.to_string(),
                volatile,
                written_at: now(),
            },
        );
        self.save_manifest()
    }

    fn write_json(&mut self, stage: &str, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(stage, rel, text.as_bytes(), false)
    }

    fn save_manifest(&mut self) -> Result<()> {
        self.manifest.updated_at = now();
        let path = self.path(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn read(&self, rel: &str) -> Result<String> {
        read_to_string(&self.path(rel))
    }

    pub fn gen_incidents(&mut self) -> Result<IncidentSets> {
        self.gen_incidents_inner()
            .map_err(|e| e.in_stage("gen-incidents"))
    }

    fn gen_incidents_inner(&mut self) -> Result<IncidentSets> {
        const STAGE: &str = "gen-incidents";
        if self.world.synthetic {
            let graph_text = self.world.graph.to_text();
            self.write(STAGE, WORLD_GRAPH, graph_text.as_bytes(), false)?;
            let f = facilities_to_geojson(&self.world.facilities);
            self.write_json(STAGE, WORLD_FACILITIES, &f)?;
            let b = regions_to_geojson(std::slice::from_ref(&self.world.boundary), |_| {
                Default::default()
            });
            self.write_json(STAGE, WORLD_BOUNDARY, &b)?;
            let r = regions_to_geojson(&self.world.regions, |_| Default::default());
            self.write_json(STAGE, WORLD_REGIONS, &r)?;
        }
        let w = &self.world;
        let training_cfg = self.cfg.training_scenario();
        let challenge_cfg = self.cfg.challenge_scenario();
        let training = generate(
            &training_cfg,
            &w.centers,
            &w.boundary,
            &w.graph,
            Split::Training,
        )?;
        let challenge = generate(
            &challenge_cfg,
            &w.centers,
            &w.boundary,
            &w.graph,
            Split::Challenge,
        )?;
        let probes = generate_probes(
            &w.regions,
            &w.graph,
            self.cfg.probes_per_category,
            self.cfg.stage_seed("probes"),
        )?;
        let sets = IncidentSets {
            training,
            challenge,
            probes,
        };

        let g = &self.world.graph;
        let docs = [
            (TRAINING_INCIDENTS, incidents_to_geojson(&sets.training, g)),
            (
                CHALLENGE_INCIDENTS,
                incidents_to_geojson(&sets.challenge, g),
            ),
            (PROBE_INCIDENTS, incidents_to_geojson(&sets.all_probes(), g)),
        ];
        let meta = json!({
            "training": ScenarioMetadata::new(&training_cfg, &self.world.centers, Split::Training),
            "challenge": ScenarioMetadata::new(&challenge_cfg, &self.world.centers, Split::Challenge),
            "probes": {
                "per_category": self.cfg.probes_per_category,
                "seed": self.cfg.stage_seed("probes"),
                "regions": self.world.regions.iter().map(|r| r.region_id.clone()).collect::<Vec<_>>(),
            },
        });
        for (rel, doc) in docs {
            self.write_json(STAGE, rel, &doc)?;
        }
        self.write_json(STAGE, INCIDENT_METADATA, &meta)?;
        Ok(sets)
    }

    pub fn load_incidents(&self) -> Result<IncidentSets> {
        let g = &self.world.graph;
        let read = |rel: &str| -> Result<Vec<Incident>> { load_incidents(self.path(rel), g) };
        Ok(IncidentSets {
            training: read(TRAINING_INCIDENTS)?,
            challenge: read(CHALLENGE_INCIDENTS)?,
            probes: group_probes(&self.world.regions, read(PROBE_INCIDENTS)?)?,
        })
    }

    /// Builds the atlas over every incident node of the run, plus the nodes
    /// of any `extra` incident files.
    pub fn build_atlas(&mut self, extra: &[PathBuf]) -> Result<TravelTimeAtlas> {
        self.build_atlas_inner(extra)
            .map_err(|e| e.in_stage("build-atlas"))
    }

    fn build_atlas_inner(&mut self, extra: &[PathBuf]) -> Result<TravelTimeAtlas> {
        const STAGE: &str = "build-atlas";
        let mut nodes = if extra.is_empty() || self.path(TRAINING_INCIDENTS).exists() {
            self.load_incidents()?.nodes()
        } else {
            Vec::new()
        };
        for path in extra {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            self.manifest
                .inputs
                .insert(path.display().to_string(), sha256_hex(&bytes));
            nodes.extend(
                load_incidents(path, &self.world.graph)?
                    .iter()
                    .map(|i| i.node),
            );
        }
        let atlas = build_atlas(
            &self.world.graph,
            &nodes,
            &self.world.facilities,
            self.cfg.speed_kmh,
        )?;
        let mut csv = Vec::new();
        atlas.write_csv(&self.world.graph, &mut csv)?;
        self.write(STAGE, ATLAS_CSV, &csv, false)?;
        let meta = atlas.metadata(&self.world.graph);
        self.write_json(STAGE, ATLAS_METADATA, &meta)?;
        Ok(atlas)
    }

    pub fn load_atlas(&self) -> Result<TravelTimeAtlas> {
        let text = self.read(ATLAS_CSV)?;
        TravelTimeAtlas::read_csv(
            text.as_bytes(),
            &self.world.graph,
            &self.world.facilities,
            self.cfg.speed_kmh,
        )
    }

    pub fn audit_graph(&mut self) -> Result<ConnectivityReport> {
        let nodes = if self.path(TRAINING_INCIDENTS).exists() {
            self.load_incidents()
                .map_err(|e| e.in_stage("audit-graph"))?
                .nodes()
        } else {
            Vec::new()
        };
        let report = audit_connectivity(&self.world.graph, &self.world.facilities, &nodes);
        self.write_json("audit-graph", CONNECTIVITY, &report)
            .map_err(|e| e.in_stage("audit-graph"))?;
        Ok(report)
    }

    pub fn train(&mut self) -> Result<TrainOutcome> {
        self.train_inner().map_err(|e| e.in_stage("train"))
    }

    fn train_inner(&mut self) -> Result<TrainOutcome> {
        let atlas = self.load_atlas()?;
        let sets = self.load_incidents()?;
        let examples = training_examples(&sets.training, &atlas, &self.cfg.env)?;
        let outcome = train(&examples, &self.cfg.env, &self.cfg.train_config())?;
        let checkpoint = Checkpoint::new(outcome.params.clone(), self.cfg.hash());
        self.write("train", CHECKPOINT, checkpoint.to_json().as_bytes(), false)?;
        self.write(
            "train",
            TRAINING_CURVE,
            outcome.curve.to_csv().as_bytes(),
            false,
        )?;
        Ok(outcome)
    }

    pub fn load_params(&self) -> Result<PolicyParams> {
        let ckpt = Checkpoint::from_json(&self.read(CHECKPOINT)?)?;
        Ok(ckpt.params)
    }

    pub fn evaluate(&mut self) -> Result<EvaluationSummary> {
        self.evaluate_inner().map_err(|e| e.in_stage("evaluate"))
    }

    fn evaluate_inner(&mut self) -> Result<EvaluationSummary> {
        const STAGE: &str = "evaluate";
        let atlas = self.load_atlas()?;
        let challenge = self.load_incidents()?.challenge;
        let env = self.cfg.env;
        let agent_policy = AttentionPolicy {
            params: self.load_params()?,
        };
        let agent = evaluate(&agent_policy, &challenge, &atlas, &env)?;
        let baseline = evaluate(&NearestNeighbor, &challenge, &atlas, &env)?;
        let oracle = evaluate(&Oracle, &challenge, &atlas, &env)?;
        let agent_latency = latency_bench(&agent_policy, &challenge, &atlas, &env)?;
        let baseline_latency = latency_bench(&NearestNeighbor, &challenge, &atlas, &env)?;

        let reports = [&agent.report, &baseline.report, &oracle.report];
        let mut csv = Vec::new();
        write_report_csv(&reports, &mut csv)?;
        self.write(STAGE, EVALUATION_CSV, &csv, false)?;
        self.write(
            STAGE,
            EVALUATION_TXT,
            summary_text(&reports).as_bytes(),
            false,
        )?;
        let mut log = Vec::new();
        write_dispatch_log(&agent.log, atlas.facilities(), &mut log)?;
        self.write(STAGE, DISPATCH_LOG, &log, false)?;
        let mut log = Vec::new();
        write_dispatch_log(&baseline.log, atlas.facilities(), &mut log)?;
        self.write(STAGE, BASELINE_DISPATCH_LOG, &log, false)?;

        let mut lat = String::from("policy,n,p50_ms,p99_ms,max_ms\n");
        for (name, l) in [
            ("attention", &agent_latency),
            ("nearest-neighbor", &baseline_latency),
        ] {
            let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
            lat.push_str(&format!(
                "{name},{},{},{},{}\n",
                l.n,
                f(l.p50_ms),
                f(l.p99_ms),
                f(l.max_ms)
            ));
        }
        self.write(STAGE, LATENCY_CSV, lat.as_bytes(), true)?;

        Ok(EvaluationSummary {
            agent: agent.report,
            baseline: baseline.report,
            oracle: oracle.report,
            agent_latency,
            baseline_latency,
        })
    }

    pub fn assess(&mut self) -> Result<Vec<ServiceGrade>> {
        self.assess_inner().map_err(|e| e.in_stage("assess"))
    }

    fn assess_inner(&mut self) -> Result<Vec<ServiceGrade>> {
        const STAGE: &str = "assess";
        let atlas = self.load_atlas()?;
        let sets = self.load_incidents()?;
        let grades = assess(&sets.probes, &atlas, &self.cfg.thresholds)?;
        let mut csv = Vec::new();
        write_assessment_csv(&grades, &mut csv)?;
        self.write(STAGE, ASSESSMENT_CSV, &csv, false)?;
        let geo = assessment_geojson(&self.world.regions, &grades);
        self.write_json(STAGE, ASSESSMENT_GEOJSON, &geo)?;

        let points: Vec<GeoPoint> = sets.training.iter().map(|i| i.location).collect();
        if !points.is_empty() {
            let k = self.cfg.zones_k.min(points.len());
            let zones = cluster_zones(&points, k, self.cfg.stage_seed("zones"))?;
            let mut csv = Vec::new();
            write_zones_csv(&zones, &mut csv)?;
            self.write(STAGE, ZONES_CSV, &csv, false)?;
        }
        Ok(grades)
    }

    /// Plans interventions, then checks them against a from-scratch atlas
    /// rebuild with the proposed sites added.
    pub fn plan(&mut self) -> Result<PlanSummary> {
        self.plan_inner().map_err(|e| e.in_stage("plan"))
    }

    fn plan_inner(&mut self) -> Result<PlanSummary> {
        const STAGE: &str = "plan";
        let atlas = self.load_atlas()?;
        let sets = self.load_incidents()?;
        let thresholds = self.cfg.thresholds;
        let grades_before = assess(&sets.probes, &atlas, &thresholds)?;
        let network = ReverseNetwork::new(&self.world.graph, self.cfg.speed_kmh)?;
        let seed = self.cfg.stage_seed("candidates");
        let candidates: Vec<Vec<NodeIdx>> = self
            .world
            .regions
            .iter()
            .map(|r| region_candidates(&self.world.graph, r, self.cfg.candidate_cap, seed))
            .collect();
        let plan = plan_interventions(
            &self.world.graph,
            &network,
            &atlas,
            &sets.probes,
            &candidates,
            &grades_before,
            &thresholds,
        )?;

        let mut augmented = self.world.facilities.clone();
        augmented.extend(plan.new_facilities());
        let probe_nodes: Vec<NodeIdx> = sets.all_probes().iter().map(|p| p.node).collect();
        let rebuilt = build_atlas(
            &self.world.graph,
            &probe_nodes,
            &augmented,
            self.cfg.speed_kmh,
        )?;
        let grades_after = assess(&sets.probes, &rebuilt, &thresholds)?;

        let mut verification = String::from(
            "region_id,category,time_after_min,time_after_rebuild_min,abs_diff_min,grade_after\n",
        );
        let mut max_gap: f64 = 0.0;
        for (e, g) in plan.entries.iter().zip(&grades_after) {
            let gap = match (e.time_after, g.mean_best_time) {
                (Some(a), Some(b)) => (a - b).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            max_gap = max_gap.max(gap);
            let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            verification.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.region_id,
                e.category.name(),
                f(e.time_after),
                f(g.mean_best_time),
                gap,
                g.grade.name()
            ));
        }

        let mut csv = Vec::new();
        write_plan_csv(&plan, &mut csv)?;
        self.write(STAGE, PLAN_CSV, &csv, false)?;
        self.write_json(STAGE, PLAN_GEOJSON, &plan_geojson(&plan))?;
        self.write(STAGE, PLAN_VERIFICATION, verification.as_bytes(), false)?;
        let mut csv = Vec::new();
        write_assessment_csv(&grades_after, &mut csv)?;
        self.write(STAGE, ASSESSMENT_AFTER_CSV, &csv, false)?;

        Ok(PlanSummary {
            grades_before,
            plan,
            grades_after,
            max_time_after_gap: max_gap,
        })
    }

    /// Recommends a facility for an incident at `location`. `None` when no
    /// facility of the category is reachable.
    pub fn dispatch(
        &self,
        location: GeoPoint,
        category: Category,
        params: &PolicyParams,
    ) -> Result<Option<Recommendation>> {
        let atlas = self.load_atlas()?;
        let start = Instant::now();
        let node = self.world.graph.snap(&location)?;
        let on_demand;
        let row = match atlas.row_index(node) {
            Some(i) => atlas.row(i),
            None => {
                on_demand = build_atlas(
                    &self.world.graph,
                    &[node],
                    &self.world.facilities,
                    self.cfg.speed_kmh,
                )?;
                on_demand.row(0)
            }
        };
        let episode = Episode::new(category, row, &self.world.facilities, &self.cfg.env.norms);
        let Some(best) = episode.best else {
            return Ok(None);
        };
        let j = greedy_action(&forward(params, &episode.state)?);
        let travel_time = episode.times[j].expect("greedy action is feasible");
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Some(Recommendation {
            node_id: self.world.graph.node_id(node).to_string(),
            category,
            facility_id: self.world.facilities[j].id.clone(),
            travel_time,
            best_time: best.t_star,
            delta: travel_time - best.t_star,
            elapsed_ms,
        }))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub connectivity: ConnectivityReport,
    pub training_epochs: usize,
    pub final_rolling_reward: Option<f64>,
    pub evaluation: EvaluationSummary,
    pub grades: Vec<ServiceGrade>,
    pub plan: PlanSummary,
}

/// gen-incidents, build-atlas, audit-graph, train, evaluate, assess, plan.
pub fn run_pipeline(
    cfg: RunConfig,
    root: impl Into<PathBuf>,
    force: bool,
) -> Result<(Run, PipelineSummary)> {
    let mut run = Run::create(cfg, root, force)?;
    run.gen_incidents()?;
    run.build_atlas(&[])?;
    let connectivity = run.audit_graph()?;
    let outcome = run.train()?;
    let evaluation = run.evaluate()?;
    let grades = run.assess()?;
    let plan = run.plan()?;
    let summary = PipelineSummary {
        connectivity,
        training_epochs: outcome.curve.len(),
        final_rolling_reward: outcome.curve.rolling_mean_reward.last().copied(),
        evaluation,
        grades,
        plan,
    };
    Ok((run, summary))
}
