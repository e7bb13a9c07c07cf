//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against
//! the directory holding the config file. `population_center` may repeat;
//! every other key may appear once. See the README for the full key list.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::atlas::DEFAULT_SPEED_KMH;
use crate::env::{EnvConfig, Normalization, RewardParams};
use crate::error::{Error, Result};
use crate::geo::{Category, GeoPoint};
use crate::policy::{GradeThresholds, DEFAULT_CANDIDATE_CAP};
use crate::scenario::{
    PopulationCenter, ScenarioConfig, DEFAULT_CLUSTER_FRACTION, DEFAULT_SIGMA_DEG,
};
use crate::trainer::{Optimizer, TrainConfig};

/// Where the road network, facilities and regions come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum WorldSource {
    /// Input files.
    Files {
        graph: PathBuf,
        facilities: PathBuf,
        /// Polygon that incidents are drawn inside.
        boundary: PathBuf,
        /// Regions to grade; the boundary itself when absent.
        regions: Option<PathBuf>,
    },
    /// The built-in river grid, with bridges at the listed rows and the
    /// named facilities left out.
    Barrier {
        crossings: Vec<usize>,
        omit_facilities: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldSource,
    pub speed_kmh: f64,
    pub env: EnvConfig,
    pub centers: Vec<PopulationCenter>,
    pub cluster_fraction: f64,
    pub training_counts: [usize; Category::COUNT],
    pub challenge_counts: [usize; Category::COUNT],
    pub train: TrainConfig,
    pub thresholds: GradeThresholds,
    pub probes_per_category: usize,
    pub candidate_cap: usize,
    pub zones_k: usize,
}

fn split_counts(n: usize) -> [usize; Category::COUNT] {
    ScenarioConfig::balanced(n, 0).category_counts
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>, seed_override: Option<u64>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, seed_override)
    }

    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let mut p = Parser {
            base,
            seen: HashSet::new(),
        };
        let mut seed = None;
        let mut world_kind = None;
        let (mut graph, mut facilities, mut boundary, mut regions) = (None, None, None, None);
        let mut crossings = None;
        let mut omit_facilities = Vec::new();
        let mut speed_kmh = DEFAULT_SPEED_KMH;
        let mut env = EnvConfig::default();
        let mut centers = Vec::new();
        let mut cluster_fraction = DEFAULT_CLUSTER_FRACTION;
        let mut training_counts = None;
        let mut challenge_counts = None;
        let (mut n_training, mut n_challenge) = (2000, 500);
        let mut train = TrainConfig::default();
        let mut thresholds = GradeThresholds::default();
        let mut probes_per_category = 25;
        let mut candidate_cap = DEFAULT_CANDIDATE_CAP;
        let mut zones_k = 8;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    config_err(line_no, format!("expected `key = value`, got `{line}`"))
                })?;
            if key != "population_center" && !p.seen.insert(key.to_string()) {
                return Err(config_err(line_no, format!("duplicate key `{key}`")));
            }
            let l = line_no;
            match key {
                "seed" => seed = Some(p.num(l, key, value)?),
                "world" => world_kind = Some(value.to_string()),
                "graph" => graph = Some(p.path(value)),
                "facilities" => facilities = Some(p.path(value)),
                "boundary" => boundary = Some(p.path(value)),
                "regions" => regions = Some(p.path(value)),
                "crossings" => crossings = Some(p.list(l, key, value)?),
                "omit_facilities" => {
                    omit_facilities = value.split_whitespace().map(str::to_string).collect()
                }
                "speed_kmh" => speed_kmh = p.num(l, key, value)?,
                "alpha" => {
                    env.reward = RewardParams {
                        alpha: p.num(l, key, value)?,
                    }
                }
                "t_max" => env.norms.t_max = p.num(l, key, value)?,
                "d_max" => env.norms.d_max = p.num(l, key, value)?,
                "population_center" => centers.push(p.center(l, value)?),
                "cluster_fraction" => cluster_fraction = p.num(l, key, value)?,
                "n_training" => n_training = p.num(l, key, value)?,
                "n_challenge" => n_challenge = p.num(l, key, value)?,
                "training_counts" => training_counts = Some(p.quota(l, key, value)?),
                "challenge_counts" => challenge_counts = Some(p.quota(l, key, value)?),
                "embed_dim" => train.embed_dim = p.num(l, key, value)?,
                "epochs" => train.epochs = p.num(l, key, value)?,
                "batch_size" => train.batch_size = p.num(l, key, value)?,
                "learning_rate" => train.learning_rate = p.num(l, key, value)?,
                "entropy_coef" => train.entropy_coef = p.num(l, key, value)?,
                "critic_weight" => train.critic_weight = p.num(l, key, value)?,
                "gae_lambda" => train.gae_lambda = p.num(l, key, value)?,
                "gamma" => train.gamma = p.num(l, key, value)?,
                "stop_at_reward" => train.stop_at_reward = Some(p.num(l, key, value)?),
                "optimizer" => {
                    train.optimizer = match value {
                        "sgd" => Optimizer::Sgd,
                        "adam" => Optimizer::Adam,
                        other => {
                            return Err(config_err(
                                l,
                                format!("optimizer must be `sgd` or `adam`, got `{other}`"),
                            ))
                        }
                    }
                }
                "t_green" => thresholds.t_green = p.num(l, key, value)?,
                "t_red" => thresholds.t_red = p.num(l, key, value)?,
                "c_min" => thresholds.c_min = p.num(l, key, value)?,
                "c_red" => thresholds.c_red = p.num(l, key, value)?,
                "probes_per_category" => probes_per_category = p.num(l, key, value)?,
                "candidate_cap" => candidate_cap = p.num(l, key, value)?,
                "zones_k" => zones_k = p.num(l, key, value)?,
                other => return Err(config_err(l, format!("unknown key `{other}`"))),
            }
        }

        let seed = seed_override
            .or(seed)
            .ok_or_else(|| Error::Config("missing required key `seed` (or pass --seed)".into()))?;
        let world = match world_kind.as_deref().unwrap_or("files") {
            "barrier" => WorldSource::Barrier {
                crossings: crossings.unwrap_or_else(|| vec![2, 17]),
                omit_facilities,
            },
            "files" => {
                let need = |v: Option<PathBuf>, key: &str| {
                    v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
                };
                WorldSource::Files {
                    graph: need(graph, "graph")?,
                    facilities: need(facilities, "facilities")?,
                    boundary: need(boundary, "boundary")?,
                    regions,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "world must be `files` or `barrier`, got `{other}`"
                )))
            }
        };
        train.seed = seed;
        let cfg = RunConfig {
            seed,
            world,
            speed_kmh,
            env,
            centers,
            cluster_fraction,
            training_counts: training_counts.unwrap_or_else(|| split_counts(n_training)),
            challenge_counts: challenge_counts.unwrap_or_else(|| split_counts(n_challenge)),
            train,
            thresholds,
            probes_per_category,
            candidate_cap,
            zones_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, value) in [
            ("speed_kmh", self.speed_kmh),
            ("alpha", self.env.reward.alpha),
            ("t_max", self.env.norms.t_max),
            ("d_max", self.env.norms.d_max),
            ("probes_per_category", self.probes_per_category as f64),
            ("candidate_cap", self.candidate_cap as f64),
            ("zones_k", self.zones_k as f64),
        ] {
            if !(value > 0.0) {
                return Err(Error::NonPositive { what, value });
            }
        }
        self.train.validate()?;
        self.thresholds.validate()?;
        self.training_scenario().validate()?;
        self.challenge_scenario().validate()?;
        if self.cluster_fraction > 0.0
            && self.centers.is_empty()
            && matches!(self.world, WorldSource::Files { .. })
        {
            return Err(Error::Config(
                "cluster_fraction > 0 needs at least one `population_center`".into(),
            ));
        }
        Ok(())
    }

    /// Independent seed for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let digest = Sha256::digest(format!("{}/{stage}", self.seed).as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn training_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_incidents: self.training_counts.iter().sum(),
            cluster_fraction: self.cluster_fraction,
            category_counts: self.training_counts,
            rng_seed: self.stage_seed("training"),
        }
    }

    pub fn challenge_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_incidents: self.challenge_counts.iter().sum(),
            cluster_fraction: self.cluster_fraction,
            category_counts: self.challenge_counts,
            rng_seed: self.stage_seed("challenge"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed("train"),
            ..self.train.clone()
        }
    }

    pub fn normalization(&self) -> Normalization {
        self.env.norms
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn config_err(line: usize, message: String) -> Error {
    Error::Config(format!("line {line}: {message}"))
}

struct Parser<'a> {
    base: &'a Path,
    seen: HashSet<String>,
}

impl Parser<'_> {
    fn path(&self, value: &str) -> PathBuf {
        let p = PathBuf::from(value);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    fn num<T: std::str::FromStr>(&self, line: usize, key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| config_err(line, format!("invalid value `{value}` for `{key}`")))
    }

    fn list<T: std::str::FromStr>(&self, line: usize, key: &str, value: &str) -> Result<Vec<T>> {
        value
            .split_whitespace()
            .map(|v| self.num(line, key, v))
            .collect()
    }

    fn quota(&self, line: usize, key: &str, value: &str) -> Result<[usize; Category::COUNT]> {
        let v: Vec<usize> = self.list(line, key, value)?;
        v.try_into()
            .map_err(|_| config_err(line, format!("`{key}` needs {} counts", Category::COUNT)))
    }

    fn center(&self, line: usize, value: &str) -> Result<PopulationCenter> {
        let v: Vec<f64> = self.list(line, "population_center", value)?;
        if !(3..=4).contains(&v.len()) {
            return Err(config_err(
                line,
                "population_center needs `lon lat weight [sigma]`".into(),
            ));
        }
        let point = GeoPoint::new(v[0], v[1])?;
        PopulationCenter::new(point, v[2], v.get(3).copied().unwrap_or(DEFAULT_SIGMA_DEG))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
        # toy run
        seed = 7
        world = barrier
        crossings = 2 17
        n_training = 300
        n_challenge = 100
        optimizer = adam
        epochs = 50
    ";

    #[test]
    fn parses_barrier_config() {
        let c = RunConfig::parse(BASIC, Path::new("/tmp"), None).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(
            c.world,
            WorldSource::Barrier {
                crossings: vec![2, 17],
                omit_facilities: vec![]
            }
        );
        assert_eq!(c.training_counts, [75; 4]);
        assert_eq!(c.train.optimizer, Optimizer::Adam);
        assert_eq!(c.train.learning_rate, 1e-4);
    }

    #[test]
    fn empty_crossings_and_omitted_facilities() {
        let text = "seed = 1\nworld = barrier\ncrossings =\nomit_facilities = hosp-b fire-c\n";
        let c = RunConfig::parse(text, Path::new("."), None).unwrap();
        let expected = WorldSource::Barrier {
            crossings: vec![],
            omit_facilities: vec!["hosp-b".into(), "fire-c".into()],
        };
        assert_eq!(c.world, expected);
    }

    #[test]
    fn missing_seed_is_rejected_unless_overridden() {
        let text = BASIC.replace("seed = 7", "");
        let err = RunConfig::parse(&text, Path::new("."), None).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(
            RunConfig::parse(&text, Path::new("."), Some(3))
                .unwrap()
                .seed,
            3
        );
    }

    #[test]
    fn files_world_resolves_relative_paths() {
        let text = "seed = 1\ngraph = g.txt\nfacilities = /abs/f.geojson\nboundary = b.geojson\npopulation_center = 7.0 4.8 2 0.01\n";
        let c = RunConfig::parse(text, Path::new("/cfg"), None).unwrap();
        match &c.world {
            WorldSource::Files {
                graph,
                facilities,
                regions,
                ..
            } => {
                assert_eq!(graph, &PathBuf::from("/cfg/g.txt"));
                assert_eq!(facilities, &PathBuf::from("/abs/f.geojson"));
                assert!(regions.is_none());
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.centers[0].sigma, 0.01);
    }

    #[test]
    fn errors_name_the_line() {
        for bad in [
            "seed = 1\nbogus = 2",
            "seed = 1\nseed = 2",
            "seed = x",
            "seed = 1\nno equals sign",
        ] {
            let err = RunConfig::parse(bad, Path::new("."), None)
                .unwrap_err()
                .to_string();
            assert!(err.contains("line"), "{bad}: {err}");
        }
        assert!(RunConfig::parse(
            "seed = 1\nworld = barrier\nlearning_rate = 0",
            Path::new("."),
            None
        )
        .is_err());
        // files world without centers cannot cluster
        assert!(RunConfig::parse(
            "seed = 1\ngraph = g\nfacilities = f\nboundary = b",
            Path::new("."),
            None
        )
        .is_err());
    }

    #[test]
    fn stage_seeds_differ_and_hash_is_stable() {
        let c = RunConfig::parse(BASIC, Path::new("."), None).unwrap();
        assert_ne!(c.stage_seed("training"), c.stage_seed("challenge"));
        assert_eq!(
            c.hash(),
            RunConfig::parse(BASIC, Path::new("."), None)
                .unwrap()
                .hash()
        );
        let other = RunConfig::parse(BASIC, Path::new("."), Some(8)).unwrap();
        assert_ne!(c.hash(), other.hash());
    }
}
