//! Run directory handling, manifests and dispatch on a trained toy run.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use dispatch_core::agent::Checkpoint;
use dispatch_core::config::RunConfig;
use dispatch_core::env::Episode;
use dispatch_core::error::Error;
use dispatch_core::geo::Category;
use dispatch_core::pipeline::{
    run_pipeline, Manifest, PipelineSummary, Run, ATLAS_CSV, CHECKPOINT, WORLD_BOUNDARY,
    WORLD_FACILITIES, WORLD_GRAPH, WORLD_REGIONS,
};
use dispatch_core::world::{barrier_world, BarrierWorldConfig};

const TOY: &str = "seed = 7
world = barrier
n_training = 300
n_challenge = 100
optimizer = adam
epochs = 2000
stop_at_reward = 0.99
probes_per_category = 10
";

const QUICK: &str = "seed = 3
world = barrier
n_training = 40
n_challenge = 20
epochs = 3
embed_dim = 8
probes_per_category = 4
";

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text, Path::new("."), None).unwrap()
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
    summary: PipelineSummary,
}

fn trained() -> &'static Trained {
    static RUN: OnceLock<Trained> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("toy");
        let (_, summary) = run_pipeline(cfg(TOY), &root, false).unwrap();
        Trained {
            _dir: dir,
            root,
            summary,
        }
    })
}

#[test]
fn toy_run_reaches_oracle_quality() {
    let t = trained();
    let e = &t.summary.evaluation;
    assert_eq!(e.agent.overall.optimality_rate, Some(100.0));
    assert_eq!(e.oracle.overall.optimality_rate, Some(100.0));
    assert!(e.baseline.overall.optimality_rate.unwrap() < 100.0);
    assert!(t.summary.final_rolling_reward.unwrap() >= 0.99);
    assert!(t.summary.plan.max_time_after_gap <= 1e-9);
}

#[test]
fn dispatch_at_a_facility_node_picks_that_facility() {
    let t = trained();
    let run = Run::open(cfg(TOY), &t.root, false).unwrap();
    let params = Checkpoint::load(run.path(CHECKPOINT)).unwrap().params;
    for f in run.world.facilities.clone() {
        let rec = run
            .dispatch(f.location, f.category, &params)
            .unwrap()
            .unwrap();
        assert_eq!(rec.facility_id, f.id);
        assert_eq!((rec.travel_time, rec.delta), (0.0, 0.0));
    }
}

#[test]
fn dispatch_matches_the_atlas_argmin() {
    let t = trained();
    let run = Run::open(cfg(TOY), &t.root, false).unwrap();
    let params = Checkpoint::load(run.path(CHECKPOINT)).unwrap().params;
    let atlas = run.load_atlas().unwrap();
    let sets = run.load_incidents().unwrap();
    for inc in &sets.challenge {
        let ep = Episode::for_incident(inc, &atlas, &run.cfg.env.norms).unwrap();
        let rec = run
            .dispatch(run.world.graph.point(inc.node), inc.category, &params)
            .unwrap();
        match (ep.best, rec) {
            (Some(best), Some(rec)) => {
                assert_eq!(rec.best_time, best.t_star);
                assert_eq!(rec.travel_time, best.t_star);
            }
            (None, None) => {}
            other => panic!("{}: {other:?}", inc.id),
        }
    }
}

// A graph node that no incident snapped to is routed on demand.
#[test]
fn dispatch_off_atlas_node_uses_an_on_demand_row() {
    let t = trained();
    let run = Run::open(cfg(TOY), &t.root, false).unwrap();
    let params = Checkpoint::load(run.path(CHECKPOINT)).unwrap().params;
    let atlas = run.load_atlas().unwrap();
    let node = (0..run.world.graph.node_count())
        .find(|&v| atlas.row_index(v).is_none())
        .unwrap();
    let rec = run
        .dispatch(run.world.graph.point(node), Category::Security, &params)
        .unwrap()
        .unwrap();
    assert_eq!(rec.node_id, run.world.graph.node_id(node));
    assert!(rec.delta >= 0.0);
}

#[test]
fn unreachable_category_gives_no_recommendation() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{QUICK}omit_facilities = hosp-a hosp-b hosp-c\n");
    let (run, _) = run_pipeline(cfg(&text), dir.path().join("r"), false).unwrap();
    let params = Checkpoint::load(run.path(CHECKPOINT)).unwrap().params;
    let p = run.world.graph.point(0);
    assert!(run
        .dispatch(p, Category::Healthcare, &params)
        .unwrap()
        .is_none());
    assert!(run
        .dispatch(p, Category::FireDisaster, &params)
        .unwrap()
        .is_some());
}

#[test]
fn existing_output_is_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("r");
    run_pipeline(cfg(QUICK), &root, false).unwrap();
    let again = run_pipeline(cfg(QUICK), &root, false);
    assert!(matches!(again, Err(Error::Refused(_))));
    assert!(again.err().unwrap().is_input_error());
    let (run, _) = run_pipeline(cfg(QUICK), &root, true).unwrap();
    assert!(run.manifest().verify(&root).is_empty());
}

#[test]
fn different_config_is_refused_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("r");
    run_pipeline(cfg(QUICK), &root, false).unwrap();
    let other = cfg(&QUICK.replace("seed = 3", "seed = 4"));
    assert!(matches!(
        Run::open(other, &root, false),
        Err(Error::Refused(_))
    ));
}

#[test]
fn manifest_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("r");
    let (run, _) = run_pipeline(cfg(QUICK), &root, false).unwrap();
    let on_disk = Manifest::load(&root).unwrap();
    assert_eq!(on_disk.stable_hashes(), run.manifest().stable_hashes());
    assert!(on_disk.verify(&root).is_empty());
    std::fs::write(root.join(ATLAS_CSV), "tampered\n").unwrap();
    assert_eq!(on_disk.verify(&root), vec![ATLAS_CSV.to_string()]);
}

// The world files a barrier run writes reproduce it when loaded as files.
#[test]
fn exported_world_files_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("barrier");
    run_pipeline(cfg(QUICK), &first, false).unwrap();
    let files = QUICK.replace(
        "world = barrier",
        &format!(
            "world = files\ngraph = {}\nfacilities = {}\nboundary = {}\nregions = {}",
            first.join(WORLD_GRAPH).display(),
            first.join(WORLD_FACILITIES).display(),
            first.join(WORLD_BOUNDARY).display(),
            first.join(WORLD_REGIONS).display()
        ),
    );
    let centers: String = barrier_world(&BarrierWorldConfig::default())
        .unwrap()
        .centers
        .iter()
        .map(|c| {
            format!(
                "\npopulation_center = {} {} {} {}",
                c.center.lon, c.center.lat, c.weight, c.sigma
            )
        })
        .collect();
    let files = files + &centers + "\n";
    let second = dir.path().join("files");
    run_pipeline(cfg(&files), &second, false).unwrap();
    for rel in [
        ATLAS_CSV,
        "incidents/challenge.geojson",
        "reports/assessment.csv",
    ] {
        assert_eq!(
            std::fs::read(first.join(rel)).unwrap(),
            std::fs::read(second.join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn missing_seed_fails_before_any_work() {
    let err = RunConfig::parse("world = barrier\n", Path::new("."), None).unwrap_err();
    assert!(err.to_string().contains("seed"));
    assert!(err.is_input_error());
}
