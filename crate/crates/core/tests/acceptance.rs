//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dispatch_core::agent::PolicyParams;
use dispatch_core::atlas::{build_atlas, TravelTimeAtlas};
use dispatch_core::config::RunConfig;
use dispatch_core::env::{
    build_state, reward, step, EnvConfig, Episode, Normalization, RewardParams,
};
use dispatch_core::eval::{evaluate, latency_bench, AttentionPolicy, NearestNeighbor};
use dispatch_core::geo::{Category, Facility, GeoPoint};
use dispatch_core::pipeline::run_pipeline;
use dispatch_core::policy::{
    assess, generate_probes, plan_interventions, region_candidates, Grade, GradeThresholds,
};
use dispatch_core::scenario::{generate, Incident, ScenarioConfig, Split};
use dispatch_core::trainer::{train, training_examples, Optimizer, TrainConfig};
use dispatch_core::world::{barrier_world, BarrierWorld, BarrierWorldConfig};

use common::{
    max_relative_gradient_error, oracle_time, random_gradient_instance, random_network, seeded,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn atlas_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut entries = 0;
    let mut unreachable = 0;
    for g in 0..20 {
        let net = random_network(&mut rng, 50, 150);
        let speed = [40.0, 30.0, 57.5][g % 3];
        let atlas = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, speed)
            .map_err(|e| e.to_string())?;
        for (i, &v) in atlas.incident_nodes().iter().enumerate() {
            for (j, f) in net.facilities.iter().enumerate() {
                let expected = oracle_time(&net, speed, v, f.node);
                if atlas.time(i, j) != expected {
                    return Err(format!(
                        "graph {g}: atlas {:?} vs oracle {expected:?}",
                        atlas.time(i, j)
                    ));
                }
                entries += 1;
                unreachable += expected.is_none() as usize;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!(
            "{entries} entries ({unreachable} unreachable) equal, {:.2?}",
            elapsed
        ),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (p, s, t) = random_gradient_instance(&mut rng);
        worst = worst.max(max_relative_gradient_error(&p, &s, &t));
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("max relative error {worst:.3e} over 50 instances, {elapsed:.2?}"),
    )
}

fn reward_and_state() -> Outcome {
    // linearity on exactly representable values
    let p = RewardParams { alpha: 0.25 };
    let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0]
        .iter()
        .map(|&t| (t, reward(t, 2.0, &p).unwrap()))
        .collect();
    let collinear = (pts[1].1 - pts[0].1) * (pts[2].0 - pts[0].0)
        == (pts[2].1 - pts[0].1) * (pts[1].0 - pts[0].0);
    if !collinear || pts[0].1 != 1.0 {
        return Err(format!("reward not linear: {pts:?}"));
    }

    // every row of 3 facilities with times from `values` and any categories
    let values = [None, Some(0.0), Some(2.5), Some(7.5), Some(130.0)];
    let norms = Normalization::default();
    let params = RewardParams::default();
    let mut states = 0;
    for code in 0..(values.len() * 4).pow(3) {
        let mut rest = code;
        let mut row = Vec::new();
        let mut facilities = Vec::new();
        for j in 0..3 {
            let slot = rest % (values.len() * 4);
            rest /= values.len() * 4;
            row.push(values[slot / 4]);
            facilities.push(Facility {
                id: format!("f{j}"),
                category: Category::ALL[slot % 4],
                location: GeoPoint { lon: 0.0, lat: 0.0 },
                node: 0,
            });
        }
        for cat in Category::ALL {
            states += 1;
            let s = build_state(cat, &row, &facilities, &norms);
            let ep = Episode::new(cat, &row, &facilities, &norms);
            let t_star = row
                .iter()
                .zip(&facilities)
                .filter(|(t, f)| t.is_some() && f.category == cat)
                .map(|(t, _)| t.unwrap())
                .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))));
            for j in 0..3 {
                let feasible = row[j].is_some() && facilities[j].category == cat;
                if s.mask[j] != feasible {
                    return Err(format!("mask mismatch at {row:?} / {cat:?}"));
                }
                if !feasible {
                    continue;
                }
                let is_argmin = row[j] == t_star;
                if (s.features[j][2] == 0.0) != is_argmin {
                    return Err(format!("delta_norm at {row:?} / {cat:?} facility {j}"));
                }
                let r = step(&ep, j, &params).unwrap().reward;
                if (r == 1.0) != is_argmin {
                    return Err(format!("reward {r} at {row:?} / {cat:?} facility {j}"));
                }
            }
        }
    }
    Ok(format!(
        "linearity exact; {states} states checked exhaustively"
    ))
}

struct Trained {
    atlas: TravelTimeAtlas,
    challenge: Vec<Incident>,
    params: PolicyParams,
}

const TRAIN_SEED: u64 = 7;

fn barrier_setup() -> (BarrierWorld, Vec<Incident>, Vec<Incident>, TravelTimeAtlas) {
    let world = barrier_world(&BarrierWorldConfig::default()).unwrap();
    let sample = |n, seed, split| {
        generate(
            &ScenarioConfig::balanced(n, seed),
            &world.centers,
            &world.boundary,
            &world.graph,
            split,
        )
        .unwrap()
    };
    let training = sample(300, 1, Split::Training);
    let challenge = sample(100, 2, Split::Challenge);
    let nodes: Vec<_> = training.iter().chain(&challenge).map(|i| i.node).collect();
    let atlas = build_atlas(&world.graph, &nodes, &world.facilities, 40.0).unwrap();
    (world, training, challenge, atlas)
}

fn convergence(slot: &mut Option<Trained>) -> Outcome {
    let start = Instant::now();
    let (_, training, challenge, atlas) = barrier_setup();
    let env = EnvConfig::default();
    let examples = training_examples(&training, &atlas, &env).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 2000,
        optimizer: Optimizer::Adam,
        seed: TRAIN_SEED,
        stop_at_reward: Some(0.99),
        ..TrainConfig::default()
    };
    let out = train(&examples, &env, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let reached = out.curve.first_epoch_reaching(0.99);
    let last = out
        .curve
        .rolling_mean_reward
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    *slot = Some(Trained {
        atlas,
        challenge,
        params: out.params,
    });
    check(
        reached.is_some_and(|e| e < 2000) && elapsed < Duration::from_secs(600),
        format!(
            "rolling-50 reward {last:.4} at epoch {} (first >= 0.99: {reached:?}), {elapsed:.2?}",
            out.curve.len()
        ),
    )
}

fn generalization(t: &Trained) -> Outcome {
    let policy = AttentionPolicy {
        params: t.params.clone(),
    };
    let r = evaluate(&policy, &t.challenge, &t.atlas, &EnvConfig::default())
        .map_err(|e| e.to_string())?
        .report;
    let rate = r.overall.optimality_rate.unwrap_or(0.0);
    let delta = r.overall.avg_inefficiency_delta.unwrap_or(f64::INFINITY);
    check(
        r.overall.n_total == 100 && rate >= 99.0 && delta <= 0.05,
        format!(
            "{} held-out incidents, optimality {rate:.2} %, avg delta {delta:.4} min",
            r.overall.n_total
        ),
    )
}

fn baseline_separation(t: &Trained) -> Outcome {
    let env = EnvConfig::default();
    let agent = evaluate(
        &AttentionPolicy {
            params: t.params.clone(),
        },
        &t.challenge,
        &t.atlas,
        &env,
    )
    .map_err(|e| e.to_string())?
    .report;
    let base = evaluate(&NearestNeighbor, &t.challenge, &t.atlas, &env)
        .map_err(|e| e.to_string())?
        .report;
    let (a, b) = (
        agent.overall.optimality_rate.unwrap_or(0.0),
        base.overall.optimality_rate.unwrap_or(100.0),
    );
    let delta = base.overall.avg_inefficiency_delta.unwrap_or(0.0);
    check(
        b <= 90.0 && b < a && delta > 0.0,
        format!("baseline {b:.2} % (avg delta {delta:.3} min) vs agent {a:.2} %"),
    )
}

fn latency(t: &Trained) -> Outcome {
    let policy = AttentionPolicy {
        params: t.params.clone(),
    };
    let l = latency_bench(&policy, &t.challenge, &t.atlas, &EnvConfig::default())
        .map_err(|e| e.to_string())?;
    let p99 = l.p99_ms.unwrap_or(f64::INFINITY);
    check(
        p99 < 1000.0,
        format!(
            "p50 {:.4} ms, p99 {p99:.4} ms over {} dispatches",
            l.p50_ms.unwrap_or(f64::NAN),
            l.n
        ),
    )
}

fn intervention_closed_loop() -> Outcome {
    let mut layout = BarrierWorldConfig {
        crossings: vec![],
        ..Default::default()
    };
    layout.facilities.retain(|f| f.0 != "hosp-b");
    let world = barrier_world(&layout).unwrap();
    let thresholds = GradeThresholds::default();
    let probes =
        generate_probes(&world.regions, &world.graph, 20, 31).map_err(|e| e.to_string())?;
    let nodes: Vec<_> = probes
        .iter()
        .flat_map(|r| r.probes.iter().map(|p| p.node))
        .collect();
    let atlas = build_atlas(&world.graph, &nodes, &world.facilities, 40.0).unwrap();
    let before = assess(&probes, &atlas, &thresholds).map_err(|e| e.to_string())?;
    let red: Vec<_> = before.iter().filter(|g| g.grade == Grade::Red).collect();
    let flagged: Vec<_> = before.iter().filter(|g| g.grade.is_flagged()).collect();
    if red.len() != 1 || flagged.len() != 1 {
        return Err(format!(
            "fixture should have exactly one flagged (Red) entry, got {} flagged",
            flagged.len()
        ));
    }

    let network = dispatch_core::atlas::ReverseNetwork::new(&world.graph, 40.0).unwrap();
    let candidates: Vec<_> = world
        .regions
        .iter()
        .map(|r| region_candidates(&world.graph, r, 500, 0))
        .collect();
    let plan = plan_interventions(
        &world.graph,
        &network,
        &atlas,
        &probes,
        &candidates,
        &before,
        &thresholds,
    )
    .map_err(|e| e.to_string())?;
    let mut augmented = world.facilities.clone();
    augmented.extend(plan.new_facilities());
    let rebuilt = build_atlas(&world.graph, &nodes, &augmented, 40.0).unwrap();
    let after = assess(&probes, &rebuilt, &thresholds).map_err(|e| e.to_string())?;

    let mut worst_gap: f64 = 0.0;
    for (e, g) in plan.entries.iter().zip(&after) {
        if e.grade_before.is_flagged() && g.grade != Grade::Green {
            return Err(format!(
                "{} {} graded {:?} after the plan",
                g.region_id,
                g.category.name(),
                g.grade
            ));
        }
        match (e.time_after, g.mean_best_time) {
            (Some(a), Some(b)) => worst_gap = worst_gap.max((a - b).abs()),
            (None, None) => {}
            other => return Err(format!("time_after mismatch {other:?}")),
        }
    }
    let entry = plan
        .entries
        .iter()
        .find(|e| e.grade_before == Grade::Red)
        .unwrap();
    check(
        plan.n_new() >= 1 && worst_gap <= 1e-9,
        format!(
            "{} {}: {} site(s), red -> {:?}, time_after {:.3} min, max gap to rebuild {worst_gap:e}",
            entry.region_id,
            entry.category.name(),
            plan.n_new(),
            entry.grade_after,
            entry.time_after.unwrap_or(f64::NAN)
        ),
    )
}

const TOY_CONFIG: &str = "seed = 7
world = barrier
n_training = 300
n_challenge = 100
optimizer = adam
epochs = 2000
stop_at_reward = 0.99
probes_per_category = 10
";

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hashes = Vec::new();
    for name in ["first", "second"] {
        let cfg = RunConfig::parse(TOY_CONFIG, Path::new("."), None).map_err(|e| e.to_string())?;
        let (run, _) =
            run_pipeline(cfg, dir.path().join(name), false).map_err(|e| e.to_string())?;
        let broken = run.manifest().verify(&run.root);
        if !broken.is_empty() {
            return Err(format!("manifest hashes do not verify: {broken:?}"));
        }
        hashes.push(run.manifest().stable_hashes());
    }
    let required = [
        "atlas/atlas.csv",
        "incidents/training.geojson",
        "incidents/challenge.geojson",
        "model/checkpoint.json",
        "reports/evaluation.csv",
    ];
    if let Some(missing) = required.iter().find(|r| !hashes[0].contains_key(**r)) {
        return Err(format!("artifact {missing} not produced"));
    }
    let differing: Vec<_> = hashes[0]
        .iter()
        .filter(|(k, v)| hashes[1].get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    check(
        differing.is_empty() && hashes[0].len() == hashes[1].len(),
        format!(
            "{} artifacts identical across two runs (differing: {differing:?})",
            hashes[0].len()
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut trained = None;
    let mut ok = true;
    ok &= run("1 atlas oracle equivalence", atlas_oracle);
    ok &= run("2 gradient correctness", gradient_check);
    ok &= run("3 reward and state properties", reward_and_state);
    ok &= run("4 convergence on the barrier world", || {
        convergence(&mut trained)
    });
    match &trained {
        Some(t) => {
            ok &= run("5 generalization to held-out incidents", || {
                generalization(t)
            });
            ok &= run("6 baseline separation", || baseline_separation(t));
            ok &= run("7 dispatch latency", || latency(t));
        }
        None => {
            for name in [
                "5 generalization to held-out incidents",
                "6 baseline separation",
                "7 dispatch latency",
            ] {
                ok &= run(name, || Err("no trained policy".into()));
            }
        }
    }
    ok &= run("8 intervention closed loop", intervention_closed_loop);
    ok &= run("9 pipeline determinism", determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
