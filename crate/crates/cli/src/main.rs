use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dispatch_core::agent::Checkpoint;
use dispatch_core::config::RunConfig;
use dispatch_core::eval::summary_text;
use dispatch_core::geo::{Category, GeoPoint};
use dispatch_core::par;
use dispatch_core::pipeline::{run_pipeline, PlanSummary, Run};
use dispatch_core::policy::ServiceGrade;
use dispatch_core::Error;

const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_UNSOLVABLE: u8 = 3;

/// Emergency dispatch: travel-time atlas, learned dispatch policy and
/// service-level planning.
#[derive(Parser)]
#[command(name = "dispatch", version)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "dispatch.conf")]
    config: PathBuf,
    /// Overrides the `seed` key of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for the data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training, challenge and probe incidents.
    GenIncidents,
    /// Precompute incident-to-facility travel times.
    BuildAtlas {
        /// Extra incident GeoJSON files whose nodes get atlas rows.
        #[arg(long)]
        incidents: Vec<PathBuf>,
    },
    /// Report connected components and orphaned facilities.
    AuditGraph,
    /// Train the dispatch policy.
    Train,
    /// Score the trained policy, the nearest-neighbor baseline and the oracle on the challenge set.
    Evaluate,
    /// Recommend a facility for one incident.
    Dispatch {
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
        /// 0-3 or healthcare, fire, security, transport.
        #[arg(long)]
        category: Category,
        /// Checkpoint to use instead of the run's model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Grade every region and category.
    Assess,
    /// Propose new facility sites for flagged regions.
    Plan,
    /// gen-incidents, build-atlas, audit-graph, train, evaluate, assess, plan.
    Pipeline,
}

enum Failure {
    Error(Error),
    Unsolvable(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn print_grades(grades: &[ServiceGrade]) {
    for g in grades {
        let t = g
            .mean_best_time
            .map_or_else(|| "-".into(), |t| format!("{t:.2} min"));
        println!(
            "  {:<12} {:<10} {:<10} mean {t:<12} coverage {:.2}",
            g.region_id,
            g.category.name(),
            g.grade.name(),
            g.coverage
        );
    }
}

fn print_plan(p: &PlanSummary) {
    println!(
        "plan: {} new site(s), accepted: {}",
        p.plan.n_new(),
        p.plan.is_accepted()
    );
    for e in p
        .plan
        .entries
        .iter()
        .filter(|e| e.grade_before.is_flagged())
    {
        println!(
            "  {} {}: {} -> {} with {} site(s), {}",
            e.region_id,
            e.category.name(),
            e.grade_before.name(),
            e.grade_after.name(),
            e.n_new(),
            e.status.name()
        );
    }
    println!(
        "rebuild check: max time_after gap {:e} min",
        p.max_time_after_gap
    );
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        par::set_threads(n);
    }
    let cfg = RunConfig::load(&cli.config, cli.seed)?;
    if let Command::Pipeline = cli.command {
        let (run, s) = run_pipeline(cfg, &cli.out, cli.force)?;
        println!(
            "components: {}, orphaned facilities: {}",
            s.connectivity.component_count,
            s.connectivity.orphaned_facility_ids.len()
        );
        println!(
            "trained {} epochs, rolling reward {}",
            s.training_epochs,
            s.final_rolling_reward
                .map_or_else(|| "-".into(), |r| format!("{r:.4}"))
        );
        let e = &s.evaluation;
        print!("{}", summary_text(&[&e.agent, &e.baseline, &e.oracle]));
        println!("grades:");
        print_grades(&s.grades);
        print_plan(&s.plan);
        println!("artifacts in {}", run.root.display());
        return Ok(());
    }

    let mut run = Run::open(cfg, &cli.out, cli.force)?;
    match cli.command {
        Command::GenIncidents => {
            let sets = run.gen_incidents()?;
            let probes: usize = sets.probes.iter().map(|r| r.probes.len()).sum();
            println!(
                "{} training, {} challenge, {probes} probe incidents",
                sets.training.len(),
                sets.challenge.len()
            );
        }
        Command::BuildAtlas { incidents } => {
            let atlas = run.build_atlas(&incidents)?;
            println!(
                "atlas: {} incident nodes x {} facilities at {} km/h",
                atlas.n_rows(),
                atlas.n_facilities(),
                atlas.speed_kmh()
            );
        }
        Command::AuditGraph => {
            let r = run.audit_graph()?;
            println!(
                "components: {} (sizes {:?})",
                r.component_count, r.component_sizes
            );
            println!("orphaned facilities: {:?}", r.orphaned_facility_ids);
        }
        Command::Train => {
            let out = run.train()?;
            let last = out.curve.rolling_mean_reward.last().copied();
            println!(
                "trained {} epochs, rolling reward {}",
                out.curve.len(),
                last.map_or_else(|| "-".into(), |r| format!("{r:.4}"))
            );
        }
        Command::Evaluate => {
            let e = run.evaluate()?;
            print!("{}", summary_text(&[&e.agent, &e.baseline, &e.oracle]));
            println!(
                "attention p99 latency: {:.4} ms",
                e.agent_latency.p99_ms.unwrap_or(f64::NAN)
            );
        }
        Command::Dispatch {
            lon,
            lat,
            category,
            checkpoint,
        } => {
            let location = GeoPoint::new(lon, lat)?;
            let params = match checkpoint {
                Some(path) => Checkpoint::load(path)?.params,
                None => run.load_params()?,
            };
            match run.dispatch(location, category, &params)? {
                Some(r) => println!(
                    "facility={} node={} travel_time_min={} best_time_min={} delta_min={} latency_ms={:.4}",
                    r.facility_id, r.node_id, r.travel_time, r.best_time, r.delta, r.elapsed_ms
                ),
                None => return Err(Failure::Unsolvable(format!("no reachable facility of category {category} from ({lon}, {lat})"))),
            }
        }
        Command::Assess => print_grades(&run.assess()?),
        Command::Plan => print_plan(&run.plan()?),
        Command::Pipeline => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unsolvable(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_UNSOLVABLE)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            })
        }
    }
}
