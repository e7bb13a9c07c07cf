//! Scoring dispatch policies against the atlas ground truth.
//!
//! A choice is optimal when its travel time equals the best feasible time,
//! so tied facilities all count. Unsolvable incidents are counted but kept
//! out of rates and deltas. A choice that lands on a facility the incident
//! cannot reach is charged the worst feasible delta for that incident.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::agent::{forward, greedy_action, PolicyParams};
use crate::atlas::{Minutes, TravelTimeAtlas};
use crate::env::{EnvConfig, Episode};
use crate::error::{Error, Result};
use crate::geo::{Category, Facility};
use crate::par;
use crate::scenario::Incident;

/// Rule printed in every report header.
pub const PENALTY_RULE: &str =
    "choices of unreachable facilities are charged (worst feasible time - best feasible time)";

/// Everything a policy may look at for one incident.
pub struct DispatchContext<'a> {
    pub incident: &'a Incident,
    pub episode: &'a Episode,
    pub facilities: &'a [Facility],
}

pub trait DispatchPolicy: Sync {
    fn name(&self) -> &str;

    /// Facility index to dispatch, or `None` when the policy declines.
    fn choose(&self, ctx: &DispatchContext<'_>) -> Result<Option<usize>>;
}

/// Geographically closest facility of the incident's category, ignoring the
/// road network. Ties go to the lowest index.
pub fn nearest_neighbor_baseline(incident: &Incident, facilities: &[Facility]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, f) in facilities.iter().enumerate() {
        if f.category != incident.category {
            continue;
        }
        let d = incident.location.haversine_m(&f.location);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
        .ok_or(Error::NoCategoryMatch(incident.category))
}

pub struct NearestNeighbor;

impl DispatchPolicy for NearestNeighbor {
    fn name(&self) -> &str {
        "nearest-neighbor"
    }

    fn choose(&self, ctx: &DispatchContext<'_>) -> Result<Option<usize>> {
        match nearest_neighbor_baseline(ctx.incident, ctx.facilities) {
            Ok(j) => Ok(Some(j)),
            Err(Error::NoCategoryMatch(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// The atlas argmin itself.
pub struct Oracle;

impl DispatchPolicy for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn choose(&self, ctx: &DispatchContext<'_>) -> Result<Option<usize>> {
        Ok(ctx.episode.best.map(|b| b.facility_index))
    }
}

/// Greedy decoding of a trained attention policy.
pub struct AttentionPolicy {
    pub params: PolicyParams,
}

impl DispatchPolicy for AttentionPolicy {
    fn name(&self) -> &str {
        "attention"
    }

    fn choose(&self, ctx: &DispatchContext<'_>) -> Result<Option<usize>> {
        if !ctx.episode.state.is_solvable() {
            return Ok(None);
        }
        Ok(Some(greedy_action(&forward(
            &self.params,
            &ctx.episode.state,
        )?)))
    }
}

/// How one dispatch was scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Optimal,
    Suboptimal,
    /// The chosen facility cannot be reached (or has the wrong category).
    Penalized,
    /// Solvable incident but the policy made no choice; charged like a penalty.
    NoChoice,
    Unsolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchRecord {
    pub incident_id: String,
    pub category: Category,
    pub chosen: Option<usize>,
    pub t_chosen: Option<Minutes>,
    pub t_star: Option<Minutes>,
    pub delta: Option<Minutes>,
    pub outcome: Outcome,
}

/// Scores one choice against the episode's ground truth.
pub fn score(
    incident: &Incident,
    episode: &Episode,
    facilities: &[Facility],
    chosen: Option<usize>,
) -> DispatchRecord {
    let mut rec = DispatchRecord {
        incident_id: incident.id.clone(),
        category: incident.category,
        chosen,
        t_chosen: chosen.and_then(|j| episode.times.get(j).copied().flatten()),
        t_star: episode.best.map(|b| b.t_star),
        delta: None,
        outcome: Outcome::Unsolvable,
    };
    let Some(t_star) = rec.t_star else { return rec };
    let worst = episode
        .times
        .iter()
        .zip(&episode.state.mask)
        .filter_map(|(t, &m)| if m { *t } else { None })
        .fold(t_star, f64::max);
    let feasible = chosen.filter(|&j| j < facilities.len() && episode.state.mask[j]);
    match (chosen, feasible) {
        (Some(_), Some(_)) => {
            let t = rec.t_chosen.expect("feasible choice has a time");
            rec.delta = Some(t - t_star);
            rec.outcome = if t == t_star {
                Outcome::Optimal
            } else {
                Outcome::Suboptimal
            };
        }
        (Some(_), None) => {
            rec.delta = Some(worst - t_star);
            rec.outcome = Outcome::Penalized;
        }
        (None, _) => {
            rec.delta = Some(worst - t_star);
            rec.outcome = Outcome::NoChoice;
        }
    }
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Stats {
    pub n_total: usize,
    pub n_solvable: usize,
    pub n_optimal: usize,
    pub n_penalized: usize,
    /// Percent of solvable incidents; `None` when there are none.
    pub optimality_rate: Option<f64>,
    pub avg_inefficiency_delta: Option<Minutes>,
    pub avg_best_possible_time: Option<Minutes>,
}

impl Stats {
    fn from_records<'a>(records: impl IntoIterator<Item = &'a DispatchRecord>) -> Self {
        let mut s = Stats::default();
        let mut delta_sum = 0.0;
        let mut best_sum = 0.0;
        for r in records {
            s.n_total += 1;
            let (Some(t_star), Some(delta)) = (r.t_star, r.delta) else {
                continue;
            };
            s.n_solvable += 1;
            delta_sum += delta;
            best_sum += t_star;
            match r.outcome {
                Outcome::Optimal => s.n_optimal += 1,
                Outcome::Penalized | Outcome::NoChoice => s.n_penalized += 1,
                _ => {}
            }
        }
        if s.n_solvable > 0 {
            let n = s.n_solvable as f64;
            s.optimality_rate = Some(100.0 * s.n_optimal as f64 / n);
            s.avg_inefficiency_delta = Some(delta_sum / n);
            s.avg_best_possible_time = Some(best_sum / n);
        }
        s
    }

    /// Optimal dispatches as a percent of every incident, solvable or not.
    pub fn optimality_rate_all(&self) -> Option<f64> {
        (self.n_total > 0).then(|| 100.0 * self.n_optimal as f64 / self.n_total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub overall: Stats,
    pub per_category: [Stats; Category::COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub log: Vec<DispatchRecord>,
}

/// Evaluates `policy` on every incident, in parallel across incidents.
pub fn evaluate(
    policy: &dyn DispatchPolicy,
    incidents: &[Incident],
    atlas: &TravelTimeAtlas,
    env: &EnvConfig,
) -> Result<Evaluation> {
    let log = par::map(incidents, |inc| {
        let episode = Episode::for_incident(inc, atlas, &env.norms)?;
        let ctx = DispatchContext {
            incident: inc,
            episode: &episode,
            facilities: atlas.facilities(),
        };
        let chosen = policy.choose(&ctx)?;
        Ok(score(inc, &episode, atlas.facilities(), chosen))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: report_from_log(policy.name(), &log),
        log,
    })
}

pub fn report_from_log(policy: &str, log: &[DispatchRecord]) -> EvaluationReport {
    EvaluationReport {
        policy: policy.to_string(),
        overall: Stats::from_records(log),
        per_category: Category::ALL
            .map(|c| Stats::from_records(log.iter().filter(|r| r.category == c))),
    }
}

/// Expected optimality rate (percent) and delta of a stochastic policy over
/// the solvable incidents. `probs` gives a distribution over facilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedScore {
    pub n_solvable: usize,
    pub optimality_rate: Option<f64>,
    pub avg_inefficiency_delta: Option<Minutes>,
}

pub fn evaluate_expected(
    probs: impl Fn(&Episode) -> Result<Vec<f64>>,
    incidents: &[Incident],
    atlas: &TravelTimeAtlas,
    env: &EnvConfig,
) -> Result<ExpectedScore> {
    let mut n = 0usize;
    let mut rate = 0.0;
    let mut delta = 0.0;
    for inc in incidents {
        let episode = Episode::for_incident(inc, atlas, &env.norms)?;
        if episode.best.is_none() {
            continue;
        }
        n += 1;
        for (j, p) in probs(&episode)?.into_iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let rec = score(inc, &episode, atlas.facilities(), Some(j));
            rate += p * (rec.outcome == Outcome::Optimal) as u8 as f64;
            delta += p * rec.delta.expect("solvable incident has a delta");
        }
    }
    Ok(ExpectedScore {
        n_solvable: n,
        optimality_rate: (n > 0).then(|| 100.0 * rate / n as f64),
        avg_inefficiency_delta: (n > 0).then(|| delta / n as f64),
    })
}

/// Uniform distribution over the feasible facilities.
pub fn uniform_feasible(episode: &Episode) -> Result<Vec<f64>> {
    let k = episode.state.n_feasible();
    if k == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(episode
        .state
        .mask
        .iter()
        .map(|&m| if m { 1.0 / k as f64 } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencyStats {
    pub n: usize,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall-clock per recommendation: state construction, policy, choice. Runs
/// one incident at a time so measurements do not compete for cores.
pub fn latency_bench(
    policy: &dyn DispatchPolicy,
    incidents: &[Incident],
    atlas: &TravelTimeAtlas,
    env: &EnvConfig,
) -> Result<LatencyStats> {
    let mut samples = Vec::with_capacity(incidents.len());
    for inc in incidents {
        let start = Instant::now();
        let episode = Episode::for_incident(inc, atlas, &env.norms)?;
        let ctx = DispatchContext {
            incident: inc,
            episode: &episode,
            facilities: atlas.facilities(),
        };
        std::hint::black_box(policy.choose(&ctx)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    if samples.is_empty() {
        return Ok(LatencyStats::default());
    }
    samples.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        n: samples.len(),
        p50_ms: Some(percentile(&samples, 0.50)),
        p99_ms: Some(percentile(&samples, 0.99)),
        max_ms: samples.last().copied(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per report: overall first, then each category.
pub fn write_report_csv<W: Write>(reports: &[&EvaluationReport], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "policy",
        "scope",
        "n_total",
        "n_solvable",
        "n_optimal",
        "n_penalized",
        "optimality_rate_pct",
        "optimality_rate_all_pct",
        "avg_inefficiency_delta_min",
        "avg_best_possible_time_min",
    ])?;
    for r in reports {
        let scopes = std::iter::once(("all", &r.overall)).chain(
            Category::ALL
                .iter()
                .map(|c| (c.name(), &r.per_category[c.index()])),
        );
        for (scope, s) in scopes {
            w.write_record([
                r.policy.clone(),
                scope.to_string(),
                s.n_total.to_string(),
                s.n_solvable.to_string(),
                s.n_optimal.to_string(),
                s.n_penalized.to_string(),
                opt(s.optimality_rate),
                opt(s.optimality_rate_all()),
                opt(s.avg_inefficiency_delta),
                opt(s.avg_best_possible_time),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))?;
    Ok(())
}

/// Per-incident dispatch log.
pub fn write_dispatch_log<W: Write>(
    log: &[DispatchRecord],
    facilities: &[Facility],
    out: W,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "incident_id",
        "category",
        "chosen_facility",
        "t_chosen_min",
        "t_star_min",
        "delta_min",
        "outcome",
    ])?;
    for r in log {
        let outcome = serde_json::to_value(r.outcome)?;
        w.write_record([
            r.incident_id.clone(),
            r.category.name().to_string(),
            r.chosen
                .map_or_else(String::new, |j| facilities[j].id.clone()),
            opt(r.t_chosen),
            opt(r.t_star),
            opt(r.delta),
            outcome.as_str().unwrap_or_default().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<dispatch log>", e))?;
    Ok(())
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2} %"))
}

fn fmt_min(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2} min"))
}

/// Plain-text summary of one or more reports.
pub fn summary_text(reports: &[&EvaluationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Evaluation summary");
    let _ = writeln!(out, "Penalty rule: {PENALTY_RULE}.");
    for r in reports {
        let s = &r.overall;
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}]", r.policy);
        let _ = writeln!(
            out,
            "  incidents            {} total, {} solvable",
            s.n_total, s.n_solvable
        );
        let _ = writeln!(
            out,
            "  optimal              {} ({} of solvable, {} of all)",
            s.n_optimal,
            fmt_pct(s.optimality_rate),
            fmt_pct(s.optimality_rate_all())
        );
        let _ = writeln!(
            out,
            "  avg inefficiency     {}",
            fmt_min(s.avg_inefficiency_delta)
        );
        let _ = writeln!(
            out,
            "  avg best possible    {}",
            fmt_min(s.avg_best_possible_time)
        );
        if s.n_penalized > 0 {
            let _ = writeln!(out, "  penalized choices    {}", s.n_penalized);
        }
        for c in Category::ALL {
            let cs = &r.per_category[c.index()];
            let _ = writeln!(
                out,
                "  {:<10} {:>4} solvable  {:>9}  {:>10}",
                c.name(),
                cs.n_solvable,
                fmt_pct(cs.optimality_rate),
                fmt_min(cs.avg_inefficiency_delta)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Normalization;
    use crate::geo::GeoPoint;
    use crate::scenario::{Origin, Split};

    fn fac(id: &str, category: Category, lon: f64) -> Facility {
        Facility {
            id: id.into(),
            category,
            location: GeoPoint { lon, lat: 0.0 },
            node: 0,
        }
    }

    fn incident(category: Category) -> Incident {
        Incident {
            id: "x".into(),
            category,
            location: GeoPoint { lon: 0.0, lat: 0.0 },
            node: 0,
            split: Split::Challenge,
            origin: Origin::Uniform,
        }
    }

    #[test]
    fn baseline_picks_closest_matching() {
        let f = vec![
            fac("a", Category::Security, 0.001),
            fac("b", Category::Healthcare, 0.002),
            fac("c", Category::Healthcare, -0.002),
            fac("d", Category::Healthcare, 0.0005),
        ];
        assert_eq!(
            nearest_neighbor_baseline(&incident(Category::Healthcare), &f).unwrap(),
            3
        );
        // b and c are equidistant
        assert_eq!(
            nearest_neighbor_baseline(&incident(Category::Healthcare), &f[..3]).unwrap(),
            1
        );
        assert!(matches!(
            nearest_neighbor_baseline(&incident(Category::Transport), &f),
            Err(Error::NoCategoryMatch(Category::Transport))
        ));
    }

    #[test]
    fn scoring_rules() {
        let f = vec![
            fac("a", Category::Healthcare, 0.0),
            fac("b", Category::Healthcare, 0.0),
            fac("c", Category::Healthcare, 0.0),
            fac("d", Category::Security, 0.0),
        ];
        let row = [Some(10.0), Some(4.0), None, Some(1.0)];
        let ep = Episode::new(Category::Healthcare, &row, &f, &Normalization::default());
        let inc = incident(Category::Healthcare);
        let best = score(&inc, &ep, &f, Some(1));
        assert_eq!((best.outcome, best.delta), (Outcome::Optimal, Some(0.0)));
        let worse = score(&inc, &ep, &f, Some(0));
        assert_eq!(
            (worse.outcome, worse.delta),
            (Outcome::Suboptimal, Some(6.0))
        );
        let unreachable = score(&inc, &ep, &f, Some(2));
        assert_eq!(
            (unreachable.outcome, unreachable.delta),
            (Outcome::Penalized, Some(6.0))
        );
        let wrong_category = score(&inc, &ep, &f, Some(3));
        assert_eq!(wrong_category.outcome, Outcome::Penalized);
        let none = score(&inc, &ep, &f, None);
        assert_eq!(none.outcome, Outcome::NoChoice);
    }

    #[test]
    fn empty_inputs_do_not_divide_by_zero() {
        let r = report_from_log("p", &[]);
        assert_eq!(r.overall.optimality_rate, None);
        assert_eq!(r.overall.optimality_rate_all(), None);
        assert!(summary_text(&[&r]).contains("n/a"));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }
}
