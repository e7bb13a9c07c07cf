//! Governance: service zones, region grading and intervention planning.

mod assess;
mod plan;
mod zones;

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geo::{regions_to_geojson, RegionBoundary};

pub use assess::{
    assess, generate_probes, grade_times, summarize, Grade, GradeThresholds, RegionProbes,
    ServiceGrade,
};
pub use plan::{
    plan_interventions, region_candidates, InterventionPlan, PlanStatus, ProposedSite, RegionPlan,
    DEFAULT_CANDIDATE_CAP,
};
pub use zones::{cluster_zones, wcss, ZoneAssignment, MAX_ITERATIONS};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_assessment_csv<W: Write>(grades: &[ServiceGrade], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "region_id",
        "category",
        "mean_best_time_min",
        "coverage",
        "grade",
    ])?;
    for g in grades {
        w.write_record([
            g.region_id.clone(),
            g.category.name().to_string(),
            opt(g.mean_best_time),
            g.coverage.to_string(),
            g.grade.name().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<assessment csv>", e))?;
    Ok(())
}

/// Region polygons with `grade_<category>`, `mean_best_time_<category>` and
/// `coverage_<category>` properties.
pub fn assessment_geojson(regions: &[RegionBoundary], grades: &[ServiceGrade]) -> Value {
    regions_to_geojson(regions, |r| {
        let mut props = Map::new();
        for g in grades.iter().filter(|g| g.region_id == r.region_id) {
            let c = g.category.name();
            props.insert(format!("grade_{c}"), json!(g.grade.name()));
            props.insert(format!("mean_best_time_{c}"), json!(g.mean_best_time));
            props.insert(format!("coverage_{c}"), json!(g.coverage));
        }
        props
    })
}

/// One row per proposed site; entries without sites get one row with empty
/// site columns.
pub fn write_plan_csv<W: Write>(plan: &InterventionPlan, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "region_id",
        "category",
        "n_new",
        "site_lon",
        "site_lat",
        "time_before_min",
        "time_after_min",
        "status",
    ])?;
    for e in &plan.entries {
        let row = |lon: String, lat: String| {
            [
                e.region_id.clone(),
                e.category.name().to_string(),
                e.n_new().to_string(),
                lon,
                lat,
                opt(e.time_before),
                opt(e.time_after),
                e.status.name().to_string(),
            ]
        };
        if e.sites.is_empty() {
            w.write_record(row(String::new(), String::new()))?;
        }
        for s in &e.sites {
            w.write_record(row(s.location.lon.to_string(), s.location.lat.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io("<plan csv>", e))?;
    Ok(())
}

pub fn plan_geojson(plan: &InterventionPlan) -> Value {
    let features: Vec<Value> = plan
        .entries
        .iter()
        .flat_map(|e| {
            e.sites.iter().map(move |s| {
                json!({
                    "type": "Feature",
                    "properties": {
                        "region_id": e.region_id,
                        "category": s.category.code(),
                        "category_name": s.category.name(),
                        "node": s.node_id,
                        "time_before_min": e.time_before,
                        "time_after_min": e.time_after,
                    },
                    "geometry": {"type": "Point", "coordinates": [s.location.lon, s.location.lat]},
                })
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_zones_csv<W: Write>(zones: &ZoneAssignment, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["zone", "centroid_lon", "centroid_lat", "n_points"])?;
    for (z, (c, n)) in zones.centroids.iter().zip(zones.sizes()).enumerate() {
        w.write_record([
            z.to_string(),
            c.lon.to_string(),
            c.lat.to_string(),
            n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<zones csv>", e))?;
    Ok(())
}
