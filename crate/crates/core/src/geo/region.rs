use std::path::Path;

use serde_json::{json, Value};

use super::GeoPoint;
use crate::error::{Error, Result};

/// Polygonal region (outer ring plus optional holes). Rings are closed and
/// normalized so the outer ring is counter-clockwise and holes clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBoundary {
    pub region_id: String,
    outer: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

fn signed_area(ring: &[GeoPoint]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat)
        .sum::<f64>()
        / 2.0
}

fn check_ring(ring: &[GeoPoint]) -> Result<()> {
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err(Error::DegenerateRing { points: ring.len() });
    }
    Ok(())
}

fn oriented(mut ring: Vec<GeoPoint>, ccw: bool) -> Vec<GeoPoint> {
    if (signed_area(&ring) > 0.0) != ccw {
        ring.reverse();
    }
    ring
}

impl RegionBoundary {
    pub fn new(
        region_id: impl Into<String>,
        outer: Vec<GeoPoint>,
        holes: Vec<Vec<GeoPoint>>,
    ) -> Result<Self> {
        check_ring(&outer)?;
        for h in &holes {
            check_ring(h)?;
        }
        Ok(Self {
            region_id: region_id.into(),
            outer: oriented(outer, true),
            holes: holes.into_iter().map(|h| oriented(h, false)).collect(),
        })
    }

    /// Axis-aligned rectangle, convenient for synthetic worlds.
    pub fn rectangle(region_id: impl Into<String>, min: GeoPoint, max: GeoPoint) -> Result<Self> {
        let ring = vec![
            min,
            GeoPoint {
                lon: max.lon,
                lat: min.lat,
            },
            max,
            GeoPoint {
                lon: min.lon,
                lat: max.lat,
            },
            min,
        ];
        Self::new(region_id, ring, Vec::new())
    }

    pub fn outer(&self) -> &[GeoPoint] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    /// `(min, max)` corners of the outer ring's bounding box.
    pub fn bbox(&self) -> (GeoPoint, GeoPoint) {
        let mut min = self.outer[0];
        let mut max = self.outer[0];
        for p in &self.outer {
            min.lon = min.lon.min(p.lon);
            min.lat = min.lat.min(p.lat);
            max.lon = max.lon.max(p.lon);
            max.lat = max.lat.max(p.lat);
        }
        (min, max)
    }

    fn rings(&self) -> impl Iterator<Item = &[GeoPoint]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        let on_boundary = self
            .rings()
            .any(|ring| ring.windows(2).any(|w| on_segment(p, &w[0], &w[1])));
        if on_boundary {
            return true;
        }
        // Even-odd crossing count over every ring handles holes directly.
        let mut inside = false;
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if (a.lat > p.lat) != (b.lat > p.lat) {
                    let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                    if p.lon < x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn to_geojson_coords(&self) -> Value {
        let ring = |r: &[GeoPoint]| Value::Array(r.iter().map(|p| json!([p.lon, p.lat])).collect());
        Value::Array(self.rings().map(ring).collect())
    }
}

fn on_segment(p: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> bool {
    const EPS: f64 = 1e-12;
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1.0);
    if cross.abs() > EPS * scale {
        return false;
    }
    p.lon >= a.lon.min(b.lon) - EPS
        && p.lon <= a.lon.max(b.lon) + EPS
        && p.lat >= a.lat.min(b.lat) - EPS
        && p.lat <= a.lat.max(b.lat) + EPS
}

/// Even-odd ray casting; points on the boundary count as inside.
pub fn point_in_region(p: &GeoPoint, region: &RegionBoundary) -> bool {
    region.contains(p)
}

fn parse_ring(v: &Value) -> Result<Vec<GeoPoint>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::GeoJson("ring must be an array of positions".into()))?;
    arr.iter().map(parse_position).collect()
}

pub(crate) fn parse_position(v: &Value) -> Result<GeoPoint> {
    let pos = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::GeoJson(format!("position must be [lon, lat], got {v}")))?;
    let coord = |i: usize| {
        pos[i]
            .as_f64()
            .ok_or_else(|| Error::GeoJson(format!("non-numeric coordinate in {v}")))
    };
    GeoPoint::new(coord(0)?, coord(1)?)
}

fn polygon_from_geometry(geom: &Value, region_id: String) -> Result<RegionBoundary> {
    if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
        return Err(Error::GeoJson("expected a Polygon geometry".into()));
    }
    let rings = geom
        .get("coordinates")
        .and_then(Value::as_array)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::GeoJson("Polygon needs at least one ring".into()))?;
    let outer = parse_ring(&rings[0])?;
    let holes = rings[1..]
        .iter()
        .map(parse_ring)
        .collect::<Result<Vec<_>>>()?;
    RegionBoundary::new(region_id, outer, holes)
}

pub(crate) fn id_property(props: Option<&Value>, keys: &[&str]) -> Option<String> {
    let props = props?;
    keys.iter().find_map(|k| match props.get(*k)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

/// Reads a bare Polygon, a Polygon Feature, or a FeatureCollection of
/// Polygon features. Region ids come from the `region_id` or `id`
/// property, falling back to `region-<n>`.
pub fn parse_regions(text: &str) -> Result<Vec<RegionBoundary>> {
    let doc: Value = serde_json::from_str(text)?;
    let fallback = |i: usize| format!("region-{i}");
    match doc.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![polygon_from_geometry(&doc, fallback(0))?]),
        Some("Feature") => {
            let id = id_property(doc.get("properties"), &["region_id", "id"])
                .unwrap_or_else(|| fallback(0));
            let geom = doc
                .get("geometry")
                .ok_or_else(|| Error::GeoJson("Feature without geometry".into()))?;
            Ok(vec![polygon_from_geometry(geom, id)?])
        }
        Some("FeatureCollection") => doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::GeoJson("FeatureCollection without features".into()))?
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let id = id_property(f.get("properties"), &["region_id", "id"])
                    .unwrap_or_else(|| fallback(i));
                let geom = f
                    .get("geometry")
                    .ok_or_else(|| Error::GeoJson("Feature without geometry".into()))?;
                polygon_from_geometry(geom, id)
            })
            .collect(),
        _ => Err(Error::GeoJson(
            "expected Polygon, Feature or FeatureCollection".into(),
        )),
    }
}

pub fn load_regions(path: impl AsRef<Path>) -> Result<Vec<RegionBoundary>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_regions(&text)
}

/// FeatureCollection of region polygons. `extra` supplies additional
/// properties per region (for example a service grade).
pub fn regions_to_geojson(
    regions: &[RegionBoundary],
    mut extra: impl FnMut(&RegionBoundary) -> serde_json::Map<String, Value>,
) -> Value {
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let mut props = extra(r);
            props.insert("region_id".into(), Value::String(r.region_id.clone()));
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": r.to_geojson_coords()},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint { lon, lat }
    }

    fn square() -> RegionBoundary {
        RegionBoundary::rectangle("sq", pt(0.0, 0.0), pt(2.0, 2.0)).unwrap()
    }

    #[test]
    fn square_centroid_and_outside() {
        let sq = square();
        assert!(point_in_region(&pt(1.0, 1.0), &sq));
        assert!(!point_in_region(&pt(3.0, 1.0), &sq));
        assert!(!point_in_region(&pt(-0.5, -0.5), &sq));
    }

    #[test]
    fn boundary_points_are_inside() {
        let sq = square();
        assert!(point_in_region(&pt(0.0, 1.0), &sq));
        assert!(point_in_region(&pt(2.0, 2.0), &sq));
        assert!(point_in_region(&pt(1.0, 0.0), &sq));
    }

    #[test]
    fn holes_exclude_their_interior_but_not_their_edge() {
        let hole = vec![
            pt(0.5, 0.5),
            pt(1.5, 0.5),
            pt(1.5, 1.5),
            pt(0.5, 1.5),
            pt(0.5, 0.5),
        ];
        let outer = square().outer().to_vec();
        let r = RegionBoundary::new("holed", outer, vec![hole]).unwrap();
        assert!(!point_in_region(&pt(1.0, 1.0), &r));
        assert!(point_in_region(&pt(0.5, 1.0), &r));
        assert!(point_in_region(&pt(0.25, 1.0), &r));
    }

    #[test]
    fn degenerate_rings_are_rejected() {
        let err = RegionBoundary::new("x", vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 0.0)], vec![])
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateRing { points: 3 }));
        let open = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)];
        assert!(RegionBoundary::new("x", open, vec![]).is_err());
    }

    #[test]
    fn orientation_is_normalized() {
        let cw = vec![
            pt(0.0, 0.0),
            pt(0.0, 1.0),
            pt(1.0, 1.0),
            pt(1.0, 0.0),
            pt(0.0, 0.0),
        ];
        let r = RegionBoundary::new("cw", cw, vec![]).unwrap();
        assert!(signed_area(r.outer()) > 0.0);
    }

    #[test]
    fn parses_feature_collection_with_ids() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"region_id":"west"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
            {"type":"Feature","properties":{"id":7},
             "geometry":{"type":"Polygon","coordinates":[[[1,0],[2,0],[2,1],[1,1],[1,0]]]}}]}"#;
        let regions = parse_regions(text).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].region_id, "west");
        assert_eq!(regions[1].region_id, "7");
        let back = regions_to_geojson(&regions, |_| Default::default());
        let again = parse_regions(&back.to_string()).unwrap();
        assert_eq!(again, regions);
    }

    #[test]
    fn bare_polygon_parses() {
        let text = r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}"#;
        let regions = parse_regions(text).unwrap();
        assert_eq!(regions[0].region_id, "region-0");
        assert!(parse_regions(r#"{"type":"Point","coordinates":[0,0]}"#).is_err());
    }
}
