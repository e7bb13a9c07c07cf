use std::path::Path;

use serde_json::{json, Value};

use super::region::{id_property, parse_position};
use super::{Category, GeoPoint, NodeIdx, RoadGraph};
use crate::error::{Error, Result};

/// An emergency facility snapped to its nearest road node.
#[derive(Debug, Clone, PartialEq)]
pub struct Facility {
    pub id: String,
    pub category: Category,
    pub location: GeoPoint,
    pub node: NodeIdx,
}

impl Facility {
    pub fn snapped(
        id: impl Into<String>,
        category: Category,
        location: GeoPoint,
        graph: &RoadGraph,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            category,
            node: graph.snap(&location)?,
            location,
        })
    }
}

fn category_property(props: &Value) -> Result<Category> {
    match props.get("category") {
        Some(Value::Number(n)) => {
            let code = n
                .as_u64()
                .filter(|c| *c < Category::COUNT as u64)
                .ok_or_else(|| Error::InvalidCategory(n.to_string()))?;
            Category::from_code(code as u8)
        }
        Some(Value::String(s)) => s.parse(),
        _ => Err(Error::GeoJson(
            "facility feature needs a `category` property".into(),
        )),
    }
}

/// Parses a FeatureCollection of Point features with `id` and `category`
/// properties and snaps each facility onto `graph`.
pub fn parse_facilities(text: &str, graph: &RoadGraph) -> Result<Vec<Facility>> {
    let doc: Value = serde_json::from_str(text)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::GeoJson(
            "facilities file must be a FeatureCollection".into(),
        ));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("FeatureCollection without features".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let geom = f
                .get("geometry")
                .filter(|g| g.get("type").and_then(Value::as_str) == Some("Point"))
                .ok_or_else(|| Error::GeoJson(format!("feature {i} is not a Point")))?;
            let location = parse_position(geom.get("coordinates").unwrap_or(&Value::Null))?;
            let props = f.get("properties").unwrap_or(&Value::Null);
            let id = id_property(Some(props), &["id"])
                .ok_or_else(|| Error::GeoJson(format!("feature {i} has no `id` property")))?;
            Facility::snapped(id, category_property(props)?, location, graph)
        })
        .collect()
}

pub fn load_facilities(path: impl AsRef<Path>, graph: &RoadGraph) -> Result<Vec<Facility>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_facilities(&text, graph)
}

pub fn facilities_to_geojson(facilities: &[Facility]) -> Value {
    let features: Vec<Value> = facilities
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "properties": {"id": f.id, "category": f.category.code()},
                "geometry": {"type": "Point", "coordinates": [f.location.lon, f.location.lat]},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> RoadGraph {
        RoadGraph::parse("N a 0 0\nN b 0.01 0\nE a b 1000 0\n").unwrap()
    }

    #[test]
    fn parses_and_snaps() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":"h1","category":0},"geometry":{"type":"Point","coordinates":[0.009,0.0001]}},
            {"type":"Feature","properties":{"id":2,"category":"security"},"geometry":{"type":"Point","coordinates":[0.0,0.0]}}]}"#;
        let g = graph();
        let fs = parse_facilities(text, &g).unwrap();
        assert_eq!(fs[0].node, g.index_of("b").unwrap());
        assert_eq!(fs[0].category, Category::Healthcare);
        assert_eq!(fs[1].id, "2");
        assert_eq!(fs[1].category, Category::Security);
        let back = parse_facilities(&facilities_to_geojson(&fs).to_string(), &g).unwrap();
        assert_eq!(back, fs);
    }

    #[test]
    fn rejects_bad_category() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":"x","category":4},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(matches!(
            parse_facilities(text, &graph()),
            Err(Error::InvalidCategory(_))
        ));
    }
}
