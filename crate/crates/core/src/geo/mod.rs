//! Geospatial inputs: coordinates, the road graph, facilities, region
//! boundaries and connectivity auditing.

mod connectivity;
mod facility;
mod graph;
mod region;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use connectivity::{audit_connectivity, ConnectivityReport};
pub use facility::{facilities_to_geojson, load_facilities, parse_facilities, Facility};
pub use graph::{Edge, NodeIdx, RoadGraph};
pub use region::{
    load_regions, parse_regions, point_in_region, regions_to_geojson, RegionBoundary,
};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lon, lat });
        }
        Ok(Self { lon, lat })
    }

    /// Great-circle distance in meters.
    pub fn haversine_m(&self, other: &GeoPoint) -> f64 {
        let (phi1, phi2) = (self.lat.to_radians(), other.lat.to_radians());
        let dphi = phi2 - phi1;
        let dlambda = (other.lon - self.lon).to_radians();
        let a =
            (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }
}

/// Emergency service category. The integer codes are part of every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Category {
    Healthcare = 0,
    FireDisaster = 1,
    Security = 2,
    Transport = 3,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Healthcare,
        Category::FireDisaster,
        Category::Security,
        Category::Transport,
    ];
    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Category::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidCategory(code.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Healthcare => "healthcare",
            Category::FireDisaster => "fire",
            Category::Security => "security",
            Category::Transport => "transport",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim().to_ascii_lowercase();
        match token.as_str() {
            "0" | "healthcare" | "health" => Ok(Category::Healthcare),
            "1" | "fire" | "fire_disaster" | "firedisaster" => Ok(Category::FireDisaster),
            "2" | "security" => Ok(Category::Security),
            "3" | "transport" => Ok(Category::Transport),
            _ => Err(Error::InvalidCategory(s.to_string())),
        }
    }
}

impl From<Category> for u8 {
    fn from(c: Category) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for Category {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Category::from_code(code)
    }
}
