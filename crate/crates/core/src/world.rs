//! Synthetic worlds: a square road grid cut by a north-south river.
//!
//! The river sits between two grid columns and is passable only at a few
//! bridge rows, so geographic distance and road distance disagree for
//! anything near the bank. Every edge has the same length, which keeps travel
//! times exact multiples of one edge time and makes ties exact.

use crate::error::{Error, Result};
use crate::geo::{Category, Facility, GeoPoint, RegionBoundary, RoadGraph};
use crate::scenario::PopulationCenter;

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierWorldConfig {
    pub rows: usize,
    pub cols: usize,
    /// South-west node position.
    pub origin: GeoPoint,
    pub spacing_deg: f64,
    pub edge_length_m: f64,
    /// The river runs between column `river_after_col` and the next one.
    pub river_after_col: usize,
    /// Rows where a bridge crosses the river.
    pub crossings: Vec<usize>,
    /// Facilities as `(id, category, row, col)`.
    pub facilities: Vec<(String, Category, usize, usize)>,
}

impl Default for BarrierWorldConfig {
    fn default() -> Self {
        use Category::*;
        let layout = [
            ("hosp-a", Healthcare, 10, 8),
            ("hosp-b", Healthcare, 5, 14),
            ("hosp-c", Healthcare, 15, 2),
            ("fire-a", FireDisaster, 9, 11),
            ("fire-b", FireDisaster, 4, 5),
            ("fire-c", FireDisaster, 15, 16),
            ("police-a", Security, 6, 9),
            ("police-b", Security, 13, 14),
            ("police-c", Security, 17, 5),
            ("transit-a", Transport, 13, 10),
            ("transit-b", Transport, 8, 3),
            ("transit-c", Transport, 2, 17),
        ];
        Self {
            rows: 20,
            cols: 20,
            origin: GeoPoint { lon: 7.0, lat: 4.8 },
            spacing_deg: 0.0045,
            edge_length_m: 500.0,
            river_after_col: 9,
            crossings: vec![2, 17],
            facilities: layout
                .into_iter()
                .map(|(id, c, r, col)| (id.to_string(), c, r, col))
                .collect(),
        }
    }
}

pub fn grid_node_id(row: usize, col: usize) -> String {
    format!("r{row}c{col}")
}

#[derive(Debug, Clone)]
pub struct BarrierWorld {
    pub config: BarrierWorldConfig,
    pub graph: RoadGraph,
    pub facilities: Vec<Facility>,
    /// The whole grid, padded by half a cell.
    pub boundary: RegionBoundary,
    /// `west` and `east` banks.
    pub regions: Vec<RegionBoundary>,
    /// Population centers straddling the river.
    pub centers: Vec<PopulationCenter>,
}

impl BarrierWorld {
    pub fn position(&self, row: usize, col: usize) -> GeoPoint {
        self.config.position(row, col)
    }
}

impl BarrierWorldConfig {
    pub fn position(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint {
            lon: self.origin.lon + col as f64 * self.spacing_deg,
            lat: self.origin.lat + row as f64 * self.spacing_deg,
        }
    }

    /// Longitude of the river line.
    pub fn river_lon(&self) -> f64 {
        self.origin.lon + (self.river_after_col as f64 + 0.5) * self.spacing_deg
    }

    fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::Config(
                "grid needs at least 2 rows and 2 columns".into(),
            ));
        }
        if self.river_after_col + 1 >= self.cols {
            return Err(Error::Config(
                "river must lie strictly inside the grid".into(),
            ));
        }
        if let Some(r) = self.crossings.iter().find(|&&r| r >= self.rows) {
            return Err(Error::Config(format!(
                "crossing row {r} is outside the grid"
            )));
        }
        if let Some((id, ..)) = self
            .facilities
            .iter()
            .find(|f| f.2 >= self.rows || f.3 >= self.cols)
        {
            return Err(Error::Config(format!(
                "facility `{id}` is outside the grid"
            )));
        }
        Ok(())
    }
}

pub fn barrier_world(cfg: &BarrierWorldConfig) -> Result<BarrierWorld> {
    cfg.validate()?;
    let mut nodes = Vec::with_capacity(cfg.rows * cfg.cols);
    let mut edges = Vec::new();
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            nodes.push((grid_node_id(r, c), cfg.position(r, c)));
            let bridged = c != cfg.river_after_col || cfg.crossings.contains(&r);
            if c + 1 < cfg.cols && bridged {
                edges.push((
                    grid_node_id(r, c),
                    grid_node_id(r, c + 1),
                    cfg.edge_length_m,
                    false,
                ));
            }
            if r + 1 < cfg.rows {
                edges.push((
                    grid_node_id(r, c),
                    grid_node_id(r + 1, c),
                    cfg.edge_length_m,
                    false,
                ));
            }
        }
    }
    let graph = RoadGraph::new(nodes, edges)?;

    let facilities = cfg
        .facilities
        .iter()
        .map(|(id, cat, r, c)| Facility::snapped(id.clone(), *cat, cfg.position(*r, *c), &graph))
        .collect::<Result<Vec<_>>>()?;

    let half = cfg.spacing_deg / 2.0;
    let min = GeoPoint {
        lon: cfg.origin.lon - half,
        lat: cfg.origin.lat - half,
    };
    let max_pos = cfg.position(cfg.rows - 1, cfg.cols - 1);
    let max = GeoPoint {
        lon: max_pos.lon + half,
        lat: max_pos.lat + half,
    };
    let river = cfg.river_lon();
    let boundary = RegionBoundary::rectangle("world", min, max)?;
    let regions = vec![
        RegionBoundary::rectangle(
            "west",
            min,
            GeoPoint {
                lon: river,
                lat: max.lat,
            },
        )?,
        RegionBoundary::rectangle(
            "east",
            GeoPoint {
                lon: river,
                lat: min.lat,
            },
            max,
        )?,
    ];

    let mid_row = (cfg.rows - 1) as f64 / 2.0;
    let sigma = 2.5 * cfg.spacing_deg;
    let bank = |col: f64, row: f64, weight: f64| {
        PopulationCenter::new(
            GeoPoint {
                lon: cfg.origin.lon + col * cfg.spacing_deg,
                lat: cfg.origin.lat + row * cfg.spacing_deg,
            },
            weight,
            sigma,
        )
    };
    let centers = vec![
        bank(cfg.river_after_col as f64 + 0.5, mid_row, 2.0)?,
        bank(cfg.river_after_col as f64 + 0.5, mid_row / 2.0, 1.0)?,
        bank(cfg.river_after_col as f64 + 0.5, mid_row * 1.5, 1.0)?,
    ];

    Ok(BarrierWorld {
        config: cfg.clone(),
        graph,
        facilities,
        boundary,
        regions,
        centers,
    })
}
