//! Service zones: k-means over incident coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneAssignment {
    pub k: usize,
    pub centroids: Vec<GeoPoint>,
    /// Zone index of each input point.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each centroid update.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

impl ZoneAssignment {
    pub fn wcss(&self, points: &[GeoPoint]) -> f64 {
        wcss(points, &self.centroids, &self.assignment)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&z| sizes[z] += 1);
        sizes
    }
}

fn sq_dist(a: &GeoPoint, b: &GeoPoint) -> f64 {
    (a.lon - b.lon).powi(2) + (a.lat - b.lat).powi(2)
}

pub fn wcss(points: &[GeoPoint], centroids: &[GeoPoint], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &z)| sq_dist(p, &centroids[z]))
        .sum()
}

fn nearest(p: &GeoPoint, centroids: &[GeoPoint]) -> usize {
    let mut best = 0;
    for (z, c) in centroids.iter().enumerate().skip(1) {
        if sq_dist(p, c) < sq_dist(p, &centroids[best]) {
            best = z;
        }
    }
    best
}

/// Point farthest from every existing centroid; ties to the lowest index.
fn farthest(points: &[GeoPoint], centroids: &[GeoPoint]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = centroids
            .iter()
            .map(|c| sq_dist(p, c))
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Lloyd iterations on `(lon, lat)` from a seeded farthest-point start. The
/// first centroid is a random point, each further one the point farthest
/// from those chosen so far. Stops at an assignment fixed point or after
/// [`MAX_ITERATIONS`].
pub fn cluster_zones(points: &[GeoPoint], k: usize, seed: u64) -> Result<ZoneAssignment> {
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        centroids.push(points[farthest(points, &centroids)]);
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut wcss_history = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &z) in points.iter().zip(&assignment) {
            sums[z].0 += p.lon;
            sums[z].1 += p.lat;
            sums[z].2 += 1;
        }
        let mut reseeded = false;
        for z in 0..k {
            let (lon, lat, n) = sums[z];
            if n > 0 {
                centroids[z] = GeoPoint {
                    lon: lon / n as f64,
                    lat: lat / n as f64,
                };
            }
        }
        for z in 0..k {
            if sums[z].2 == 0 {
                let others: Vec<GeoPoint> =
                    (0..k).filter(|&o| o != z).map(|o| centroids[o]).collect();
                centroids[z] = points[farthest(points, &others)];
                reseeded = true;
            }
        }
        wcss_history.push(wcss(points, &centroids, &assignment));
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment && !reseeded {
            converged = true;
            break;
        }
        assignment = next;
    }
    Ok(ZoneAssignment {
        k,
        centroids,
        assignment,
        wcss_history,
        converged,
    })
}
