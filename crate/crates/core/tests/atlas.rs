//! Travel-time atlas against an independent Dijkstra, plus metamorphic properties.

mod common;

use common::{oracle_time, random_network, seeded};
use dispatch_core::atlas::{build_atlas, TravelTimeAtlas};
use proptest::prelude::*;

#[test]
fn matches_reverse_dijkstra_oracle() {
    let mut rng = seeded(9);
    for _ in 0..40 {
        let net = random_network(&mut rng, 30, 90);
        let atlas = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 40.0).unwrap();
        for (i, &v) in atlas.incident_nodes().iter().enumerate() {
            for (j, f) in net.facilities.iter().enumerate() {
                assert_eq!(atlas.time(i, j), oracle_time(&net, 40.0, v, f.node));
            }
        }
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let net = random_network(&mut seeded(3), 40, 120);
    let atlas = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 40.0).unwrap();
    let mut buf = Vec::new();
    atlas.write_csv(&net.graph, &mut buf).unwrap();
    let back =
        TravelTimeAtlas::read_csv(buf.as_slice(), &net.graph, &net.facilities, 40.0).unwrap();
    for i in 0..atlas.n_rows() {
        let row = back.row_index(atlas.incident_nodes()[i]).unwrap();
        assert_eq!(back.row(row), atlas.row(i));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Doubling the speed halves every time exactly: all scalings are by powers of two.
    #[test]
    fn speed_scaling(seed in any::<u64>(), doublings in 1u32..4) {
        let net = random_network(&mut seeded(seed), 25, 70);
        let base = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 30.0).unwrap();
        let factor = 2f64.powi(doublings as i32);
        let fast = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 30.0 * factor).unwrap();
        for i in 0..base.n_rows() {
            for j in 0..base.n_facilities() {
                prop_assert_eq!(fast.time(i, j), base.time(i, j).map(|t| t / factor));
            }
        }
    }

    #[test]
    fn facility_permutation_permutes_columns(seed in any::<u64>(), rot in 0usize..6) {
        let net = random_network(&mut seeded(seed), 25, 70);
        let n = net.facilities.len();
        let mut shuffled = net.facilities.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let a = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 40.0).unwrap();
        let b = build_atlas(&net.graph, &net.incident_nodes, &shuffled, 40.0).unwrap();
        for (jb, f) in shuffled.iter().enumerate() {
            let ja = net.facilities.iter().position(|g| g.id == f.id).unwrap();
            for i in 0..a.n_rows() {
                prop_assert_eq!(a.time(i, ja), b.time(i, jb));
            }
        }
    }

    // A facility sitting on the incident node is reached in zero time.
    #[test]
    fn self_distance_is_zero(seed in any::<u64>()) {
        let net = random_network(&mut seeded(seed), 25, 70);
        let a = build_atlas(&net.graph, &net.incident_nodes, &net.facilities, 40.0).unwrap();
        for (i, &v) in a.incident_nodes().iter().enumerate() {
            for (j, f) in net.facilities.iter().enumerate() {
                if f.node == v {
                    prop_assert_eq!(a.time(i, j), Some(0.0));
                }
            }
        }
    }
}
