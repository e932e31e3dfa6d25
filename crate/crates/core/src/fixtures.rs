//! Bundled example networks and initial speed tables.

use std::path::PathBuf;

use crate::network::RoadNetwork;

pub const RING_JSON: &str = include_str!("../fixtures/ring.json");
pub const FOUR_WAY_JSON: &str = include_str!("../fixtures/four_way.json");
pub const TWO_INTERSECTIONS_JSON: &str = include_str!("../fixtures/two_intersections.json");
pub const ROAD_CATEGORIES_JSON: &str = include_str!("../fixtures/road_categories.json");

pub const RING_INIT_CSV: &str = include_str!("../fixtures/ring_init.csv");
pub const FOUR_WAY_INIT_CSV: &str = include_str!("../fixtures/four_way_init.csv");
pub const TWO_INTERSECTIONS_INIT_CSV: &str = include_str!("../fixtures/two_intersections_init.csv");
pub const ROAD_CATEGORIES_INIT_CSV: &str = include_str!("../fixtures/road_categories_init.csv");

/// Closed loop of eight 150 m roads joined by unsignalized junctions.
pub fn ring() -> RoadNetwork {
    RoadNetwork::from_json(RING_JSON).expect("ring fixture is valid")
}

/// A single signalized four-way junction with four 200 m approaches and exits.
pub fn four_way() -> RoadNetwork {
    RoadNetwork::from_json(FOUR_WAY_JSON).expect("four-way fixture is valid")
}

/// Two signalized junctions on a two-lane corridor, each with a cross street.
pub fn two_intersections() -> RoadNetwork {
    RoadNetwork::from_json(TWO_INTERSECTIONS_JSON).expect("two-intersection fixture is valid")
}

/// Same layout as [`two_intersections`] with four road categories of different
/// free-flow speeds, lane counts and diagram shapes.
pub fn road_categories() -> RoadNetwork {
    RoadNetwork::from_json(ROAD_CATEGORIES_JSON).expect("road-category fixture is valid")
}

/// On-disk location of a bundled fixture file.
pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}
