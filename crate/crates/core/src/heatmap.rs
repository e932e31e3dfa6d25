//! Density snapshots as a cell table or a grayscale image.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::network::RoadNetwork;
use crate::solver::Snapshot;

/// One line per cell and snapshot: `t,edge_id,cell,x_m,rho,v`, where `x_m` is
/// the distance of the cell centre from the start of its road.
pub fn heatmap_csv(net: &RoadNetwork, snapshots: &[Snapshot]) -> String {
    let mut out = String::from("t,edge_id,cell,x_m,rho,v\n");
    for snap in snapshots {
        for (e, cells) in net.edges().iter().zip(&snap.state.edges) {
            for (i, (rho, v)) in cells.rho.iter().zip(&cells.v).enumerate() {
                let x = (i as f64 + 0.5) * e.cell_length;
                writeln!(out, "{},{},{},{},{},{}", snap.state.t, e.id, i, x, rho, v).unwrap();
            }
        }
    }
    out
}

pub fn write_heatmap_csv(
    net: &RoadNetwork,
    snapshots: &[Snapshot],
    path: &Path,
) -> std::io::Result<()> {
    std::fs::write(path, heatmap_csv(net, snapshots))
}

/// Binary PGM with one row per road and one column per cell; black is
/// `rho_max`, white is empty road, and cells past a road's end are mid grey.
pub fn density_pgm(net: &RoadNetwork, snapshot: &Snapshot, rho_max: f64) -> Vec<u8> {
    let width = net.edges().iter().map(|e| e.cell_count).max().unwrap_or(0);
    let height = net.edges().len();
    let mut img = format!("P5\n{width} {height}\n255\n").into_bytes();
    for cells in &snapshot.state.edges {
        for i in 0..width {
            let px = match cells.rho.get(i) {
                Some(r) => (255.0 * (1.0 - (r / rho_max).clamp(0.0, 1.0))).round() as u8,
                None => 128,
            };
            img.push(px);
        }
    }
    img
}

pub fn write_density_pgm(
    net: &RoadNetwork,
    snapshot: &Snapshot,
    rho_max: f64,
    path: &Path,
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&density_pgm(net, snapshot, rho_max))
}
