//! Road network: nodes with planar coordinates, directed road edges split into
//! roughly 10 m cells, and intersections carrying turn weights and, when
//! signalized, a two-group split of their incoming roads.
//!
//! A network is read from a JSON document ([`NetworkFile`]) and turned into a
//! [`RoadNetwork`] only if [`validate`] reports no violations, so every
//! `RoadNetwork` value satisfies the referential and geometric invariants.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fundamental::FdParams;

/// Target cell length in meters.
pub const TARGET_CELL_LENGTH: f64 = 10.0;
pub const MIN_CELLS: usize = 2;
pub const MIN_CELL_LENGTH: f64 = 5.0;
pub const MAX_CELL_LENGTH: f64 = 20.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read network file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid network:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("edges {e_in} and {e_out} do not meet at a common intersection")]
    NotAdjacent { e_in: String, e_out: String },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A single broken invariant, naming the offending entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Per-edge shape override of the fundamental diagram. The free-flow speed
/// always comes from the edge itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdShape {
    pub rho_cr: f64,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub lanes: u32,
    pub free_flow_speed_mps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd: Option<FdShape>,
    /// Constant inflow (cars/s over all lanes) fed into an entry edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflow_veh_per_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRecord {
    pub id: String,
    pub node: String,
    pub incoming: Vec<String>,
    pub outgoing: Vec<String>,
    /// Sparse `[e_in, e_out, weight]` triples. Rows need not be normalized.
    #[serde(default)]
    pub turn_weights: Vec<(String, String, f64)>,
    #[serde(default)]
    pub signalized: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_a: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_b: Vec<String>,
}

/// The on-disk network document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub intersections: Vec<IntersectionRecord>,
}

impl NetworkFile {
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Number of cells for a road of the given length.
pub fn cell_count(length: f64) -> usize {
    ((length / TARGET_CELL_LENGTH).round() as usize).max(MIN_CELLS)
}

/// Lists every broken invariant of a network document. Empty iff the document
/// describes a valid network.
pub fn validate(file: &NetworkFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: &str, message: String| {
        out.push(Violation {
            entity: entity.to_string(),
            message,
        })
    };

    if file.edges.is_empty() {
        push("network", "network has no edges".into());
    }

    let mut nodes: HashMap<&str, &NodeRecord> = HashMap::new();
    for n in &file.nodes {
        if nodes.insert(n.id.as_str(), n).is_some() {
            push(&format!("node {}", n.id), "duplicate node id".into());
        }
        if !(n.x.is_finite() && n.y.is_finite()) {
            push(
                &format!("node {}", n.id),
                "coordinates must be finite".into(),
            );
        }
    }

    let mut edges: HashMap<&str, &EdgeRecord> = HashMap::new();
    for e in &file.edges {
        let entity = format!("edge {}", e.id);
        if edges.insert(e.id.as_str(), e).is_some() {
            push(&entity, "duplicate edge id".into());
        }
        let from = nodes.get(e.from.as_str());
        let to = nodes.get(e.to.as_str());
        if from.is_none() {
            push(&entity, format!("references unknown node {}", e.from));
        }
        if to.is_none() {
            push(&entity, format!("references unknown node {}", e.to));
        }
        if let (Some(a), Some(b)) = (from, to) {
            if a.x == b.x && a.y == b.y {
                push(&entity, "start and end nodes coincide".into());
            }
        }
        if !(e.length_m.is_finite() && e.length_m > 0.0) {
            push(
                &entity,
                format!("length must be positive, got {}", e.length_m),
            );
        } else {
            let dx = e.length_m / cell_count(e.length_m) as f64;
            if !(MIN_CELL_LENGTH..=MAX_CELL_LENGTH).contains(&dx) {
                push(
                    &entity,
                    format!(
                        "cell length {dx:.3} m outside [{MIN_CELL_LENGTH}, {MAX_CELL_LENGTH}] m (road too short)"
                    ),
                );
            }
        }
        if e.lanes < 1 {
            push(&entity, "must have at least one lane".into());
        }
        if !(e.free_flow_speed_mps.is_finite() && e.free_flow_speed_mps > 0.0) {
            push(
                &entity,
                format!(
                    "free-flow speed must be positive, got {}",
                    e.free_flow_speed_mps
                ),
            );
        }
        if let Some(fd) = e.fd {
            if !(fd.rho_cr.is_finite() && fd.rho_cr > 0.0 && fd.a.is_finite() && fd.a > 0.0) {
                push(
                    &entity,
                    "fundamental diagram override must be positive".into(),
                );
            }
        }
        if let Some(q) = e.inflow_veh_per_s {
            if !(q.is_finite() && q >= 0.0) {
                push(&entity, format!("inflow must be non-negative, got {q}"));
            }
        }
    }

    let mut seen_ids = HashSet::new();
    let mut seen_nodes = HashSet::new();
    let mut incoming_owner: HashMap<&str, &str> = HashMap::new();
    let mut outgoing_owner: HashMap<&str, &str> = HashMap::new();
    for ix in &file.intersections {
        let entity = format!("intersection {}", ix.id);
        if !seen_ids.insert(ix.id.as_str()) {
            push(&entity, "duplicate intersection id".into());
        }
        if !nodes.contains_key(ix.node.as_str()) {
            push(&entity, format!("references unknown node {}", ix.node));
        }
        if !seen_nodes.insert(ix.node.as_str()) {
            push(
                &entity,
                format!("node {} already hosts an intersection", ix.node),
            );
        }
        for e_id in &ix.incoming {
            match edges.get(e_id.as_str()) {
                None => push(&entity, format!("incoming edge {e_id} does not exist")),
                Some(e) if e.to != ix.node => push(
                    &entity,
                    format!("incoming edge {e_id} does not end at {}", ix.node),
                ),
                Some(_) => {}
            }
            if let Some(other) = incoming_owner.insert(e_id.as_str(), ix.id.as_str()) {
                push(
                    &entity,
                    format!("edge {e_id} is already incoming at {other}"),
                );
            }
        }
        for e_id in &ix.outgoing {
            match edges.get(e_id.as_str()) {
                None => push(&entity, format!("outgoing edge {e_id} does not exist")),
                Some(e) if e.from != ix.node => push(
                    &entity,
                    format!("outgoing edge {e_id} does not start at {}", ix.node),
                ),
                Some(_) => {}
            }
            if let Some(other) = outgoing_owner.insert(e_id.as_str(), ix.id.as_str()) {
                push(
                    &entity,
                    format!("edge {e_id} is already outgoing at {other}"),
                );
            }
        }

        let mut row_sums: HashMap<&str, f64> = HashMap::new();
        let mut pairs = HashSet::new();
        for (e_in, e_out, w) in &ix.turn_weights {
            if !ix.incoming.contains(e_in) {
                push(
                    &entity,
                    format!("turn weight from {e_in}, which is not incoming"),
                );
            }
            if !ix.outgoing.contains(e_out) {
                push(
                    &entity,
                    format!("turn weight to {e_out}, which is not outgoing"),
                );
            }
            if !(w.is_finite() && *w >= 0.0) {
                push(
                    &entity,
                    format!("turn weight {e_in}->{e_out} must be non-negative"),
                );
            }
            if !pairs.insert((e_in.as_str(), e_out.as_str())) {
                push(&entity, format!("turn {e_in}->{e_out} declared twice"));
            }
            *row_sums.entry(e_in.as_str()).or_default() += w.max(0.0);
        }
        for e_in in &ix.incoming {
            if row_sums.get(e_in.as_str()) == Some(&0.0) {
                push(
                    &entity,
                    format!("turn weights of incoming edge {e_in} sum to zero"),
                );
            }
        }

        if ix.signalized {
            if ix.group_a.is_empty() {
                push(&entity, "signal group A is empty".into());
            }
            if ix.group_b.is_empty() {
                push(&entity, "signal group B is empty".into());
            }
            let a: HashSet<&str> = ix.group_a.iter().map(String::as_str).collect();
            let b: HashSet<&str> = ix.group_b.iter().map(String::as_str).collect();
            for e in a.intersection(&b) {
                push(&entity, format!("edge {e} is in both signal groups"));
            }
            for e in a.union(&b) {
                if !ix.incoming.iter().any(|i| i == e) {
                    push(&entity, format!("signal group member {e} is not incoming"));
                }
            }
            for e in &ix.incoming {
                if !a.contains(e.as_str()) && !b.contains(e.as_str()) {
                    push(&entity, format!("incoming edge {e} has no signal group"));
                }
            }
        } else if !ix.group_a.is_empty() || !ix.group_b.is_empty() {
            push(
                &entity,
                "signal groups declared on an unsignalized intersection".into(),
            );
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// A directed road discretized into equal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadEdge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub lanes: u32,
    pub v_max: f64,
    pub fd: Option<FdShape>,
    pub inflow: Option<f64>,
    pub cell_count: usize,
    pub cell_length: f64,
    /// Junction feeding this edge: (intersection index, position in its outgoing list).
    pub upstream: Option<(usize, usize)>,
    /// Junction this edge drains into: (intersection index, position in its incoming list).
    pub downstream: Option<(usize, usize)>,
}

impl RoadEdge {
    /// Fundamental diagram of this road, using `defaults` for the shape
    /// parameters unless the road overrides them.
    pub fn fd(&self, defaults: &FdParams) -> FdParams {
        let shape = self.fd.unwrap_or(FdShape {
            rho_cr: defaults.rho_cr,
            a: defaults.a,
        });
        FdParams {
            v_max: self.v_max,
            rho_cr: shape.rho_cr,
            a: shape.a,
        }
    }

    pub fn is_entry(&self) -> bool {
        self.upstream.is_none()
    }

    pub fn is_exit(&self) -> bool {
        self.downstream.is_none()
    }
}

/// Which signal group an incoming road belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub node: usize,
    /// Edge indices.
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
    /// Dense turn weights indexed `[incoming position][outgoing position]`.
    pub weights: Vec<Vec<f64>>,
    /// Signal group per incoming position; `None` when unsignalized.
    pub groups: Option<Vec<Group>>,
}

impl Intersection {
    pub fn is_signalized(&self) -> bool {
        self.groups.is_some()
    }
}

/// A validated, immutable road network.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<RoadEdge>,
    intersections: Vec<Intersection>,
    edge_index: HashMap<String, usize>,
    source: NetworkFile,
}

impl RoadNetwork {
    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        Self::from_file(NetworkFile::from_json(text)?)
    }

    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        let violations = validate(&file);
        if !violations.is_empty() {
            return Err(NetworkError::Invalid(violations));
        }
        let node_index: HashMap<&str, usize> = file
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let edge_index: HashMap<String, usize> = file
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();

        let nodes = file
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                x: n.x,
                y: n.y,
            })
            .collect();
        let mut edges: Vec<RoadEdge> = file
            .edges
            .iter()
            .map(|e| {
                let n = cell_count(e.length_m);
                RoadEdge {
                    id: e.id.clone(),
                    from: node_index[e.from.as_str()],
                    to: node_index[e.to.as_str()],
                    length: e.length_m,
                    lanes: e.lanes,
                    v_max: e.free_flow_speed_mps,
                    fd: e.fd,
                    inflow: e.inflow_veh_per_s,
                    cell_count: n,
                    cell_length: e.length_m / n as f64,
                    upstream: None,
                    downstream: None,
                }
            })
            .collect();

        let mut intersections = Vec::with_capacity(file.intersections.len());
        for (k, ix) in file.intersections.iter().enumerate() {
            let incoming: Vec<usize> = ix.incoming.iter().map(|e| edge_index[e]).collect();
            let outgoing: Vec<usize> = ix.outgoing.iter().map(|e| edge_index[e]).collect();
            let mut weights = vec![vec![0.0; outgoing.len()]; incoming.len()];
            for (e_in, e_out, w) in &ix.turn_weights {
                let i = ix.incoming.iter().position(|e| e == e_in).unwrap();
                let j = ix.outgoing.iter().position(|e| e == e_out).unwrap();
                weights[i][j] = *w;
            }
            let groups = ix.signalized.then(|| {
                ix.incoming
                    .iter()
                    .map(|e| {
                        if ix.group_a.contains(e) {
                            Group::A
                        } else {
                            Group::B
                        }
                    })
                    .collect()
            });
            for (pos, &e) in incoming.iter().enumerate() {
                edges[e].downstream = Some((k, pos));
            }
            for (pos, &e) in outgoing.iter().enumerate() {
                edges[e].upstream = Some((k, pos));
            }
            intersections.push(Intersection {
                id: ix.id.clone(),
                node: node_index[ix.node.as_str()],
                incoming,
                outgoing,
                weights,
                groups,
            });
        }

        Ok(RoadNetwork {
            nodes,
            edges,
            intersections,
            edge_index,
            source: file,
        })
    }

    /// The document this network was built from.
    pub fn to_file(&self) -> &NetworkFile {
        &self.source
    }

    pub fn to_json(&self) -> String {
        self.source.to_json()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn edge(&self, idx: usize) -> &RoadEdge {
        &self.edges[idx]
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn total_cells(&self) -> usize {
        self.edges.iter().map(|e| e.cell_count).sum()
    }

    /// Ids of signalized intersections, sorted.
    pub fn signalized_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .intersections
            .iter()
            .filter(|ix| ix.is_signalized())
            .map(|ix| ix.id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Edges not fed by any intersection.
    pub fn entry_edges(&self) -> impl Iterator<Item = &RoadEdge> {
        self.edges.iter().filter(|e| e.is_entry())
    }

    /// Edges not draining into any intersection.
    pub fn exit_edges(&self) -> impl Iterator<Item = &RoadEdge> {
        self.edges.iter().filter(|e| e.is_exit())
    }

    /// Turn angle in degrees between `e_in` and `e_out` at their shared
    /// intersection; see [`angle_at`].
    pub fn turn_angle(&self, e_in: &str, e_out: &str) -> Result<f64, NetworkError> {
        let i = self
            .edge_index(e_in)
            .ok_or_else(|| NetworkError::UnknownEdge(e_in.to_string()))?;
        let o = self
            .edge_index(e_out)
            .ok_or_else(|| NetworkError::UnknownEdge(e_out.to_string()))?;
        let adjacent = matches!(
            (self.edges[i].downstream, self.edges[o].upstream),
            (Some((a, _)), Some((b, _))) if a == b
        );
        if !adjacent {
            return Err(NetworkError::NotAdjacent {
                e_in: e_in.to_string(),
                e_out: e_out.to_string(),
            });
        }
        Ok(self.angle_between(i, o))
    }

    fn rays(&self, e_in: usize, e_out: usize) -> [(f64, f64); 3] {
        let center = &self.nodes[self.edges[e_in].to];
        let back = &self.nodes[self.edges[e_in].from];
        let ahead = &self.nodes[self.edges[e_out].to];
        [(center.x, center.y), (back.x, back.y), (ahead.x, ahead.y)]
    }

    /// Turn angle between two edge indices meeting at a node; the caller
    /// guarantees adjacency.
    pub(crate) fn angle_between(&self, e_in: usize, e_out: usize) -> f64 {
        let [c, b, a] = self.rays(e_in, e_out);
        angle_at(c, b, a)
    }

    /// `(1 - cos(angle)) / 2` for the turn from `e_in` to `e_out`, computed
    /// from the ray cosine directly.
    pub(crate) fn turn_factor_between(&self, e_in: usize, e_out: usize) -> f64 {
        let [c, b, a] = self.rays(e_in, e_out);
        let u = (b.0 - c.0, b.1 - c.1);
        let w = (a.0 - c.0, a.1 - c.1);
        let cos = (u.0 * w.0 + u.1 * w.1) / (u.0.hypot(u.1) * w.0.hypot(w.1));
        (1.0 - cos.clamp(-1.0, 1.0)) / 2.0
    }
}

/// Angle in degrees at `center` between the ray toward `back` (where the
/// incoming road came from) and the ray toward `ahead` (where the outgoing
/// road leads). Going straight is 180 degrees, a U-turn 0.
pub fn angle_at(center: (f64, f64), back: (f64, f64), ahead: (f64, f64)) -> f64 {
    let u = (back.0 - center.0, back.1 - center.1);
    let w = (ahead.0 - center.0, ahead.1 - center.1);
    // atan2 of cross and dot stays accurate near 0 and 180 degrees.
    let cross = u.0 * w.1 - u.1 * w.0;
    let dot = u.0 * w.0 + u.1 * w.1;
    cross.abs().atan2(dot).to_degrees()
}

/// Fraction of the contributing road's free-flow speed allowed through a turn
/// of the given angle: `(1 - cos(angle)) / 2`.
pub fn turn_speed_factor(angle_deg: f64) -> f64 {
    // Exact cosines at the quarter turns.
    let cos = if angle_deg == 0.0 {
        1.0
    } else if angle_deg == 90.0 {
        0.0
    } else if angle_deg == 180.0 {
        -1.0
    } else {
        angle_deg.to_radians().cos()
    };
    (1.0 - cos) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn minimal(length: f64) -> NetworkFile {
        NetworkFile {
            nodes: vec![
                NodeRecord {
                    id: "a".into(),
                    x: 0.0,
                    y: 0.0,
                },
                NodeRecord {
                    id: "b".into(),
                    x: length,
                    y: 0.0,
                },
            ],
            edges: vec![EdgeRecord {
                id: "ab".into(),
                from: "a".into(),
                to: "b".into(),
                length_m: length,
                lanes: 1,
                free_flow_speed_mps: 13.68,
                fd: None,
                inflow_veh_per_s: None,
            }],
            intersections: vec![],
        }
    }

    #[test]
    fn minimal_network_discretization() {
        let net = RoadNetwork::from_file(minimal(100.0)).unwrap();
        let e = &net.edges()[0];
        assert_eq!(e.cell_count, 10);
        assert_eq!(e.cell_length, 10.0);
        assert!(e.is_entry() && e.is_exit());
    }

    #[test]
    fn short_roads_keep_two_cells() {
        assert_eq!(cell_count(12.0), 2);
        assert_eq!(cell_count(14.9), 2);
        assert_eq!(cell_count(25.0), 3);
        let v = validate(&minimal(8.0));
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn unknown_node_names_the_edge() {
        let mut f = minimal(100.0);
        f.edges[0].to = "zz".into();
        match RoadNetwork::from_file(f) {
            Err(NetworkError::Invalid(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].entity, "edge ab");
                assert!(v[0].message.contains("zz"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn four_way_fixture_shape() {
        let net = fixtures::four_way();
        assert!(validate(net.to_file()).is_empty());
        assert_eq!(net.intersections().len(), 1);
        let ix = &net.intersections()[0];
        assert_eq!(ix.incoming.len(), 4);
        assert_eq!(ix.outgoing.len(), 4);
        assert!(ix.is_signalized());
        let rec = &net.to_file().intersections[0];
        let mut a = rec.group_a.clone();
        let mut b = rec.group_b.clone();
        a.sort();
        b.sort();
        assert_eq!(a, ["n_in", "s_in"]);
        assert_eq!(b, ["e_in", "w_in"]);
    }

    #[test]
    fn empty_group_is_one_violation() {
        let mut f = fixtures::four_way().to_file().clone();
        let ix = &mut f.intersections[0];
        let moved = std::mem::take(&mut ix.group_b);
        ix.group_a.extend(moved);
        let v = validate(&f);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].message.contains("group B"));
    }

    #[test]
    fn zero_weight_row_is_one_violation() {
        let mut f = fixtures::four_way().to_file().clone();
        for t in f.intersections[0].turn_weights.iter_mut() {
            if t.0 == "n_in" {
                t.2 = 0.0;
            }
        }
        let v = validate(&f);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].message.contains("n_in"));
    }

    #[test]
    fn fixtures_are_valid() {
        for net in [
            fixtures::ring(),
            fixtures::four_way(),
            fixtures::two_intersections(),
            fixtures::road_categories(),
        ] {
            assert!(validate(net.to_file()).is_empty());
        }
    }

    #[test]
    fn angle_examples() {
        let net = fixtures::four_way();
        // w_in comes from the west; c_e leaves east, c_w leaves west, c_n north.
        assert!((net.turn_angle("w_in", "c_e").unwrap() - 180.0).abs() < 1e-12);
        assert!(net.turn_angle("w_in", "c_w").unwrap().abs() < 1e-12);
        assert!((net.turn_angle("w_in", "c_n").unwrap() - 90.0).abs() < 1e-12);
        assert!(matches!(
            net.turn_angle("c_n", "c_e"),
            Err(NetworkError::NotAdjacent { .. })
        ));
        assert!(matches!(
            net.turn_angle("nope", "c_e"),
            Err(NetworkError::UnknownEdge(_))
        ));
    }

    #[test]
    fn factor_examples() {
        assert_eq!(turn_speed_factor(180.0), 1.0);
        assert_eq!(turn_speed_factor(90.0), 0.5);
        assert_eq!(turn_speed_factor(0.0), 0.0);
    }

    #[test]
    fn load_reserialize_reload() {
        for net in [
            fixtures::ring(),
            fixtures::four_way(),
            fixtures::two_intersections(),
        ] {
            let again = RoadNetwork::from_json(&net.to_json()).unwrap();
            assert_eq!(again.to_file(), net.to_file());
            assert_eq!(again.edges(), net.edges());
            assert_eq!(again.intersections(), net.intersections());
        }
    }

    proptest! {
        #[test]
        fn discretization_is_exact(length in 10.0..5000.0f64) {
            let n = cell_count(length);
            let dx = length / n as f64;
            prop_assert!(((n as f64 * dx - length) / length).abs() < 1e-9);
            prop_assert!((MIN_CELL_LENGTH..=MAX_CELL_LENGTH).contains(&dx));
        }

        #[test]
        fn factor_is_monotone(a in 0.0..180.0f64, d in 0.0..180.0f64) {
            let b = (a + d).min(180.0);
            prop_assert!(turn_speed_factor(a) <= turn_speed_factor(b) + 1e-15);
        }

        #[test]
        fn angle_is_rigid_motion_invariant(
            bx in -100.0..100.0f64, by in -100.0..100.0f64,
            ax in -100.0..100.0f64, ay in -100.0..100.0f64,
            theta in 0.0..std::f64::consts::TAU,
            tx in -1e3..1e3f64, ty in -1e3..1e3f64,
        ) {
            prop_assume!(bx.hypot(by) > 1.0 && ax.hypot(ay) > 1.0);
            let base = angle_at((0.0, 0.0), (bx, by), (ax, ay));
            let (s, c) = theta.sin_cos();
            let m = |(x, y): (f64, f64)| (c * x - s * y + tx, s * x + c * y + ty);
            let moved = angle_at(m((0.0, 0.0)), m((bx, by)), m((ax, ay)));
            prop_assert!((base - moved).abs() < 1e-9);
            // Swapping the rays leaves the angle unchanged.
            prop_assert!((base - angle_at((0.0, 0.0), (ax, ay), (bx, by))).abs() < 1e-12);
            prop_assert!((0.0..=180.0).contains(&base));
        }
    }

    #[test]
    fn rotated_fixture_keeps_angles() {
        let net = fixtures::four_way();
        let mut f = net.to_file().clone();
        let (s, c) = 0.7f64.sin_cos();
        for n in f.nodes.iter_mut() {
            let (x, y) = (n.x, n.y);
            n.x = c * x - s * y + 123.0;
            n.y = s * x + c * y - 45.0;
        }
        let rotated = RoadNetwork::from_file(f).unwrap();
        for ix in net.to_file().intersections.iter() {
            for (i, o, _) in &ix.turn_weights {
                let a = net.turn_angle(i, o).unwrap();
                let b = rotated.turn_angle(i, o).unwrap();
                assert!((a - b).abs() < 1e-9, "{i}->{o}: {a} vs {b}");
            }
        }
    }
}
