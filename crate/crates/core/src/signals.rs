//! Fixed-time signal plans. Every signalized intersection runs two
//! complementary groups; a plan is `(red, green, offset)` seconds for group A,
//! with group B green exactly while A is red.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Group, RoadNetwork};

pub const MIN_DURATION: u32 = 20;
pub const MAX_DURATION: u32 = 54;
const DURATION_SPAN: f64 = (MAX_DURATION - MIN_DURATION) as f64;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("intersection {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("configuration is missing signalized intersection {0}")]
    Missing(String),
    #[error("configuration names {0}, which is not a signalized intersection")]
    Unexpected(String),
    #[error("network has no signalized intersections")]
    NoSignals,
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("signal file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Light {
    Green,
    Red,
}

impl Light {
    pub fn flip(self) -> Light {
        match self {
            Light::Green => Light::Red,
            Light::Red => Light::Green,
        }
    }
}

/// Timing of one intersection, in whole seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntersectionSignal {
    /// Red duration of group A (= green duration of group B).
    pub red: u32,
    /// Green duration of group A.
    pub green: u32,
    /// Time of group A's first red-to-green change.
    pub offset: u32,
}

impl IntersectionSignal {
    pub fn cycle(&self) -> u32 {
        self.red + self.green
    }

    pub fn check(&self) -> Result<(), String> {
        let range = MIN_DURATION..=MAX_DURATION;
        if !range.contains(&self.red) {
            return Err(format!(
                "red {} outside [{MIN_DURATION}, {MAX_DURATION}]",
                self.red
            ));
        }
        if !range.contains(&self.green) {
            return Err(format!(
                "green {} outside [{MIN_DURATION}, {MAX_DURATION}]",
                self.green
            ));
        }
        if self.offset >= self.cycle() {
            return Err(format!(
                "offset {} outside [0, {}]",
                self.offset,
                self.cycle() - 1
            ));
        }
        Ok(())
    }

    /// Lights of groups A and B at time `t` (seconds since simulation start).
    /// Group A is red until `offset`, then cycles green for `green` seconds
    /// and red for `red` seconds.
    pub fn phase_at(&self, t: f64) -> (Light, Light) {
        let offset = self.offset as f64;
        let a = if t < offset {
            Light::Red
        } else {
            let into_cycle = (t - offset).rem_euclid(self.cycle() as f64);
            if into_cycle < self.green as f64 {
                Light::Green
            } else {
                Light::Red
            }
        };
        (a, a.flip())
    }

    /// Uniform draw from the admissible timings.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let red = rng.random_range(MIN_DURATION..=MAX_DURATION);
        let green = rng.random_range(MIN_DURATION..=MAX_DURATION);
        let offset = rng.random_range(0..red + green);
        IntersectionSignal { red, green, offset }
    }
}

/// Timings for every signalized intersection of a network, keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalConfiguration(pub BTreeMap<String, IntersectionSignal>);

impl SignalConfiguration {
    pub fn get(&self, id: &str) -> Option<&IntersectionSignal> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &IntersectionSignal)> {
        self.0.iter()
    }

    /// Checks that the configuration covers exactly the signalized
    /// intersections of `net` with admissible timings.
    pub fn check_against(&self, net: &RoadNetwork) -> Result<(), SignalError> {
        let ids = net.signalized_ids();
        for id in &ids {
            let sig = self
                .0
                .get(id)
                .ok_or_else(|| SignalError::Missing(id.clone()))?;
            sig.check().map_err(|message| SignalError::Invalid {
                id: id.clone(),
                message,
            })?;
        }
        if let Some(extra) = self.0.keys().find(|k| !ids.contains(k)) {
            return Err(SignalError::Unexpected(extra.clone()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, SignalError> {
        let err = |message: String| SignalError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }
}

/// Independent uniform timings for every signalized intersection.
pub fn sample_config<R: Rng + ?Sized>(
    net: &RoadNetwork,
    rng: &mut R,
) -> Result<SignalConfiguration, SignalError> {
    let ids = net.signalized_ids();
    if ids.is_empty() {
        return Err(SignalError::NoSignals);
    }
    Ok(SignalConfiguration(
        ids.into_iter()
            .map(|id| (id, IntersectionSignal::sample(rng)))
            .collect(),
    ))
}

/// Mapping between configurations and points of the unit cube, three
/// coordinates per intersection in sorted-id order:
/// `(red - 20) / 34`, `(green - 20) / 34`, `offset / (red + green - 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSpace {
    ids: Vec<String>,
}

impl ConfigSpace {
    pub fn new(mut ids: Vec<String>) -> Self {
        ids.sort();
        ConfigSpace { ids }
    }

    pub fn for_network(net: &RoadNetwork) -> Self {
        ConfigSpace {
            ids: net.signalized_ids(),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        3 * self.ids.len()
    }

    pub fn encode(&self, cfg: &SignalConfiguration) -> Result<Vec<f64>, SignalError> {
        let mut out = Vec::with_capacity(self.dim());
        for id in &self.ids {
            let s = cfg
                .get(id)
                .ok_or_else(|| SignalError::Missing(id.clone()))?;
            out.push((s.red - MIN_DURATION) as f64 / DURATION_SPAN);
            out.push((s.green - MIN_DURATION) as f64 / DURATION_SPAN);
            out.push(s.offset as f64 / (s.cycle() - 1) as f64);
        }
        Ok(out)
    }

    /// Nearest admissible configuration to a point; coordinates outside
    /// `[0, 1]` are clamped.
    pub fn decode(&self, x: &[f64]) -> Result<SignalConfiguration, SignalError> {
        if x.len() != self.dim() {
            return Err(SignalError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let clamp = |v: f64| {
            let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            if c != v {
                log::warn!("clamping encoded coordinate {v} to {c}");
            }
            c
        };
        let duration = |v: f64| MIN_DURATION + (clamp(v) * DURATION_SPAN).round() as u32;
        let map = self
            .ids
            .iter()
            .zip(x.chunks_exact(3))
            .map(|(id, c)| {
                let red = duration(c[0]);
                let green = duration(c[1]);
                let offset = (clamp(c[2]) * (red + green - 1) as f64).round() as u32;
                (id.clone(), IntersectionSignal { red, green, offset })
            })
            .collect();
        Ok(SignalConfiguration(map))
    }
}

/// Light shown at the downstream end of every edge (indexed like
/// [`RoadNetwork::edges`]); unsignalized edges are always green.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseState(pub Vec<Light>);

impl PhaseState {
    pub fn all_green(net: &RoadNetwork) -> Self {
        PhaseState(vec![Light::Green; net.edges().len()])
    }

    pub fn light(&self, edge: usize) -> Light {
        self.0[edge]
    }

    pub fn is_red(&self, edge: usize) -> bool {
        self.0[edge] == Light::Red
    }
}

/// A configuration bound to the signalized approaches of a network.
#[derive(Clone, Debug)]
pub struct SignalPlan {
    entries: Vec<(IntersectionSignal, Vec<(usize, Group)>)>,
    edge_count: usize,
}

impl SignalPlan {
    pub fn new(net: &RoadNetwork, cfg: &SignalConfiguration) -> Result<Self, SignalError> {
        cfg.check_against(net)?;
        let entries = net
            .intersections()
            .iter()
            .filter_map(|ix| {
                let groups = ix.groups.as_ref()?;
                let sig = cfg.get(&ix.id).copied()?;
                let approaches = ix
                    .incoming
                    .iter()
                    .copied()
                    .zip(groups.iter().copied())
                    .collect();
                Some((sig, approaches))
            })
            .collect();
        Ok(SignalPlan {
            entries,
            edge_count: net.edges().len(),
        })
    }

    pub fn phases_at(&self, t: f64) -> PhaseState {
        let mut lights = vec![Light::Green; self.edge_count];
        self.fill(t, &mut lights);
        PhaseState(lights)
    }

    pub fn fill(&self, t: f64, lights: &mut [Light]) {
        for (sig, approaches) in &self.entries {
            let (a, b) = sig.phase_at(t);
            for &(edge, group) in approaches {
                lights[edge] = match group {
                    Group::A => a,
                    Group::B => b,
                };
            }
        }
    }
}
