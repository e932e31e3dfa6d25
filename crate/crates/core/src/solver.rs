//! Explicit finite-difference Payne-Whitham engine on a road network.
//!
//! Each road is advanced with the flux-form density update
//!
//! ```text
//! rho'(i) = rho(i) - dt / (lanes * dx) * (q(i) - q(i-1)),   q = rho * v * lanes
//! ```
//!
//! and the speed update
//!
//! ```text
//! v'(i) = v(i) - dt / (2 dx) * (v(i)^2 - v(i-1)^2)
//!              + dt / nu * (V(rho(i+1)) - v(i))
//!              - dt * C / (rho(i) + chi) * (rho(i+1) - rho(i)) / dx
//! ```
//!
//! The ghost values `q(0)`, `v(0)` and `rho(N+1)` come from
//! [`Simulator::virtual_boundaries`], which couples roads through the turn
//! weights of each intersection, caps turning speeds by the turn geometry and
//! removes red approaches from the coupling.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fundamental::FdParams;
use crate::metrics::{self, CongestionMetrics, MetricsAccumulator, MetricsConfig};
use crate::network::RoadNetwork;
use crate::signals::{Light, PhaseState, SignalConfiguration, SignalError, SignalPlan};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step violates the CFL condition:\n{0}")]
    Cfl(CflReport),
    #[error("non-finite {quantity} on edge {edge}, cell {cell} at step {step}")]
    NonFinite {
        quantity: &'static str,
        edge: String,
        cell: usize,
        step: u64,
    },
    #[error("no observed speed for edge {0} and no default given")]
    MissingSpeed(String),
    #[error("observed speed for edge {edge} must be positive, got {speed}")]
    BadSpeed { edge: String, speed: f64 },
    #[error("invalid simulation parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Signals(#[from] SignalError),
    #[error("initial speed file {path}: {message}")]
    SpeedFile { path: String, message: String },
}

/// What the downstream ghost density of a red approach is set to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedEndRule {
    /// Jam density, so approaching traffic anticipates a stopped queue.
    #[default]
    Jam,
    /// Copy of the last cell (zero gradient).
    CopyLast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Relaxation time (s).
    pub nu: f64,
    /// Anticipation coefficient (m^2/s).
    pub c: f64,
    /// Guard added to the density in the anticipation term (cars/m).
    pub chi: f64,
    /// Time step (s).
    pub dt: f64,
    /// Upper density clamp (cars/m per lane).
    pub rho_jam: f64,
    /// Lower density clamp (cars/m per lane).
    pub rho_floor: f64,
    /// Half-width of the multiplicative uniform noise on initial speeds.
    pub init_noise: f64,
    pub seed: u64,
    pub red_end: RedEndRule,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            nu: 1.0,
            c: 7.0,
            chi: 0.008,
            dt: 0.5,
            rho_jam: 0.2,
            rho_floor: 1e-4,
            init_noise: 0.05,
            seed: 0,
            red_end: RedEndRule::Jam,
        }
    }
}

impl SimParams {
    pub fn check(&self) -> Result<(), SimError> {
        let positive = [
            ("nu", self.nu),
            ("c", self.c),
            ("chi", self.chi),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Params(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.rho_floor >= 0.0 && self.rho_floor < self.rho_jam && self.rho_jam.is_finite()) {
            return Err(SimError::Params(format!(
                "need 0 <= rho_floor < rho_jam, got {} and {}",
                self.rho_floor, self.rho_jam
            )));
        }
        if !(self.init_noise >= 0.0 && self.init_noise < 1.0) {
            return Err(SimError::Params(format!(
                "init_noise must be in [0, 1), got {}",
                self.init_noise
            )));
        }
        Ok(())
    }
}

/// Density and speed of every cell of one road.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeState {
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
}

/// Network state at time `t` (step `step`), edges indexed like
/// [`RoadNetwork::edges`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub edges: Vec<EdgeState>,
}

impl SimState {
    /// A state with the same density and speed in every cell of every road.
    pub fn uniform(net: &RoadNetwork, rho: f64, v: f64) -> Self {
        SimState {
            t: 0.0,
            step: 0,
            edges: net
                .edges()
                .iter()
                .map(|e| EdgeState {
                    rho: vec![rho; e.cell_count],
                    v: vec![v; e.cell_count],
                })
                .collect(),
        }
    }

    /// Number of cars on the network.
    pub fn total_cars(&self, net: &RoadNetwork) -> f64 {
        net.edges()
            .iter()
            .zip(&self.edges)
            .map(|(e, s)| s.rho.iter().sum::<f64>() * e.cell_length * e.lanes as f64)
            .sum()
    }
}

/// Ghost values of one road.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VirtualBoundary {
    /// Inflow into the first cell (cars/s over all lanes).
    pub q0: f64,
    /// Upstream ghost speed (m/s).
    pub v0: f64,
    /// Downstream ghost density (cars/m per lane).
    pub rho_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflViolation {
    pub edge: String,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflReport {
    pub dt: f64,
    pub max_ratio: f64,
    pub violations: Vec<CflViolation>,
}

impl CflReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for CflReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for v in &self.violations {
            writeln!(
                f,
                "  edge {}: v_max * dt / dx = {:.4} > 1 (dt = {})",
                v.edge, v.ratio, self.dt
            )?;
        }
        Ok(())
    }
}

/// Checks `v_max * dt / dx <= 1` on every road.
pub fn check_cfl(net: &RoadNetwork, dt: f64) -> CflReport {
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for e in net.edges() {
        let ratio = e.v_max * dt / e.cell_length;
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 {
            violations.push(CflViolation {
                edge: e.id.clone(),
                ratio,
            });
        }
    }
    CflReport {
        dt,
        max_ratio,
        violations,
    }
}

/// Per-road fundamental diagrams with `defaults` supplying the shape of roads
/// that do not override it.
pub fn fd_table(net: &RoadNetwork, defaults: &FdParams) -> Vec<FdParams> {
    net.edges().iter().map(|e| e.fd(defaults)).collect()
}

pub fn parse_initial_speeds(text: &str) -> Result<HashMap<String, f64>, String> {
    #[derive(Deserialize)]
    struct Row {
        edge_id: String,
        speed_mps: f64,
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = HashMap::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| format!("line {}: {e}", line + 2))?;
        out.insert(row.edge_id, row.speed_mps);
    }
    Ok(out)
}

/// Reads an `edge_id,speed_mps` table of observed speeds.
pub fn read_initial_speeds(path: &Path) -> Result<HashMap<String, f64>, SimError> {
    let err = |message: String| SimError::SpeedFile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    parse_initial_speeds(&text).map_err(err)
}

/// Builds the initial state from observed road speeds: each cell gets the
/// observed speed of its road perturbed by seeded multiplicative noise, and
/// the density that the road's diagram assigns to that speed.
pub fn initialize(
    net: &RoadNetwork,
    fd: &[FdParams],
    observed: &HashMap<String, f64>,
    default_speed: Option<f64>,
    params: &SimParams,
) -> Result<SimState, SimError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut clamped = 0usize;
    let mut edges = Vec::with_capacity(net.edges().len());
    for (e, fd) in net.edges().iter().zip(fd) {
        let speed = observed
            .get(&e.id)
            .copied()
            .or(default_speed)
            .ok_or_else(|| SimError::MissingSpeed(e.id.clone()))?;
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(SimError::BadSpeed {
                edge: e.id.clone(),
                speed,
            });
        }
        let mut rho = Vec::with_capacity(e.cell_count);
        let mut v = Vec::with_capacity(e.cell_count);
        for _ in 0..e.cell_count {
            let u = if params.init_noise > 0.0 {
                rng.random_range(-params.init_noise..=params.init_noise)
            } else {
                0.0
            };
            let s = (speed * (1.0 + u)).clamp(f64::MIN_POSITIVE, e.v_max);
            let inv = fd.invert_speed(s).expect("speed is positive");
            clamped += inv.clamped as usize;
            rho.push(inv.rho.clamp(params.rho_floor, params.rho_jam));
            v.push(s);
        }
        edges.push(EdgeState { rho, v });
    }
    if clamped > 0 {
        log::warn!("{clamped} initial speeds exceeded their road's free-flow speed");
    }
    Ok(SimState {
        t: 0.0,
        step: 0,
        edges,
    })
}

/// Protocol of a single run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub horizon: f64,
    pub warmup: f64,
    /// Times at which to record full snapshots.
    #[serde(default)]
    pub probes: Vec<f64>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            horizon: 340.0,
            warmup: 100.0,
            probes: Vec::new(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Requested probe time.
    pub probe: f64,
    pub state: SimState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub metrics: CongestionMetrics,
    pub steps: usize,
    pub warmup_steps: usize,
    pub snapshots: Vec<Snapshot>,
}

impl RunOutput {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            avg_speed_mps: self.metrics.avg_speed,
            queue_length: self.metrics.queue_length,
            steps: self.steps,
            warmup_steps: self.warmup_steps,
            samples: self.metrics.samples,
        }
    }
}

/// The metrics document written after a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_speed_mps: f64,
    pub queue_length: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub samples: usize,
}

/// Number of whole steps covering `duration`.
pub fn steps_for(duration: f64, dt: f64) -> usize {
    (duration / dt - 1e-9).ceil().max(0.0) as usize
}

/// A network bound to its diagrams and parameters. Immutable; one simulator can
/// drive any number of concurrent runs.
#[derive(Clone, Debug)]
pub struct Simulator<'a> {
    net: &'a RoadNetwork,
    fd: Vec<FdParams>,
    params: SimParams,
    /// Turn speed factors per intersection, `[incoming][outgoing]`.
    turn_factors: Vec<Vec<Vec<f64>>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        fd: Vec<FdParams>,
        params: SimParams,
    ) -> Result<Self, SimError> {
        params.check()?;
        if fd.len() != net.edges().len() {
            return Err(SimError::Params(format!(
                "{} fundamental diagrams for {} edges",
                fd.len(),
                net.edges().len()
            )));
        }
        let turn_factors = net
            .intersections()
            .iter()
            .map(|ix| {
                ix.incoming
                    .iter()
                    .map(|&i| {
                        ix.outgoing
                            .iter()
                            .map(|&o| net.turn_factor_between(i, o))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Simulator {
            net,
            fd,
            params,
            turn_factors,
        })
    }

    pub fn network(&self) -> &RoadNetwork {
        self.net
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn fd(&self) -> &[FdParams] {
        &self.fd
    }

    pub fn cfl(&self) -> CflReport {
        check_cfl(self.net, self.params.dt)
    }

    fn red_end_density(&self, cells: &EdgeState) -> f64 {
        match self.params.red_end {
            RedEndRule::Jam => self.params.rho_jam,
            RedEndRule::CopyLast => *cells.rho.last().unwrap(),
        }
    }

    /// Ghost values of every road for the given state and lights.
    pub fn virtual_boundaries(
        &self,
        state: &SimState,
        phases: &PhaseState,
    ) -> Vec<VirtualBoundary> {
        let net = self.net;
        let mut vb = vec![VirtualBoundary::default(); net.edges().len()];

        for (idx, e) in net.edges().iter().enumerate() {
            let cells = &state.edges[idx];
            if e.is_entry() {
                vb[idx].q0 = e
                    .inflow
                    .unwrap_or(cells.rho[0] * cells.v[0] * e.lanes as f64);
                vb[idx].v0 = cells.v[0];
            }
            if e.is_exit() {
                vb[idx].rho_end = if phases.is_red(idx) {
                    self.red_end_density(cells)
                } else {
                    *cells.rho.last().unwrap()
                };
            }
        }

        for (k, ix) in net.intersections().iter().enumerate() {
            let n_out = ix.outgoing.len();
            let mut inflow = vec![0.0; n_out];
            let mut speed_flux = vec![0.0; n_out];
            let mut limit_flux = vec![0.0; n_out];
            for (i, &e_in) in ix.incoming.iter().enumerate() {
                if phases.is_red(e_in) {
                    continue;
                }
                let row = &ix.weights[i];
                let row_sum: f64 = row.iter().sum();
                if row_sum <= 0.0 {
                    continue;
                }
                let edge = net.edge(e_in);
                let cells = &state.edges[e_in];
                let v_last = *cells.v.last().unwrap();
                let q_last = cells.rho.last().unwrap() * v_last * edge.lanes as f64;
                for j in 0..n_out {
                    let share = q_last * row[j] / row_sum;
                    inflow[j] += share;
                    speed_flux[j] += v_last * share;
                    limit_flux[j] += edge.v_max * self.turn_factors[k][i][j] * share;
                }
            }
            for (j, &e_out) in ix.outgoing.iter().enumerate() {
                let first_v = state.edges[e_out].v[0];
                let v0 = if inflow[j] > 0.0 {
                    (speed_flux[j] / inflow[j]).min(limit_flux[j] / inflow[j])
                } else {
                    first_v
                };
                vb[e_out].q0 = inflow[j];
                vb[e_out].v0 = v0.clamp(0.0, net.edge(e_out).v_max);
            }
            for (i, &e_in) in ix.incoming.iter().enumerate() {
                let cells = &state.edges[e_in];
                vb[e_in].rho_end = if phases.is_red(e_in) {
                    self.red_end_density(cells)
                } else {
                    let (mut num, mut den) = (0.0, 0.0);
                    for (j, &e_out) in ix.outgoing.iter().enumerate() {
                        let rho1 = state.edges[e_out].rho[0];
                        num += rho1 * rho1 * ix.weights[i][j];
                        den += rho1 * ix.weights[i][j];
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        *cells.rho.last().unwrap()
                    }
                };
            }
        }
        vb
    }

    /// Advances `state` by one step into `next` (which must have the same shape).
    pub fn advance(
        &self,
        state: &SimState,
        vb: &[VirtualBoundary],
        phases: &PhaseState,
        next: &mut SimState,
    ) -> Result<(), SimError> {
        let p = &self.params;
        for (idx, e) in self.net.edges().iter().enumerate() {
            let cur = &state.edges[idx];
            let out = &mut next.edges[idx];
            let fd = &self.fd[idx];
            let b = vb[idx];
            let lanes = e.lanes as f64;
            let dx = e.cell_length;
            let n = e.cell_count;
            for i in 0..n {
                let rho = cur.rho[i];
                let v = cur.v[i];
                let (q_prev, v_prev) = if i == 0 {
                    (b.q0, b.v0)
                } else {
                    (cur.rho[i - 1] * cur.v[i - 1] * lanes, cur.v[i - 1])
                };
                let rho_next = if i + 1 == n {
                    b.rho_end
                } else {
                    cur.rho[i + 1]
                };
                let q = rho * v * lanes;

                let new_rho = rho - p.dt / (lanes * dx) * (q - q_prev);
                let new_v = v - p.dt / (2.0 * dx) * (v * v - v_prev * v_prev)
                    + p.dt / p.nu * (fd.ideal_speed(rho_next) - v)
                    - p.dt * p.c / (rho + p.chi) * (rho_next - rho) / dx;

                for (quantity, value) in [("density", new_rho), ("speed", new_v)] {
                    if !value.is_finite() {
                        return Err(SimError::NonFinite {
                            quantity,
                            edge: e.id.clone(),
                            cell: i,
                            step: state.step,
                        });
                    }
                }
                out.rho[i] = new_rho.clamp(p.rho_floor, p.rho_jam);
                out.v[i] = new_v.clamp(0.0, e.v_max);
            }
            if phases.light(idx) == Light::Red {
                out.v[n - 1] = 0.0;
            }
        }
        next.step = state.step + 1;
        next.t = next.step as f64 * p.dt;
        Ok(())
    }

    /// One full step: ghost values from `state`, then the cell update.
    pub fn step(&self, state: &SimState, phases: &PhaseState) -> Result<SimState, SimError> {
        let vb = self.virtual_boundaries(state, phases);
        let mut next = state.clone();
        self.advance(state, &vb, phases, &mut next)?;
        Ok(next)
    }

    /// Runs the signal plan `cfg` from `state0` for `opts.horizon` seconds,
    /// averaging the objectives over every step that starts at or after
    /// `opts.warmup`.
    pub fn run(
        &self,
        state0: &SimState,
        cfg: &SignalConfiguration,
        opts: &RunOptions,
    ) -> Result<RunOutput, SimError> {
        let cfl = self.cfl();
        if !cfl.is_ok() {
            return Err(SimError::Cfl(cfl));
        }
        if !(opts.horizon > opts.warmup && opts.warmup >= 0.0) {
            return Err(SimError::Params(format!(
                "need horizon > warmup >= 0, got {} and {}",
                opts.horizon, opts.warmup
            )));
        }
        let plan = SignalPlan::new(self.net, cfg)?;
        let steps = steps_for(opts.horizon, self.params.dt);
        let warmup_steps = steps_for(opts.warmup, self.params.dt);

        let mut probes: Vec<f64> = opts.probes.clone();
        probes.sort_by(f64::total_cmp);
        let mut probes = probes.into_iter().peekable();
        let mut snapshots = Vec::new();

        let mut state = state0.clone();
        let mut next = state0.clone();
        let mut phases = PhaseState::all_green(self.net);
        let mut acc = MetricsAccumulator::default();
        for k in 0..steps {
            plan.fill(state.t, &mut phases.0);
            if k >= warmup_steps {
                acc.push(metrics::step_metrics(self.net, &state, &opts.metrics));
            }
            while let Some(&probe) = probes.peek() {
                if state.t + 1e-9 < probe {
                    break;
                }
                snapshots.push(Snapshot {
                    probe,
                    state: state.clone(),
                });
                probes.next();
            }
            let vb = self.virtual_boundaries(&state, &phases);
            self.advance(&state, &vb, &phases, &mut next)?;
            std::mem::swap(&mut state, &mut next);
        }
        for probe in probes {
            snapshots.push(Snapshot {
                probe,
                state: state.clone(),
            });
        }
        let metrics = acc.finish().map_err(|e| SimError::Params(e.to_string()))?;
        Ok(RunOutput {
            metrics,
            steps,
            warmup_steps,
            snapshots,
        })
    }
}
