//! Differential evolution over encoded signal plans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetRow};
use crate::metrics::CongestionMetrics;
use crate::signals::{ConfigSpace, SignalConfiguration, SignalError};
use crate::solver::{RunOptions, SimError, SimState, Simulator};
use crate::surrogate::{Surrogate, SurrogateError, SurrogateFile};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer settings: {0}")]
    Config(String),
    #[error("training table has no successful runs")]
    EmptyTable,
    #[error(transparent)]
    Signals(#[from] SignalError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    /// Defaults to `15 * dim`, capped at 150.
    pub population: Option<usize>,
    /// Mutation factor.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub generations: usize,
    /// Stop once the standard deviation of population values falls to
    /// `tol * |mean|`.
    pub tol: f64,
    pub seed: u64,
    /// Stop after this many objective evaluations (the initial population is
    /// always evaluated in full).
    pub max_evaluations: Option<usize>,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            population: None,
            f: 0.7,
            cr: 0.9,
            generations: 300,
            tol: 1e-8,
            seed: 0,
            max_evaluations: None,
        }
    }
}

impl DeConfig {
    pub fn population_for(&self, dim: usize) -> usize {
        self.population.unwrap_or((15 * dim).min(150))
    }

    fn check(&self, dim: usize) -> Result<(), OptimizeError> {
        let bad = |m: String| Err(OptimizeError::Config(m));
        if dim == 0 {
            return bad("dimension must be at least 1".into());
        }
        if self.population_for(dim) < 4 {
            return bad("population must have at least 4 members".into());
        }
        if !(self.f > 0.0 && self.f <= 2.0) {
            return bad(format!("mutation factor {} outside (0, 2]", self.f));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return bad(format!("crossover rate {} outside [0, 1]", self.cr));
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tolerance {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Best value after the initial population and after each generation.
    pub history: Vec<f64>,
    pub generations: usize,
    pub evaluations: usize,
}

fn converged(values: &[f64], tol: f64) -> bool {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() <= tol * mean.abs()
}

/// Minimizes `f` over `[0, 1]^dim` with rand/1/bin differential evolution.
/// Member 0 of the initial population is `seed_point` when given. Non-finite
/// objective values count as +inf.
pub fn differential_evolution<F>(
    f: F,
    dim: usize,
    de: &DeConfig,
    seed_point: Option<&[f64]>,
) -> Result<DeResult, OptimizeError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    de.check(dim)?;
    if let Some(s) = seed_point {
        if s.len() != dim || s.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(OptimizeError::Config(format!(
                "seed point must lie in [0, 1]^{dim}"
            )));
        }
    }
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let np = de.population_for(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(de.seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    if let Some(s) = seed_point {
        pop[0] = s.to_vec();
    }
    let mut values: Vec<f64> = pop.par_iter().map(|x| eval(x)).collect();
    let mut evaluations = np;

    let mut best = 0;
    for i in 1..np {
        if values[i] < values[best] {
            best = i;
        }
    }
    let mut best_x = pop[best].clone();
    let mut best_value = values[best];
    let mut history = vec![best_value];
    let mut generations = 0;

    while generations < de.generations && !converged(&values, de.tol) {
        let budget = de
            .max_evaluations
            .map_or(np, |m| m.saturating_sub(evaluations).min(np));
        if budget == 0 {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..budget)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.random_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let a = pick();
                let b = loop {
                    let r = pick();
                    if r != a {
                        break r;
                    }
                };
                let c = loop {
                    let r = pick();
                    if r != a && r != b {
                        break r;
                    }
                };
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        if j == forced || rng.random::<f64>() < de.cr {
                            (pop[a][j] + de.f * (pop[b][j] - pop[c][j])).clamp(0.0, 1.0)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_values: Vec<f64> = trials.par_iter().map(|x| eval(x)).collect();
        evaluations += budget;
        for (i, (x, v)) in trials.into_iter().zip(trial_values).enumerate() {
            if v < best_value {
                best_value = v;
                best_x.clone_from(&x);
            }
            if v <= values[i] {
                pop[i] = x;
                values[i] = v;
            }
        }
        generations += 1;
        history.push(best_value);
    }
    Ok(DeResult {
        x: best_x,
        value: best_value,
        history,
        generations,
        evaluations,
    })
}

/// Which metric to optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Maximize average speed.
    Speed,
    /// Minimize queue length.
    Queue,
}

impl Direction {
    /// Column of `[avg_speed, queue_length]`.
    pub fn column(self) -> usize {
        match self {
            Direction::Speed => 0,
            Direction::Queue => 1,
        }
    }

    /// Value to minimize.
    pub fn cost(self, value: f64) -> f64 {
        match self {
            Direction::Speed => -value,
            Direction::Queue => value,
        }
    }

    pub fn of(self, m: &CongestionMetrics) -> f64 {
        match self {
            Direction::Speed => m.avg_speed,
            Direction::Queue => m.queue_length,
        }
    }

    /// Best successful row of a training table.
    pub fn best_row(self, table: &Dataset) -> Option<&DatasetRow> {
        table.ok_rows().fold(None, |best: Option<&DatasetRow>, r| {
            let v = [r.avg_speed, r.queue_length][self.column()];
            match best {
                Some(b)
                    if self.cost([b.avg_speed, b.queue_length][self.column()]) <= self.cost(v) =>
                {
                    Some(b)
                }
                _ => Some(r),
            }
        })
    }
}

/// Estimates one metric of an encoded configuration.
pub trait Evaluator: Sync {
    fn space(&self) -> &ConfigSpace;
    fn direction(&self) -> Direction;
    fn value(&self, x: &[f64]) -> Result<f64, OptimizeError>;
}

/// Reads the metric off a trained model.
pub struct SurrogateEvaluator<'a> {
    file: &'a SurrogateFile,
    space: ConfigSpace,
    direction: Direction,
    output: usize,
}

impl<'a> SurrogateEvaluator<'a> {
    pub fn new(file: &'a SurrogateFile, direction: Direction) -> Result<Self, OptimizeError> {
        let output = file
            .output_for(direction.column())
            .ok_or(SurrogateError::MissingTarget(
                ["avg_speed", "queue_length"][direction.column()],
            ))?;
        Ok(SurrogateEvaluator {
            file,
            space: file.space(),
            direction,
            output,
        })
    }
}

impl Evaluator for SurrogateEvaluator<'_> {
    fn space(&self) -> &ConfigSpace {
        &self.space
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn value(&self, x: &[f64]) -> Result<f64, OptimizeError> {
        Ok(self.file.model.predict(x)?[self.output])
    }
}

/// Simulates the decoded configuration.
pub struct SimulationEvaluator<'a> {
    sim: &'a Simulator<'a>,
    state0: &'a SimState,
    opts: &'a RunOptions,
    space: ConfigSpace,
    direction: Direction,
}

impl<'a> SimulationEvaluator<'a> {
    pub fn new(
        sim: &'a Simulator<'a>,
        state0: &'a SimState,
        opts: &'a RunOptions,
        direction: Direction,
    ) -> Self {
        SimulationEvaluator {
            sim,
            state0,
            opts,
            space: ConfigSpace::for_network(sim.network()),
            direction,
        }
    }
}

impl Evaluator for SimulationEvaluator<'_> {
    fn space(&self) -> &ConfigSpace {
        &self.space
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn value(&self, x: &[f64]) -> Result<f64, OptimizeError> {
        let cfg = self.space.decode(x)?;
        let out = self.sim.run(self.state0, &cfg, self.opts)?;
        Ok(self.direction.of(&out.metrics))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimized {
    pub config: SignalConfiguration,
    /// Evaluator value of `config`.
    pub value: f64,
    pub seed_config: SignalConfiguration,
    pub seed_value: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub history: Vec<f64>,
}

/// Searches for the configuration with the best evaluator value, starting
/// from the best row of `table`. The continuous optimum is snapped to integer
/// timings and re-evaluated; the seed configuration is returned instead if
/// snapping made it worse.
pub fn optimize_config(
    evaluator: &dyn Evaluator,
    de: &DeConfig,
    table: &Dataset,
) -> Result<Optimized, OptimizeError> {
    let direction = evaluator.direction();
    let space = evaluator.space();
    let row = direction.best_row(table).ok_or(OptimizeError::EmptyTable)?;
    let seed_point = space.encode(&row.config)?;
    let seed_config = space.decode(&seed_point)?;
    let seed_value = evaluator.value(&seed_point)?;

    let res = differential_evolution(
        |x| direction.cost(evaluator.value(x).unwrap_or(f64::NAN)),
        space.dim(),
        de,
        Some(&seed_point),
    )?;
    let mut config = space.decode(&res.x)?;
    let mut value = evaluator.value(&space.encode(&config)?)?;
    if !(direction.cost(value) <= direction.cost(seed_value)) {
        log::info!(
            "rounded optimum ({value}) is worse than the seed ({seed_value}); keeping the seed"
        );
        config = seed_config.clone();
        value = seed_value;
    }
    Ok(Optimized {
        config,
        value,
        seed_config,
        seed_value,
        generations: res.generations,
        evaluations: res.evaluations,
        history: res.history,
    })
}

/// Simulates `cfg` from `state0` under `opts`.
pub fn validate_config(
    sim: &Simulator<'_>,
    state0: &SimState,
    cfg: &SignalConfiguration,
    opts: &RunOptions,
) -> Result<CongestionMetrics, SimError> {
    Ok(sim.run(state0, cfg, opts)?.metrics)
}

/// Summary written after an optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub objective: Direction,
    pub predicted_value: f64,
    pub seed_value: f64,
    pub simulated: Option<CongestionMetrics>,
    pub generations: usize,
    pub evaluations: usize,
    pub config: SignalConfiguration,
}
