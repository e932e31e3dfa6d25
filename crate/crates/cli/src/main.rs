use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pwtl::dataset::{self, Dataset};
use pwtl::fundamental::{self, FdParams};
use pwtl::heatmap;
use pwtl::metrics::{MetricsConfig, QueueFnParams, SpeedAverage};
use pwtl::optimizer::{
    self, DeConfig, Direction, Evaluator, OptimizeReport, SimulationEvaluator, SurrogateEvaluator,
};
use pwtl::solver::{self, RedEndRule, RunOptions, SimParams, SimState, Simulator};
use pwtl::surrogate::{
    self, fit_linear, fit_mlp, kfold_rmse, MlpHyper, Model, SurrogateFile, Target,
};
use pwtl::{RoadNetwork, SignalConfiguration};

/// Payne-Whitham traffic simulation with fixed-time signals, and signal
/// timing optimization.
#[derive(Parser)]
#[command(name = "pwtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the fundamental diagram to loop-counter data.
    CalibrateFd(CalibrateArgs),
    /// Run one simulation and write its metrics.
    Simulate(SimulateArgs),
    /// Simulate random signal plans and write the results table.
    GenDataset(GenDatasetArgs),
    /// Fit a surrogate model to a results table.
    TrainSurrogate(TrainArgs),
    /// Search for signal timings with differential evolution.
    Optimize(OptimizeArgs),
    /// Simulate a signal plan with the standard protocol.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with columns interval_s,count,avg_speed_mps.
    #[arg(long)]
    counters: PathBuf,
    /// Keep the free-flow speed fixed (m/s) and fit only the shape.
    #[arg(long)]
    fix_vmax: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RedEnd {
    Jam,
    CopyLast,
}

/// Model and protocol settings shared by every simulating command.
#[derive(Args)]
struct SimArgs {
    /// Fundamental diagram (output of calibrate-fd); defaults to
    /// v_max 13.68, rho_cr 0.05, a 1.24.
    #[arg(long)]
    fd: Option<PathBuf>,
    /// Time step (s).
    #[arg(long, default_value_t = 0.5)]
    dt: f64,
    /// Relaxation time (s).
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    /// Anticipation coefficient (m^2/s).
    #[arg(long, default_value_t = 7.0)]
    c: f64,
    /// Density guard in the anticipation term (cars/m).
    #[arg(long, default_value_t = 0.008)]
    chi: f64,
    /// Jam density (cars/m per lane).
    #[arg(long, default_value_t = 0.2)]
    rho_jam: f64,
    /// Density floor (cars/m per lane).
    #[arg(long, default_value_t = 1e-4)]
    rho_floor: f64,
    /// Relative noise on initial cell speeds.
    #[arg(long, default_value_t = 0.05)]
    init_noise: f64,
    /// Seed of the initial-speed noise.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Ghost density behind a red light.
    #[arg(long, value_enum, default_value = "jam")]
    red_end: RedEnd,
    /// Speed (m/s) for roads missing from the initial-speed file.
    #[arg(long)]
    default_speed: Option<f64>,
    /// Simulated time (s).
    #[arg(long, default_value_t = 340.0)]
    horizon: f64,
    /// Initial time excluded from the metrics (s).
    #[arg(long, default_value_t = 100.0)]
    warmup: f64,
    /// Weight the average speed by the number of cars in each cell.
    #[arg(long)]
    density_weighted: bool,
    /// Steepness of the queue classifier.
    #[arg(long, default_value_t = 3.0)]
    queue_c: f64,
    /// Speed threshold of the queue classifier (m/s).
    #[arg(long, default_value_t = 5.0)]
    queue_speed: f64,
}

impl SimArgs {
    fn params(&self) -> SimParams {
        SimParams {
            nu: self.nu,
            c: self.c,
            chi: self.chi,
            dt: self.dt,
            rho_jam: self.rho_jam,
            rho_floor: self.rho_floor,
            init_noise: self.init_noise,
            seed: self.init_seed,
            red_end: match self.red_end {
                RedEnd::Jam => RedEndRule::Jam,
                RedEnd::CopyLast => RedEndRule::CopyLast,
            },
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            horizon: self.horizon,
            warmup: self.warmup,
            probes: Vec::new(),
            metrics: MetricsConfig {
                queue: QueueFnParams {
                    c: self.queue_c,
                    v_q: self.queue_speed,
                },
                speed_average: if self.density_weighted {
                    SpeedAverage::DensityWeighted
                } else {
                    SpeedAverage::Unweighted
                },
            },
        }
    }

    fn fd_defaults(&self) -> Result<FdParams> {
        match &self.fd {
            None => Ok(FdParams::default()),
            Some(path) => {
                let p: FdParams = read_json(path)?;
                p.validate()
                    .with_context(|| format!("{}", path.display()))?;
                Ok(p)
            }
        }
    }
}

/// A network, its initial state and a ready simulator.
struct Setup {
    net: RoadNetwork,
    fd: Vec<FdParams>,
    params: SimParams,
    state0: SimState,
}

impl Setup {
    fn load(network: &Path, init: Option<&Path>, sim: &SimArgs) -> Result<Self> {
        let net = RoadNetwork::load(network)?;
        let params = sim.params();
        params.check()?;
        let cfl = solver::check_cfl(&net, params.dt);
        if !cfl.is_ok() {
            bail!(
                "time step {} violates the CFL condition; use a smaller --dt or longer roads:\n{}",
                params.dt,
                cfl
            );
        }
        let fd = solver::fd_table(&net, &sim.fd_defaults()?);
        let observed = match init {
            Some(p) => solver::read_initial_speeds(p)?,
            None => HashMap::new(),
        };
        for id in observed.keys() {
            if net.edge_index(id).is_none() {
                log::warn!("initial speed given for unknown edge {id}");
            }
        }
        let state0 = solver::initialize(&net, &fd, &observed, sim.default_speed, &params)?;
        Ok(Setup {
            net,
            fd,
            params,
            state0,
        })
    }

    fn simulator(&self) -> Result<Simulator<'_>> {
        Ok(Simulator::new(&self.net, self.fd.clone(), self.params)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    network: PathBuf,
    /// CSV with columns edge_id,speed_mps.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Signal plan (JSON); required when the network has signals.
    #[arg(long)]
    lights: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    /// Density heatmap: `.pgm` for an image of the last probe, anything else
    /// for a cell table of every probe.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Snapshot times for the heatmap (s); defaults to the horizon.
    #[arg(long, value_delimiter = ',')]
    probe: Vec<f64>,
    /// Metrics output (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to PWTL_JOBS or the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Speed,
    Queue,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "both")]
    target: TargetArg,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the MLP hyperparameter grid and train with the defaults.
    #[arg(long)]
    no_grid: bool,
    /// Maximum MLP training epochs.
    #[arg(long, default_value_t = 500)]
    max_epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Speed,
    Queue,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    network: PathBuf,
    /// Surrogate model file (output of train-surrogate).
    #[arg(long, required_unless_present = "direct", conflicts_with = "direct")]
    model: Option<PathBuf>,
    /// Evaluate candidates with the simulator instead of a surrogate.
    #[arg(long)]
    direct: bool,
    /// Initial speeds; needed with --direct, and to simulate the result.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum)]
    objective: Objective,
    /// Training table whose best row seeds the search.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    generations: usize,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    mutation: f64,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    /// Stop after this many evaluations.
    #[arg(long)]
    max_evals: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
    /// Best signal plan (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Run report (JSON); defaults to the plan path with `.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    lights: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn default_jobs() -> usize {
    std::env::var("PWTL_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn load_lights(path: Option<&Path>, net: &RoadNetwork) -> Result<SignalConfiguration> {
    let cfg = match path {
        Some(p) => SignalConfiguration::load(p)?,
        None => SignalConfiguration::default(),
    };
    cfg.check_against(net).with_context(|| match path {
        Some(p) => format!("signal plan {}", p.display()),
        None => "no --lights given".to_string(),
    })?;
    Ok(cfg)
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let counters = fundamental::read_counters(&args.counters)?;
    let samples = fundamental::samples_from_counters(&counters);
    let fit = fundamental::fit_fd(&samples, FdParams::default(), args.fix_vmax)?;
    println!(
        "v_max = {:.4} m/s, rho_cr = {:.5} cars/m, a = {:.4}, sse = {:.6} ({} samples)",
        fit.v_max,
        fit.rho_cr,
        fit.a,
        fit.sse,
        samples.len()
    );
    if !fit.converged {
        log::warn!("fit stopped at the iteration limit");
    }
    write_json(&args.out, &fit)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let setup = Setup::load(&args.network, args.init.as_deref(), &args.sim)?;
    let cfg = load_lights(args.lights.as_deref(), &setup.net)?;
    let sim = setup.simulator()?;
    let mut opts = args.sim.options();
    if args.heatmap.is_some() {
        opts.probes = if args.probe.is_empty() {
            vec![opts.horizon]
        } else {
            args.probe.clone()
        };
    }
    let out = sim.run(&setup.state0, &cfg, &opts)?;
    let report = out.report();
    println!(
        "avg_speed = {:.4} m/s, queue_length = {:.4} ({} steps, {} sampled)",
        report.avg_speed_mps, report.queue_length, report.steps, report.samples
    );
    write_json(&args.out, &report)?;
    if let Some(path) = &args.heatmap {
        let is_pgm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if is_pgm {
            let last = out.snapshots.last().expect("at least one probe");
            heatmap::write_density_pgm(&setup.net, last, setup.params.rho_jam, path)
        } else {
            heatmap::write_heatmap_csv(&setup.net, &out.snapshots, path)
        }
        .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn gen_dataset(args: GenDatasetArgs) -> Result<()> {
    let setup = Setup::load(&args.network, args.init.as_deref(), &args.sim)?;
    let sim = setup.simulator()?;
    let jobs = args.jobs.unwrap_or_else(default_jobs);
    let started = std::time::Instant::now();
    let table = dataset::generate(
        &sim,
        &setup.state0,
        &args.sim.options(),
        args.runs,
        args.seed,
        jobs,
    )?;
    dataset::write_csv(&table, &args.out)?;
    let (x, y) = table.training_data();
    let speeds: Vec<f64> = y.iter().map(|r| r[0]).collect();
    let queues: Vec<f64> = y.iter().map(|r| r[1]).collect();
    println!(
        "{} runs ({} failed) on {} workers in {:.1} s",
        table.rows.len(),
        table.failures(),
        jobs,
        started.elapsed().as_secs_f64()
    );
    if let Some(r) = dataset::pearson(&speeds, &queues) {
        println!("speed/queue correlation over {} runs: {:.3}", x.len(), r);
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let table = dataset::read_csv(&args.data)?;
    if table.failures() > 0 {
        log::warn!("ignoring {} failed runs", table.failures());
    }
    let (rows, metrics) = table.training_data();
    if rows.is_empty() {
        bail!("{} has no successful runs", args.data.display());
    }
    let target = match args.target {
        TargetArg::Speed => Target::Speed,
        TargetArg::Queue => Target::Queue,
        TargetArg::Both => Target::Both,
    };
    let x = surrogate::features_matrix(&rows);
    let y = surrogate::targets_matrix(&metrics, target);
    let (model, cv) = match args.model {
        ModelKind::Linear => {
            let cv = kfold_rmse(&x, &y, args.folds, args.seed, fit_linear)?;
            (Model::Linear(fit_linear(&x, &y)?), cv)
        }
        ModelKind::Mlp => {
            let base = MlpHyper {
                max_epochs: args.max_epochs,
                ..Default::default()
            };
            let (hyper, cv) = if args.no_grid {
                let cv = kfold_rmse(&x, &y, args.folds, args.seed, |xt, yt| {
                    fit_mlp(xt, yt, &base, args.seed)
                })?;
                (base, cv)
            } else {
                let grid = surrogate::grid_search(&x, &y, args.folds, args.seed, &base)?;
                let best = grid.best().clone();
                println!(
                    "selected activation {:?}, alpha {}, learning rate {}",
                    best.hyper.activation, best.hyper.alpha, best.hyper.learning_rate
                );
                (best.hyper, best.cv)
            };
            (Model::Mlp(fit_mlp(&x, &y, &hyper, args.seed)?), cv)
        }
    };
    for (name, r) in target.names().iter().zip(&cv.per_target) {
        println!("{}-fold RMSE {name}: {r:.6}", cv.folds);
    }
    if cv.per_target.len() > 1 {
        println!("mean RMSE: {:.6}", cv.mean);
    }
    SurrogateFile::new(&table.space(), target, model, Some(cv)).save(&args.out)?;
    Ok(())
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let direction = match args.objective {
        Objective::Speed => Direction::Speed,
        Objective::Queue => Direction::Queue,
    };
    let table: Dataset = dataset::read_csv(&args.data)?;
    let setup = Setup::load(&args.network, args.init.as_deref(), &args.sim)?;
    if args.direct && args.init.is_none() && args.sim.default_speed.is_none() {
        bail!("--direct needs --init or --default-speed");
    }
    let network_ids = setup.net.signalized_ids();
    if table.ids != network_ids {
        bail!(
            "training table covers intersections {:?} but the network has {:?}",
            table.ids,
            network_ids
        );
    }
    let de = DeConfig {
        population: args.population,
        f: args.mutation,
        cr: args.crossover,
        generations: args.generations,
        seed: args.seed,
        max_evaluations: args.max_evals,
        ..Default::default()
    };
    let sim = setup.simulator()?;
    let opts = args.sim.options();
    let surrogate_file;
    let evaluator: Box<dyn Evaluator> = match &args.model {
        Some(path) => {
            surrogate_file = SurrogateFile::load(path)?;
            if surrogate_file.intersections != network_ids {
                bail!(
                    "model {} was trained on intersections {:?} but the network has {:?}",
                    path.display(),
                    surrogate_file.intersections,
                    network_ids
                );
            }
            Box::new(SurrogateEvaluator::new(&surrogate_file, direction)?)
        }
        None => Box::new(SimulationEvaluator::new(
            &sim,
            &setup.state0,
            &opts,
            direction,
        )),
    };
    let result = optimizer::optimize_config(evaluator.as_ref(), &de, &table)?;
    println!(
        "best {:?}: {:.4} (seed row {:.4}) after {} generations, {} evaluations",
        direction, result.value, result.seed_value, result.generations, result.evaluations
    );
    let simulated = if args.init.is_some() || args.sim.default_speed.is_some() {
        let m = optimizer::validate_config(&sim, &setup.state0, &result.config, &opts)?;
        println!(
            "simulated: avg_speed = {:.4} m/s, queue_length = {:.4}",
            m.avg_speed, m.queue_length
        );
        Some(m)
    } else {
        None
    };
    result
        .config
        .save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(
        &report_path,
        &OptimizeReport {
            objective: direction,
            predicted_value: result.value,
            seed_value: result.seed_value,
            simulated,
            generations: result.generations,
            evaluations: result.evaluations,
            config: result.config,
        },
    )
}

fn validate(args: ValidateArgs) -> Result<()> {
    let setup = Setup::load(&args.network, args.init.as_deref(), &args.sim)?;
    let cfg = load_lights(Some(&args.lights), &setup.net)?;
    let sim = setup.simulator()?;
    let out = sim.run(&setup.state0, &cfg, &args.sim.options())?;
    let report = out.report();
    println!(
        "avg_speed = {:.4} m/s, queue_length = {:.4}",
        report.avg_speed_mps, report.queue_length
    );
    write_json(&args.out, &report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CalibrateFd(a) => calibrate(a),
        Command::Simulate(a) => simulate(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::TrainSurrogate(a) => train(a),
        Command::Optimize(a) => optimize(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
