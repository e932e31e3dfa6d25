use pwtl::dataset::{self, Dataset};
use pwtl::fixtures;
use pwtl::fundamental::FdParams;
use pwtl::optimizer::{self, DeConfig, Direction, SimulationEvaluator, SurrogateEvaluator};
use pwtl::solver::{fd_table, initialize, parse_initial_speeds, RunOptions};
use pwtl::surrogate::{self, fit_linear, Model, SurrogateFile, Target};
use pwtl::{RoadNetwork, SimParams, SimState, Simulator};

fn setup(net: &RoadNetwork) -> (Simulator<'_>, SimState) {
    let p = SimParams::default();
    let sim = Simulator::new(net, fd_table(net, &FdParams::default()), p).unwrap();
    let observed = parse_initial_speeds(fixtures::TWO_INTERSECTIONS_INIT_CSV).unwrap();
    let s0 = initialize(net, sim.fd(), &observed, None, &p).unwrap();
    (sim, s0)
}

fn short_run() -> RunOptions {
    RunOptions {
        horizon: 160.0,
        warmup: 40.0,
        ..Default::default()
    }
}

#[test]
fn simulation_search_beats_random_plans() {
    let net = fixtures::two_intersections();
    let (sim, s0) = setup(&net);
    let opts = short_run();
    let table = dataset::generate(&sim, &s0, &opts, 50, 3, 4).unwrap();
    let best = table
        .ok_rows()
        .map(|r| r.avg_speed)
        .fold(f64::NEG_INFINITY, f64::max);

    let ev = SimulationEvaluator::new(&sim, &s0, &opts, Direction::Speed);
    let de = DeConfig {
        max_evaluations: Some(200),
        ..Default::default()
    };
    let found = optimizer::optimize_config(&ev, &de, &table).unwrap();
    assert!(found.evaluations <= 200);
    assert!(found.value >= best, "{} < {best}", found.value);
    let m = optimizer::validate_config(&sim, &s0, &found.config, &opts).unwrap();
    assert_eq!(m.avg_speed, found.value);
}

#[test]
fn table_survives_csv_and_surrogate_survives_json() {
    let net = fixtures::two_intersections();
    let (sim, s0) = setup(&net);
    let table = dataset::generate(&sim, &s0, &short_run(), 30, 11, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    dataset::write_csv(&table, &csv).unwrap();
    let back: Dataset = dataset::read_csv(&csv).unwrap();
    assert_eq!(back.ids, table.ids);
    assert_eq!(back.training_data(), table.training_data());

    let (rows, y) = back.training_data();
    let model = fit_linear(
        &surrogate::features_matrix(&rows),
        &surrogate::targets_matrix(&y, Target::Queue),
    )
    .unwrap();
    let file = SurrogateFile::new(&back.space(), Target::Queue, Model::Linear(model), None);
    let path = dir.path().join("model.json");
    file.save(&path).unwrap();
    let loaded = SurrogateFile::load(&path).unwrap();
    assert_eq!(loaded, file);

    let ev = SurrogateEvaluator::new(&loaded, Direction::Queue).unwrap();
    let found = optimizer::optimize_config(&ev, &DeConfig::default(), &back).unwrap();
    assert!(found.value <= found.seed_value);
    assert!(SurrogateEvaluator::new(&loaded, Direction::Speed).is_err());
}

#[test]
fn validation_is_repeatable() {
    let net = fixtures::two_intersections();
    let (sim, s0) = setup(&net);
    let table = dataset::generate(&sim, &s0, &short_run(), 5, 1, 1).unwrap();
    let cfg = &table.rows[0].config;
    let a = optimizer::validate_config(&sim, &s0, cfg, &short_run()).unwrap();
    let b = optimizer::validate_config(&sim, &s0, cfg, &short_run()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.avg_speed, table.rows[0].avg_speed);
    assert_eq!(a.queue_length, table.rows[0].queue_length);
}
