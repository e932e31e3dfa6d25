//! Batch runs over random signal plans, and the CSV table they produce.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::CongestionMetrics;
use crate::signals::{sample_config, ConfigSpace, IntersectionSignal, SignalConfiguration};
use crate::solver::{RunOptions, SimState, Simulator};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least one run")]
    NoRuns,
    #[error("network has no signalized intersections")]
    NoSignals,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("could not build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: String, column: String },
    #[error("{path}, line {line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }

    fn as_field(&self) -> String {
        match self {
            RunStatus::Ok => "ok".into(),
            RunStatus::Failed(msg) => format!("failed:{msg}"),
        }
    }

    fn parse(field: &str) -> Option<Self> {
        match field {
            "ok" => Some(RunStatus::Ok),
            _ => field
                .strip_prefix("failed:")
                .map(|m| RunStatus::Failed(m.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRow {
    pub run_id: u64,
    /// Seed the configuration of this run was drawn with.
    pub seed: u64,
    pub config: SignalConfiguration,
    /// NaN for failed runs.
    pub avg_speed: f64,
    /// NaN for failed runs.
    pub queue_length: f64,
    pub status: RunStatus,
}

/// Rows ordered by run id, over the intersections `ids` (sorted).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn ok_rows(&self) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(|r| r.status.is_ok())
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace::new(self.ids.clone())
    }

    /// Encoded configurations and `(avg_speed, queue_length)` of successful runs.
    pub fn training_data(&self) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let space = self.space();
        self.ok_rows()
            .map(|r| {
                let x = space
                    .encode(&r.config)
                    .expect("rows cover the dataset intersections");
                (x, [r.avg_speed, r.queue_length])
            })
            .unzip()
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.ok_rows().count()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run_id` under `master`.
pub fn run_seed(master: u64, run_id: u64) -> u64 {
    splitmix64(splitmix64(master) ^ run_id)
}

/// Runs one configuration drawn from `seed`. Simulator failures become a
/// failed row. Panics if the network has no signalized intersection.
pub fn run_one(
    sim: &Simulator<'_>,
    state0: &SimState,
    opts: &RunOptions,
    run_id: u64,
    seed: u64,
) -> DatasetRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = sample_config(sim.network(), &mut rng).expect("network has signals");
    let (metrics, status) = match sim.run(state0, &config, opts) {
        Ok(out) => (out.metrics, RunStatus::Ok),
        Err(e) => {
            log::warn!("run {run_id} failed: {e}");
            let msg = e.to_string().replace(['\n', '\r'], " ");
            (
                CongestionMetrics {
                    avg_speed: f64::NAN,
                    queue_length: f64::NAN,
                    samples: 0,
                },
                RunStatus::Failed(msg.trim().to_string()),
            )
        }
    };
    DatasetRow {
        run_id,
        seed,
        config,
        avg_speed: metrics.avg_speed,
        queue_length: metrics.queue_length,
        status,
    }
}

/// Runs `n_runs` random signal plans from the shared state `state0` on a pool
/// of `workers` threads. The table depends only on the inputs and `seed`.
pub fn generate(
    sim: &Simulator<'_>,
    state0: &SimState,
    opts: &RunOptions,
    n_runs: usize,
    seed: u64,
    workers: usize,
) -> Result<Dataset, DatasetError> {
    if n_runs == 0 {
        return Err(DatasetError::NoRuns);
    }
    if workers == 0 {
        return Err(DatasetError::NoWorkers);
    }
    if sim.network().signalized_ids().is_empty() {
        return Err(DatasetError::NoSignals);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    let rows: Vec<DatasetRow> = pool.install(|| {
        (0..n_runs as u64)
            .into_par_iter()
            .map(|i| run_one(sim, state0, opts, i, run_seed(seed, i)))
            .collect()
    });
    let failed = rows.iter().filter(|r| !r.status.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {n_runs} runs failed");
    }
    Ok(Dataset {
        ids: sim.network().signalized_ids(),
        rows,
    })
}

pub fn header(ids: &[String]) -> Vec<String> {
    let mut h = vec!["run_id".to_string(), "seed".to_string()];
    for id in ids {
        for field in ["red", "green", "offset"] {
            h.push(format!("{id}_{field}"));
        }
    }
    h.extend(["avg_speed", "queue_length", "status"].map(String::from));
    h
}

pub fn write_csv(table: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header(&table.ids)).map_err(csv_err)?;
    for row in &table.rows {
        let mut rec = vec![row.run_id.to_string(), row.seed.to_string()];
        for id in &table.ids {
            let s = row.config.get(id).copied().unwrap_or(IntersectionSignal {
                red: 0,
                green: 0,
                offset: 0,
            });
            rec.extend([s.red, s.green, s.offset].map(|v| v.to_string()));
        }
        rec.push(row.avg_speed.to_string());
        rec.push(row.queue_length.to_string());
        rec.push(row.status.as_field());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let p = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|source| DatasetError::Csv {
        path: p.clone(),
        source,
    })?;
    let head: Vec<String> = r
        .headers()
        .map_err(|source| DatasetError::Csv {
            path: p.clone(),
            source,
        })?
        .iter()
        .map(String::from)
        .collect();
    let col = |name: &str| {
        head.iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn {
                path: p.clone(),
                column: name.to_string(),
            })
    };
    let run_col = col("run_id")?;
    let seed_col = col("seed")?;
    let speed_col = col("avg_speed")?;
    let queue_col = col("queue_length")?;
    let status_col = col("status")?;

    let mut ids: Vec<String> = head
        .iter()
        .filter_map(|h| h.strip_suffix("_red").map(String::from))
        .collect();
    ids.sort();
    let mut signal_cols = Vec::new();
    for id in &ids {
        signal_cols.push([
            col(&format!("{id}_red"))?,
            col(&format!("{id}_green"))?,
            col(&format!("{id}_offset"))?,
        ]);
    }

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|source| DatasetError::Csv {
            path: p.clone(),
            source,
        })?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let bad = |message: String| DatasetError::Row {
            path: p.clone(),
            line,
            message,
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<u64>()
                .map_err(|e| bad(format!("{}: {e}", head[i])))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", head[i])))
        };
        let mut config = BTreeMap::new();
        for (id, cols) in ids.iter().zip(&signal_cols) {
            let [red, green, offset] = cols.map(|c| {
                int(c).and_then(|v| u32::try_from(v).map_err(|e| bad(format!("{}: {e}", head[c]))))
            });
            let s = IntersectionSignal {
                red: red?,
                green: green?,
                offset: offset?,
            };
            s.check()
                .map_err(|m| bad(format!("intersection {id}: {m}")))?;
            config.insert(id.clone(), s);
        }
        let status = RunStatus::parse(field(status_col)).ok_or_else(|| {
            bad(format!(
                "status: unrecognized value {:?}",
                field(status_col)
            ))
        })?;
        rows.push(DatasetRow {
            run_id: int(run_col)?,
            seed: int(seed_col)?,
            config: SignalConfiguration(config),
            avg_speed: real(speed_col)?,
            queue_length: real(queue_col)?,
            status,
        });
    }
    Ok(Dataset { ids, rows })
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
