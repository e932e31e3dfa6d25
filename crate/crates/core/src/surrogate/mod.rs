//! Learned approximations of the configuration -> metrics map.
//!
//! Features are encoded signal plans (see [`ConfigSpace`]), one row per run.
//! Targets are average speed, queue length, or both (in that column order).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{ConfigSpace, MAX_DURATION, MIN_DURATION};

pub mod cv;
pub mod linear;
pub mod mlp;

pub use cv::{grid_search, kfold_rmse, CvReport, GridResult};
pub use linear::{fit_linear, LinearModel};
pub use mlp::{fit_mlp, Activation, MlpHyper, MlpModel};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("no training rows")]
    Empty,
    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{rows} feature rows but {targets} target rows")]
    RowMismatch { rows: usize, targets: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("normal equations could not be solved")]
    Singular,
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("model does not predict {0}")]
    MissingTarget(&'static str),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// Which metrics a model predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Speed,
    Queue,
    Both,
}

impl Target {
    /// Columns of `[avg_speed, queue_length]` used.
    pub fn columns(self) -> &'static [usize] {
        match self {
            Target::Speed => &[0],
            Target::Queue => &[1],
            Target::Both => &[0, 1],
        }
    }

    pub fn names(self) -> Vec<&'static str> {
        self.columns()
            .iter()
            .map(|&c| ["avg_speed", "queue_length"][c])
            .collect()
    }
}

/// A fitted model mapping encoded configurations to target values.
pub trait Surrogate {
    fn n_features(&self) -> usize;
    fn n_targets(&self) -> usize;
    /// Predictions for every row of `x`; `x` must have `n_features` columns.
    fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>, SurrogateError> {
        if x.len() != self.n_features() {
            return Err(SurrogateError::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.predict_rows(&row).row(0).iter().copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Surrogate for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features(),
            Model::Mlp(m) => m.n_features(),
        }
    }

    fn n_targets(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_targets(),
            Model::Mlp(m) => m.n_targets(),
        }
    }

    fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Model::Linear(m) => m.predict_rows(x),
            Model::Mlp(m) => m.predict_rows(x),
        }
    }
}

pub fn features_matrix(x: &[Vec<f64>]) -> DMatrix<f64> {
    let d = x.first().map_or(0, Vec::len);
    DMatrix::from_fn(x.len(), d, |i, j| x[i][j])
}

pub fn targets_matrix(y: &[[f64; 2]], target: Target) -> DMatrix<f64> {
    let cols = target.columns();
    DMatrix::from_fn(y.len(), cols.len(), |i, j| y[i][cols[j]])
}

/// Root mean squared error of each column.
pub fn rmse(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows().max(1) as f64;
    (0..y.ncols())
        .map(|j| {
            let sse: f64 = pred
                .column(j)
                .iter()
                .zip(y.column(j).iter())
                .map(|(p, t)| (p - t).powi(2))
                .sum();
            (sse / n).sqrt()
        })
        .collect()
}

pub(crate) fn check_shapes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(), SurrogateError> {
    if x.nrows() == 0 {
        return Err(SurrogateError::Empty);
    }
    if x.nrows() != y.nrows() {
        return Err(SurrogateError::RowMismatch {
            rows: x.nrows(),
            targets: y.nrows(),
        });
    }
    Ok(())
}

/// How raw timings map to the unit interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub duration_min: u32,
    pub duration_max: u32,
    /// Offsets are divided by `red + green - 1` of their own intersection.
    pub offset_divisor: String,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            duration_min: MIN_DURATION,
            duration_max: MAX_DURATION,
            offset_divisor: "red + green - 1".into(),
        }
    }
}

/// A model together with what it was trained on, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFile {
    /// Intersection ids in feature order.
    pub intersections: Vec<String>,
    pub features: Vec<String>,
    pub normalization: Normalization,
    pub target: Target,
    pub targets: Vec<String>,
    #[serde(default)]
    pub cv: Option<CvReport>,
    pub model: Model,
}

impl SurrogateFile {
    pub fn new(space: &ConfigSpace, target: Target, model: Model, cv: Option<CvReport>) -> Self {
        let features = space
            .ids()
            .iter()
            .flat_map(|id| ["red", "green", "offset"].map(|f| format!("{id}_{f}")))
            .collect();
        SurrogateFile {
            intersections: space.ids().to_vec(),
            features,
            normalization: Normalization::default(),
            target,
            targets: target.names().into_iter().map(String::from).collect(),
            cv,
            model,
        }
    }

    pub fn space(&self) -> ConfigSpace {
        ConfigSpace::new(self.intersections.clone())
    }

    /// Column of the model output holding `column` of `[avg_speed, queue_length]`.
    pub fn output_for(&self, column: usize) -> Option<usize> {
        self.target.columns().iter().position(|&c| c == column)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| SurrogateError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        let err = |message: String| SurrogateError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: SurrogateFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if file.model.n_features() != file.features.len() {
            return Err(err(format!(
                "model has {} inputs but {} features are listed",
                file.model.n_features(),
                file.features.len()
            )));
        }
        if file.model.n_targets() != file.target.columns().len() {
            return Err(err("model outputs do not match its target".into()));
        }
        Ok(file)
    }
}
