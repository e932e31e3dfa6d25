//! Least-squares linear regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_shapes, Surrogate, SurrogateError};

const RIDGE: f64 = 1e-8;

/// `y_t = intercept_t + weights_t . x` for each target `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// One row of feature weights per target.
    pub weights: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl Surrogate for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn n_targets(&self) -> usize {
        self.intercept.len()
    }

    fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), self.n_targets(), |i, t| {
            self.intercept[t]
                + self.weights[t]
                    .iter()
                    .zip(x.row(i).iter())
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
    }
}

/// Solves the centred normal equations with a small ridge term, so constant
/// or collinear features are tolerated.
pub fn fit_linear(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LinearModel, SurrogateError> {
    check_shapes(x, y)?;
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let d = x.ncols();
    let gram = xc.tr_mul(&xc) + DMatrix::<f64>::identity(d, d) * RIDGE;
    let rhs = xc.tr_mul(&yc);
    let chol = gram.cholesky().ok_or(SurrogateError::Singular)?;
    let w = chol.solve(&rhs);

    let mut weights = Vec::with_capacity(y.ncols());
    let mut intercept = Vec::with_capacity(y.ncols());
    for t in 0..y.ncols() {
        let col: DVector<f64> = w.column(t).into_owned();
        intercept.push(
            y_mean[t]
                - x_mean
                    .iter()
                    .zip(col.iter())
                    .map(|(m, w)| m * w)
                    .sum::<f64>(),
        );
        weights.push(col.iter().copied().collect());
    }
    Ok(LinearModel { weights, intercept })
}
