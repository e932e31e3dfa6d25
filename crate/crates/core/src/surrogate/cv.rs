//! K-fold cross-validation and the MLP hyperparameter grid.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{fit_mlp, Activation, MlpHyper};
use super::{check_shapes, Surrogate, SurrogateError};

/// Out-of-fold RMSE per target column, pooled over all folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub per_target: Vec<f64>,
    pub mean: f64,
}

/// Shuffles rows with `seed`, splits them into `k` contiguous folds, fits on
/// each complement and scores the held-out fold.
pub fn kfold_rmse<M, F>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    k: usize,
    seed: u64,
    fit: F,
) -> Result<CvReport, SurrogateError>
where
    M: Surrogate,
    F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> Result<M, SurrogateError> + Sync,
{
    check_shapes(x, y)?;
    let n = x.nrows();
    if k < 2 || n < k {
        return Err(SurrogateError::TooFewRows {
            rows: n,
            needed: k.max(2),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let fold_sse: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let test = &order[lo..hi];
            let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            let model = fit(&x.select_rows(&train), &y.select_rows(&train))?;
            let pred = model.predict_rows(&x.select_rows(test));
            let truth = y.select_rows(test);
            Ok((0..y.ncols())
                .map(|j| {
                    pred.column(j)
                        .iter()
                        .zip(truth.column(j).iter())
                        .map(|(p, t)| (p - t).powi(2))
                        .sum()
                })
                .collect())
        })
        .collect::<Result<_, SurrogateError>>()?;

    let per_target: Vec<f64> = (0..y.ncols())
        .map(|j| (fold_sse.iter().map(|s| s[j]).sum::<f64>() / n as f64).sqrt())
        .collect();
    let mean = per_target.iter().sum::<f64>() / per_target.len() as f64;
    Ok(CvReport {
        folds: k,
        per_target,
        mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub hyper: MlpHyper,
    pub cv: CvReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: usize,
    pub trials: Vec<GridTrial>,
}

impl GridResult {
    pub fn best(&self) -> &GridTrial {
        &self.trials[self.best]
    }
}

/// Every combination of activation (tanh, relu), L2 strength (1e-4, 1e-3)
/// and learning rate (1e-3, 1e-2), on top of `base`.
pub fn mlp_grid(base: &MlpHyper) -> Vec<MlpHyper> {
    let mut out = Vec::new();
    for activation in [Activation::Tanh, Activation::Relu] {
        for alpha in [1e-4, 1e-3] {
            for learning_rate in [1e-3, 1e-2] {
                out.push(MlpHyper {
                    activation,
                    alpha,
                    learning_rate,
                    ..base.clone()
                });
            }
        }
    }
    out
}

/// Scores every grid point by mean k-fold RMSE; ties keep the earlier point.
pub fn grid_search(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    k: usize,
    seed: u64,
    base: &MlpHyper,
) -> Result<GridResult, SurrogateError> {
    let trials = mlp_grid(base)
        .into_iter()
        .map(|hyper| {
            let cv = kfold_rmse(x, y, k, seed, |xt, yt| fit_mlp(xt, yt, &hyper, seed))?;
            log::info!(
                "{:?} alpha={} lr={}: rmse {:?}",
                hyper.activation,
                hyper.alpha,
                hyper.learning_rate,
                cv.per_target
            );
            Ok(GridTrial { hyper, cv })
        })
        .collect::<Result<Vec<_>, SurrogateError>>()?;
    let best = trials.iter().enumerate().fold(
        0,
        |b, (i, t)| if t.cv.mean < trials[b].cv.mean { i } else { b },
    );
    Ok(GridResult { best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{fit_linear, LinearModel};
    use rand::Rng;

    fn planted(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(n, 6, |_, _| rng.random::<f64>());
        let y = DMatrix::from_fn(n, 1, |i, _| 2.0 * x[(i, 0)] - 3.0 * x[(i, 3)] + 1.0);
        (x, y)
    }

    #[test]
    fn perfect_predictor_scores_zero() {
        let (x, y) = planted(100);
        let cv = kfold_rmse(&x, &y, 5, 1, fit_linear).unwrap();
        assert!(cv.per_target[0] < 1e-6);
    }

    #[test]
    fn constant_predictor_scores_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let sigma = 2.0;
        let y = DMatrix::from_fn(n, 1, |_, _| {
            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let constant = |_: &DMatrix<f64>, yt: &DMatrix<f64>| {
            Ok(LinearModel {
                weights: vec![vec![0.0; 2]],
                intercept: vec![yt.mean()],
            })
        };
        let cv = kfold_rmse(&x, &y, 5, 3, constant).unwrap();
        assert!((cv.per_target[0] - sigma).abs() < 0.1, "{cv:?}");
    }

    #[test]
    fn leave_one_out_and_too_few_rows() {
        let (x, y) = planted(10);
        let cv = kfold_rmse(&x, &y, 10, 4, fit_linear).unwrap();
        assert!(cv.per_target[0].is_finite());
        assert!(matches!(
            kfold_rmse(&x, &y, 11, 4, fit_linear),
            Err(SurrogateError::TooFewRows { .. })
        ));
        let a = kfold_rmse(&x, &y, 5, 4, fit_linear).unwrap();
        let b = kfold_rmse(&x, &y, 5, 4, fit_linear).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_covers_listed_values() {
        let grid = mlp_grid(&MlpHyper::default());
        assert_eq!(grid.len(), 8);
        assert!(grid.iter().all(|h| h.hidden == vec![100, 50]));
        let (x, y) = planted(40);
        let small = MlpHyper {
            hidden: vec![8],
            max_epochs: 20,
            ..Default::default()
        };
        let r = grid_search(&x, &y, 4, 0, &small).unwrap();
        assert_eq!(r.trials.len(), 8);
        assert!(r.trials.iter().all(|t| t.cv.mean >= r.best().cv.mean));
    }
}
