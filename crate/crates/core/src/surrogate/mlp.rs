//! Fully connected regression network trained with Adam.
//!
//! The training loss on standardized targets is
//! `0.5 / n * sum (out - y)^2 + alpha / (2 n) * sum |W|^2`
//! over a mini-batch of `n` rows (biases are not penalized).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_shapes, Surrogate, SurrogateError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpHyper {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// L2 penalty strength.
    pub alpha: f64,
    pub max_epochs: usize,
    /// Hold out `validation_fraction` of the rows and stop when their loss
    /// stalls; otherwise stop when the training loss stalls.
    pub early_stopping: bool,
    pub validation_fraction: f64,
    pub patience: usize,
    /// Minimum loss decrease that counts as progress.
    pub tol: f64,
}

impl Default for MlpHyper {
    fn default() -> Self {
        MlpHyper {
            hidden: vec![100, 50],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 32,
            alpha: 1e-4,
            max_epochs: 500,
            early_stopping: true,
            validation_fraction: 0.1,
            patience: 10,
            tol: 1e-4,
        }
    }
}

impl MlpHyper {
    pub fn check(&self) -> Result<(), SurrogateError> {
        let bad = |m: String| Err(SurrogateError::Hyper(m));
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive".into());
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {}", self.validation_fraction));
        }
        Ok(())
    }
}

/// Weight matrix stored output-major: `w[(out, in)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "LayerRecord", into = "LayerRecord")]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<LayerRecord> for Layer {
    fn from(r: LayerRecord) -> Self {
        let cols = r.weights.first().map_or(0, Vec::len);
        Layer {
            w: DMatrix::from_fn(r.weights.len(), cols, |i, j| r.weights[i][j]),
            b: DVector::from_vec(r.bias),
        }
    }
}

impl From<Layer> for LayerRecord {
    fn from(l: Layer) -> Self {
        LayerRecord {
            weights: l
                .w
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            bias: l.b.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub activation: Activation,
    pub layers: Vec<Layer>,
    /// Target standardization; predictions are `out * y_scale + y_mean`.
    pub y_mean: Vec<f64>,
    pub y_scale: Vec<f64>,
    #[serde(default)]
    pub hyper: MlpHyper,
    #[serde(default)]
    pub epochs: usize,
}

impl Surrogate for MlpModel {
    fn n_features(&self) -> usize {
        self.layers[0].w.ncols()
    }

    fn n_targets(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    fn predict_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.forward(x).pop().unwrap();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = *v * self.y_scale[j] + self.y_mean[j]);
        }
        out
    }
}

impl MlpModel {
    /// Glorot-uniform initialized network with identity target scaling.
    pub fn init(n_features: usize, n_targets: usize, hyper: &MlpHyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![n_features];
        sizes.extend(&hyper.hidden);
        sizes.push(n_targets);
        let layers = sizes
            .windows(2)
            .map(|s| {
                let (fan_in, fan_out) = (s[0], s[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    b: DVector::from_fn(fan_out, |_, _| rng.random_range(-limit..limit)),
                }
            })
            .collect();
        MlpModel {
            activation: hyper.activation,
            layers,
            y_mean: vec![0.0; n_targets],
            y_scale: vec![1.0; n_targets],
            hyper: hyper.clone(),
            epochs: 0,
        }
    }

    /// Activations of every layer, input first; the last is the raw
    /// (standardized) output.
    pub fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].clone() * layer.w.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.b.transpose();
            }
            if l < last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    fn penalty(&self) -> f64 {
        self.layers.iter().map(|l| l.w.norm_squared()).sum()
    }

    /// Regularized loss against standardized targets `y`.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let n = x.nrows() as f64;
        let out = self.forward(x).pop().unwrap();
        0.5 * (out - y).norm_squared() / n + 0.5 * self.hyper.alpha * self.penalty() / n
    }

    fn gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<Layer>) {
        let n = x.nrows() as f64;
        let alpha = self.hyper.alpha;
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        let mut delta = (out - y) / n;
        let loss = 0.5 * delta.norm_squared() * n + 0.5 * alpha * self.penalty() / n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gw = delta.transpose() * &acts[l] + &layer.w * (alpha / n);
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l > 0 {
                let mut back = &delta * &layer.w;
                back.zip_apply(&acts[l], |d, a| *d *= self.activation.slope(a));
                delta = back;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// Loss and its gradient with respect to [`MlpModel::params`].
    pub fn loss_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let (loss, grads) = self.gradients(x, y);
        (loss, flatten(&grads))
    }

    /// All weights and biases, layer by layer, each weight matrix row-major
    /// followed by its bias.
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for layer in &mut self.layers {
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    layer.w[(i, j)] = p[k];
                    k += 1;
                }
            }
            for v in layer.b.iter_mut() {
                *v = p[k];
                k += 1;
            }
        }
        assert_eq!(k, p.len(), "parameter vector length");
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        for row in l.w.row_iter() {
            out.extend(row.iter());
        }
        out.extend(l.b.iter());
    }
    out
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer]) -> Self {
        let zeros = |l: &Layer| Layer {
            w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            b: DVector::zeros(l.b.len()),
        };
        Adam {
            m: layers.iter().map(zeros).collect(),
            v: layers.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer], lr: f64) {
        self.t += 1;
        let step = lr * (1.0 - Self::B2.powi(self.t)).sqrt() / (1.0 - Self::B1.powi(self.t));
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= step * *m / (v.sqrt() + Self::EPS);
        };
        for l in 0..layers.len() {
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            for k in 0..layers[l].w.len() {
                update(&mut layers[l].w[k], grads[l].w[k], &mut m.w[k], &mut v.w[k]);
            }
            for k in 0..layers[l].b.len() {
                update(&mut layers[l].b[k], grads[l].b[k], &mut m.b[k], &mut v.b[k]);
            }
        }
    }
}

fn mse(model: &MlpModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let out = model.forward(x).pop().unwrap();
    (out - y).norm_squared() / y.len() as f64
}

/// Trains a network on `x` (rows = samples) and `y` (one column per target).
/// Deterministic given `seed`. The returned weights are those with the best
/// monitored loss.
pub fn fit_mlp(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hyper: &MlpHyper,
    seed: u64,
) -> Result<MlpModel, SurrogateError> {
    check_shapes(x, y)?;
    hyper.check()?;
    let n = x.nrows();
    if n < 2 {
        return Err(SurrogateError::TooFewRows { rows: n, needed: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::init(x.ncols(), y.ncols(), hyper, rng.random());

    let y_mean: Vec<f64> = y.column_iter().map(|c| c.mean()).collect();
    let y_scale: Vec<f64> = y
        .column_iter()
        .map(|c| {
            let sd = c.variance().sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    let ys = DMatrix::from_fn(n, y.ncols(), |i, j| (y[(i, j)] - y_mean[j]) / y_scale[j]);
    model.y_mean = y_mean;
    model.y_scale = y_scale;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if hyper.early_stopping {
        ((n as f64 * hyper.validation_fraction).round() as usize).min(n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val = (n_val > 0).then(|| (x.select_rows(val_idx), ys.select_rows(val_idx)));

    let mut adam = Adam::new(&model.layers);
    let mut best = f64::INFINITY;
    let mut best_layers = model.layers.clone();
    let mut stall = 0;
    for epoch in 0..hyper.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(hyper.batch_size) {
            let xb = x.select_rows(batch);
            let yb = ys.select_rows(batch);
            let (loss, grads) = model.gradients(&xb, &yb);
            if !loss.is_finite() {
                return Err(SurrogateError::NonFinite { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut model.layers, &grads, hyper.learning_rate);
        }
        epoch_loss /= train_idx.len() as f64;
        model.epochs = epoch + 1;

        let monitored = match &val {
            Some((xv, yv)) => mse(&model, xv, yv),
            None => epoch_loss,
        };
        if !monitored.is_finite() {
            return Err(SurrogateError::NonFinite { epoch });
        }
        if monitored < best - hyper.tol {
            stall = 0;
        } else {
            stall += 1;
        }
        if monitored < best {
            best = monitored;
            best_layers.clone_from(&model.layers);
        }
        if stall >= hyper.patience {
            log::debug!("early stop after {} epochs", epoch + 1);
            break;
        }
    }
    model.layers = best_layers;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::rmse;

    fn grad_check(activation: Activation) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let hyper = MlpHyper {
            activation,
            alpha: 1e-2,
            ..Default::default()
        };
        let mut m = MlpModel::init(3, 2, &hyper, 5);
        let (_, g) = m.loss_gradient(&x, &y);
        let p0 = m.params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + h;
            m.set_params(&p);
            let up = m.loss(&x, &y);
            p[k] = p0[k] - h;
            m.set_params(&p);
            let down = m.loss(&x, &y);
            let fd = (up - down) / (2.0 * h);
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        m.set_params(&p0);
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        assert!(grad_check(Activation::Tanh) < 1e-4);
        assert!(grad_check(Activation::Relu) < 1e-4);
    }

    fn xor_data() -> (DMatrix<f64>, DMatrix<f64>) {
        let k = 9;
        let n = k * k;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let c = if j == 0 { i / k } else { i % k };
            c as f64 / (k - 1) as f64
        });
        let y = DMatrix::from_fn(n, 1, |i, _| {
            let (a, b) = (x[(i, 0)], x[(i, 1)]);
            a + b - 2.0 * a * b
        });
        (x, y)
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor_data();
        let hyper = MlpHyper {
            activation: Activation::Tanh,
            learning_rate: 1e-2,
            early_stopping: false,
            ..Default::default()
        };
        let m = fit_mlp(&x, &y, &hyper, 3).unwrap();
        let r = rmse(&m.predict_rows(&x), &y)[0];
        assert!(r < 0.1, "rmse {r}");
        let lin = crate::surrogate::fit_linear(&x, &y).unwrap();
        assert!(rmse(&lin.predict_rows(&x), &y)[0] > 0.2);
    }

    #[test]
    fn deterministic_and_early_stopping() {
        let (x, y) = xor_data();
        let hyper = MlpHyper {
            hidden: vec![20, 10],
            ..Default::default()
        };
        let a = fit_mlp(&x, &y, &hyper, 8).unwrap();
        let b = fit_mlp(&x, &y, &hyper, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.epochs <= hyper.max_epochs);
        let c = fit_mlp(&x, &y, &hyper, 9).unwrap();
        assert_ne!(a.params(), c.params());
        assert!(a.predict(&[0.5, 0.5]).unwrap()[0].is_finite());
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_element(1, 2, 0.5);
        let y = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            fit_mlp(&x, &y, &MlpHyper::default(), 0),
            Err(SurrogateError::TooFewRows { .. })
        ));
        let hyper = MlpHyper {
            learning_rate: 0.0,
            ..Default::default()
        };
        let x = DMatrix::from_element(4, 2, 0.5);
        let y = DMatrix::from_element(4, 1, 1.0);
        assert!(matches!(
            fit_mlp(&x, &y, &hyper, 0),
            Err(SurrogateError::Hyper(_))
        ));
        let blown = MlpHyper {
            learning_rate: 1e300,
            ..Default::default()
        };
        let y = DMatrix::from_fn(4, 1, |i, _| i as f64);
        assert!(matches!(
            fit_mlp(&x, &y, &blown, 0),
            Err(SurrogateError::NonFinite { .. })
        ));
    }

    #[test]
    fn serde_round_trip() {
        let m = MlpModel::init(
            3,
            1,
            &MlpHyper {
                hidden: vec![4],
                ..Default::default()
            },
            1,
        );
        let text = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
