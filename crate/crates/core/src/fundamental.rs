//! The fundamental diagram of traffic flow: the equilibrium speed-density
//! relation `V(rho) = v_max * exp(-(1/a) * (rho / rho_cr)^a)`, its inverse, and
//! calibration from aggregated traffic-counter data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simplex::{self, SimplexOptions};

#[derive(Debug, Error)]
pub enum FdError {
    #[error("invalid fundamental diagram parameters: {0}")]
    InvalidParams(String),
    #[error("speed must be positive to invert the fundamental diagram, got {0}")]
    NonPositiveSpeed(f64),
    #[error("counter sample has zero or negative {field} ({value})")]
    DegenerateSample { field: &'static str, value: f64 },
    #[error("need at least 3 samples with distinct densities, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} is not finite: ({rho}, {v})")]
    NonFiniteSample { index: usize, rho: f64, v: f64 },
    #[error("counter file {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Parameters of the fundamental diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    /// Free-flow speed (m/s).
    pub v_max: f64,
    /// Critical density (cars/m per lane).
    pub rho_cr: f64,
    /// Abruptness of the speed drop past the critical density.
    pub a: f64,
}

impl Default for FdParams {
    /// Values calibrated on urban counter data.
    fn default() -> Self {
        FdParams {
            v_max: 13.68,
            rho_cr: 0.05,
            a: 1.24,
        }
    }
}

/// Result of inverting the diagram at a speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inversion {
    pub rho: f64,
    /// The requested speed exceeded `v_max` and was clamped to it.
    pub clamped: bool,
}

impl FdParams {
    pub fn validate(&self) -> Result<(), FdError> {
        for (name, value) in [
            ("v_max", self.v_max),
            ("rho_cr", self.rho_cr),
            ("a", self.a),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(FdError::InvalidParams(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Equilibrium speed at density `rho`.
    pub fn ideal_speed(&self, rho: f64) -> f64 {
        let ratio = rho.max(0.0) / self.rho_cr;
        self.v_max * (-ratio.powf(self.a) / self.a).exp()
    }

    /// The density at which the equilibrium speed equals `v`. Speeds above
    /// `v_max` are clamped and map to zero density.
    pub fn invert_speed(&self, v: f64) -> Result<Inversion, FdError> {
        if !(v > 0.0) {
            return Err(FdError::NonPositiveSpeed(v));
        }
        if v >= self.v_max {
            return Ok(Inversion {
                rho: 0.0,
                clamped: v > self.v_max,
            });
        }
        let rho = self.rho_cr * (-self.a * (v / self.v_max).ln()).powf(1.0 / self.a);
        Ok(Inversion {
            rho,
            clamped: false,
        })
    }

    /// Sum of squared speed residuals over `(rho, v)` samples.
    pub fn sse(&self, samples: &[(f64, f64)]) -> f64 {
        samples
            .iter()
            .map(|&(rho, v)| {
                let r = v - self.ideal_speed(rho);
                r * r
            })
            .sum()
    }
}

/// One aggregation interval of a traffic counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterSample {
    pub interval_s: f64,
    pub count: f64,
    #[serde(rename = "avg_speed_mps")]
    pub avg_speed: f64,
}

impl CounterSample {
    /// Density observed over the interval: `count / (interval * avg_speed)`.
    pub fn density(&self) -> Result<f64, FdError> {
        if !(self.interval_s > 0.0) {
            return Err(FdError::DegenerateSample {
                field: "interval_s",
                value: self.interval_s,
            });
        }
        if !(self.avg_speed > 0.0) {
            return Err(FdError::DegenerateSample {
                field: "avg_speed",
                value: self.avg_speed,
            });
        }
        Ok(self.count / (self.interval_s * self.avg_speed))
    }
}

pub fn read_counters(path: &Path) -> Result<Vec<CounterSample>, FdError> {
    let wrap = |source| FdError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    reader
        .deserialize()
        .collect::<Result<Vec<CounterSample>, _>>()
        .map_err(wrap)
}

/// Turns counter samples into `(rho, v)` pairs, skipping intervals without a
/// usable speed.
pub fn samples_from_counters(counters: &[CounterSample]) -> Vec<(f64, f64)> {
    counters
        .iter()
        .filter_map(|c| c.density().ok().map(|rho| (rho, c.avg_speed)))
        .collect()
}

/// Outcome of a least-squares calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdFit {
    pub v_max: f64,
    pub rho_cr: f64,
    pub a: f64,
    pub sse: f64,
    pub converged: bool,
    #[serde(default)]
    pub initial_sse: f64,
    #[serde(default)]
    pub iterations: usize,
}

impl FdFit {
    pub fn params(&self) -> FdParams {
        FdParams {
            v_max: self.v_max,
            rho_cr: self.rho_cr,
            a: self.a,
        }
    }
}

const FIT_MAX_ITERATIONS: usize = 2000;
const FIT_REL_TOL: f64 = 1e-10;

/// Least-squares fit of the diagram to `(rho, v)` samples using a simplex
/// search over the logarithms of the free parameters. With `fixed_v_max`
/// only `rho_cr` and `a` are fitted.
pub fn fit_fd(
    samples: &[(f64, f64)],
    init: FdParams,
    fixed_v_max: Option<f64>,
) -> Result<FdFit, FdError> {
    for (index, &(rho, v)) in samples.iter().enumerate() {
        if !(rho.is_finite() && v.is_finite()) {
            return Err(FdError::NonFiniteSample { index, rho, v });
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(FdError::TooFewSamples(distinct.len()));
    }
    let mut init = init;
    if let Some(v_max) = fixed_v_max {
        init.v_max = v_max;
    }
    init.validate()?;

    let unpack = |x: &[f64]| -> FdParams {
        match fixed_v_max {
            Some(v_max) => FdParams {
                v_max,
                rho_cr: x[0].exp(),
                a: x[1].exp(),
            },
            None => FdParams {
                v_max: x[0].exp(),
                rho_cr: x[1].exp(),
                a: x[2].exp(),
            },
        }
    };
    let x0: Vec<f64> = match fixed_v_max {
        Some(_) => vec![init.rho_cr.ln(), init.a.ln()],
        None => vec![init.v_max.ln(), init.rho_cr.ln(), init.a.ln()],
    };
    let initial_sse = init.sse(samples);
    let result = simplex::minimize(
        |x| unpack(x).sse(samples),
        &x0,
        SimplexOptions {
            initial_step: 0.2,
            max_iterations: FIT_MAX_ITERATIONS,
            ftol: FIT_REL_TOL,
        },
    );
    let p = unpack(&result.x);
    if !result.converged {
        log::warn!(
            "fundamental diagram fit did not converge after {} iterations (sse {})",
            result.iterations,
            result.value
        );
    }
    Ok(FdFit {
        v_max: p.v_max,
        rho_cr: p.rho_cr,
        a: p.a,
        sse: result.value,
        converged: result.converged,
        initial_sse,
        iterations: result.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn ideal_speed_examples() {
        let p = FdParams::default();
        assert_eq!(p.ideal_speed(0.0), 13.68);
        // 13.68 * exp(-1/1.24), evaluated independently in extended precision.
        assert!((p.ideal_speed(0.05) - 6.107_290_975_253_165).abs() < 1e-9);
        let fig = FdParams {
            v_max: 16.0,
            rho_cr: 0.05,
            a: 1.0,
        };
        assert!((fig.ideal_speed(0.05) - 16.0 / std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn invert_examples() {
        let p = FdParams::default();
        assert_eq!(
            p.invert_speed(13.68).unwrap(),
            Inversion {
                rho: 0.0,
                clamped: false
            }
        );
        let r = p.invert_speed(p.ideal_speed(0.05)).unwrap();
        assert!((r.rho - 0.05).abs() < 1e-12);
        assert_eq!(
            p.invert_speed(14.0).unwrap(),
            Inversion {
                rho: 0.0,
                clamped: true
            }
        );
        assert!(p.invert_speed(0.0).is_err());
        assert!(p.invert_speed(-1.0).is_err());
    }

    #[test]
    fn counter_density() {
        let s = |count, speed| CounterSample {
            interval_s: 300.0,
            count,
            avg_speed: speed,
        };
        assert!((s(150.0, 10.0).density().unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(s(0.0, 10.0).density().unwrap(), 0.0);
        assert!(s(150.0, 0.0).density().is_err());
        let zero_interval = CounterSample {
            interval_s: 0.0,
            count: 1.0,
            avg_speed: 1.0,
        };
        assert!(zero_interval.density().is_err());
    }

    fn synthetic(p: FdParams, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let rho = 0.001 + (0.15 - 0.001) * i as f64 / (n - 1) as f64;
                (rho, p.ideal_speed(rho))
            })
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_parameters() {
        let truth = FdParams::default();
        let samples = synthetic(truth, 50);
        let init = FdParams {
            v_max: 10.0,
            rho_cr: 0.03,
            a: 2.0,
        };
        let fit = fit_fd(&samples, init, None).unwrap();
        assert!(fit.converged);
        assert!(rel(fit.v_max, truth.v_max) < 0.01, "{fit:?}");
        assert!(rel(fit.rho_cr, truth.rho_cr) < 0.01, "{fit:?}");
        assert!(rel(fit.a, truth.a) < 0.01, "{fit:?}");
        assert!(fit.sse <= fit.initial_sse);

        let fixed = fit_fd(&samples, init, Some(13.68)).unwrap();
        assert_eq!(fixed.v_max, 13.68);
        assert!(rel(fixed.rho_cr, truth.rho_cr) < 0.01, "{fixed:?}");
        assert!(rel(fixed.a, truth.a) < 0.01, "{fixed:?}");
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let two = [(0.01, 12.0), (0.02, 11.0)];
        assert!(matches!(
            fit_fd(&two, FdParams::default(), None),
            Err(FdError::TooFewSamples(2))
        ));
        let repeated = [(0.01, 12.0), (0.01, 11.0), (0.02, 10.0), (0.02, 9.0)];
        assert!(fit_fd(&repeated, FdParams::default(), None).is_err());
        let nan = [(0.01, 12.0), (f64::NAN, 11.0), (0.02, 10.0), (0.03, 9.0)];
        assert!(matches!(
            fit_fd(&nan, FdParams::default(), None),
            Err(FdError::NonFiniteSample { index: 1, .. })
        ));
    }

    fn params() -> impl Strategy<Value = FdParams> {
        (5.0..20.0f64, 0.01..0.1f64, 0.5..3.0f64).prop_map(|(v_max, rho_cr, a)| FdParams {
            v_max,
            rho_cr,
            a,
        })
    }

    proptest! {
        #[test]
        fn speed_is_strictly_decreasing(p in params(), r1 in 0.0..0.2f64, dr in 1e-4..0.05f64) {
            prop_assert!(p.ideal_speed(r1) > p.ideal_speed(r1 + dr));
        }

        #[test]
        fn inversion_round_trips(p in params(), frac in 1e-3..1.0f64) {
            let v = p.v_max * frac;
            let rho = p.invert_speed(v).unwrap().rho;
            let back = p.ideal_speed(rho);
            prop_assert!(((back - v) / v).abs() < 1e-9, "v={v} back={back}");
        }

        #[test]
        fn fit_never_increases_sse(p in params(), noise in prop::collection::vec(-0.1..0.1f64, 12)) {
            let samples: Vec<(f64, f64)> = noise
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let rho = 0.005 + 0.01 * i as f64;
                    (rho, p.ideal_speed(rho) * (1.0 + n))
                })
                .collect();
            let fit = fit_fd(&samples, FdParams::default(), None).unwrap();
            prop_assert!(fit.sse <= FdParams::default().sse(&samples));
        }
    }
}
