//! Congestion objectives: network average speed and the logistic queue length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RoadNetwork;
use crate::solver::SimState;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no metric samples to aggregate")]
    Empty,
}

/// Logistic congestion classifier `F(v) = 1 / (1 + exp(c (v - v_q)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueFnParams {
    /// Steepness.
    pub c: f64,
    /// Speed threshold (m/s) below which a cell counts as queued.
    pub v_q: f64,
}

impl Default for QueueFnParams {
    fn default() -> Self {
        QueueFnParams { c: 3.0, v_q: 5.0 }
    }
}

impl QueueFnParams {
    pub fn congestion_weight(&self, v: f64) -> f64 {
        1.0 / (1.0 + (self.c * (v - self.v_q)).exp())
    }
}

/// How cell speeds are averaged over the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedAverage {
    /// Plain mean over cells.
    #[default]
    Unweighted,
    /// Mean weighted by the number of cars in each cell.
    DensityWeighted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub queue: QueueFnParams,
    pub speed_average: SpeedAverage,
}

/// Objectives of a single time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub avg_speed: f64,
    pub queue: f64,
}

/// Time-averaged objectives of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CongestionMetrics {
    pub avg_speed: f64,
    pub queue_length: f64,
    pub samples: usize,
}

pub fn step_metrics(net: &RoadNetwork, state: &SimState, cfg: &MetricsConfig) -> StepMetrics {
    let mut speed_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut queue = 0.0;
    for (edge, cells) in net.edges().iter().zip(&state.edges) {
        let cars_per_density = edge.lanes as f64 * edge.cell_length;
        for (&rho, &v) in cells.rho.iter().zip(&cells.v) {
            let w = match cfg.speed_average {
                SpeedAverage::Unweighted => 1.0,
                SpeedAverage::DensityWeighted => rho * cars_per_density,
            };
            speed_sum += w * v;
            weight_sum += w;
            queue += cfg.queue.congestion_weight(v);
        }
    }
    StepMetrics {
        avg_speed: if weight_sum > 0.0 {
            speed_sum / weight_sum
        } else {
            0.0
        },
        queue,
    }
}

/// Running mean of step metrics.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    speed_sum: f64,
    queue_sum: f64,
    samples: usize,
}

impl MetricsAccumulator {
    pub fn push(&mut self, m: StepMetrics) {
        self.speed_sum += m.avg_speed;
        self.queue_sum += m.queue;
        self.samples += 1;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(&self) -> Result<CongestionMetrics, MetricsError> {
        if self.samples == 0 {
            return Err(MetricsError::Empty);
        }
        let n = self.samples as f64;
        Ok(CongestionMetrics {
            avg_speed: self.speed_sum / n,
            queue_length: self.queue_sum / n,
            samples: self.samples,
        })
    }
}

pub fn aggregate(series: &[StepMetrics]) -> Result<CongestionMetrics, MetricsError> {
    let mut acc = MetricsAccumulator::default();
    series.iter().for_each(|m| acc.push(*m));
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{EdgeRecord, NetworkFile, NodeRecord};
    use crate::solver::EdgeState;
    use proptest::prelude::*;

    fn straight(length: f64) -> RoadNetwork {
        RoadNetwork::from_file(NetworkFile {
            nodes: vec![
                NodeRecord {
                    id: "a".into(),
                    x: 0.0,
                    y: 0.0,
                },
                NodeRecord {
                    id: "b".into(),
                    x: length,
                    y: 0.0,
                },
            ],
            edges: vec![EdgeRecord {
                id: "ab".into(),
                from: "a".into(),
                to: "b".into(),
                length_m: length,
                lanes: 1,
                free_flow_speed_mps: 13.68,
                fd: None,
                inflow_veh_per_s: None,
            }],
            intersections: vec![],
        })
        .unwrap()
    }

    fn state(v: Vec<f64>) -> SimState {
        SimState {
            t: 0.0,
            step: 0,
            edges: vec![EdgeState {
                rho: vec![0.02; v.len()],
                v,
            }],
        }
    }

    #[test]
    fn congestion_weight_examples() {
        let p = QueueFnParams::default();
        assert_eq!(p.congestion_weight(5.0), 0.5);
        assert!((p.congestion_weight(4.0) - 0.952_574_126_822_433_2).abs() < 1e-15);
        assert!(p.congestion_weight(13.68) < 1e-10);
    }

    #[test]
    fn step_metric_examples() {
        let cfg = MetricsConfig::default();
        let net = straight(1000.0);
        assert_eq!(net.total_cells(), 100);
        let m = step_metrics(&net, &state(vec![13.68; 100]), &cfg);
        assert!((m.avg_speed - 13.68).abs() < 1e-12);
        assert!(m.queue < 1e-8);
        let m = step_metrics(&net, &state(vec![5.0; 100]), &cfg);
        assert!((m.avg_speed - 5.0).abs() < 1e-12);
        assert!((m.queue - 50.0).abs() < 1e-12);

        let net = straight(100.0);
        let mut v = vec![4.0; 5];
        v.extend([13.68; 5]);
        let m = step_metrics(&net, &state(v), &cfg);
        assert!((m.avg_speed - 8.84).abs() < 1e-12);
        assert!((m.queue - 4.762_870_634_112_166).abs() < 1e-9);
    }

    #[test]
    fn density_weighting() {
        let net = straight(100.0);
        let mut s = state(vec![10.0, 10.0, 10.0, 10.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        s.edges[0].rho = vec![0.01, 0.01, 0.01, 0.01, 0.01, 0.04, 0.04, 0.04, 0.04, 0.04];
        let cfg = MetricsConfig {
            speed_average: SpeedAverage::DensityWeighted,
            ..Default::default()
        };
        let m = step_metrics(&net, &s, &cfg);
        assert!((m.avg_speed - 2.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let s = |avg_speed, queue| StepMetrics { avg_speed, queue };
        let m = aggregate(&[s(7.0, 3.0); 4]).unwrap();
        assert_eq!((m.avg_speed, m.queue_length, m.samples), (7.0, 3.0, 4));
        let m = aggregate(&[s(10.0, 100.0), s(12.0, 80.0)]).unwrap();
        assert_eq!((m.avg_speed, m.queue_length), (11.0, 90.0));
        assert!(matches!(aggregate(&[]), Err(MetricsError::Empty)));
    }

    proptest! {
        #[test]
        fn weight_decreasing_and_bounded(v in 0.0..30.0f64, dv in 1e-3..5.0f64) {
            let p = QueueFnParams::default();
            let (a, b) = (p.congestion_weight(v), p.congestion_weight(v + dv));
            prop_assert!(a > b || (a == b && a == 0.0));
            prop_assert!(a > 0.0 && a < 1.0);
        }

        #[test]
        fn raising_a_speed_never_grows_queue(
            v in prop::collection::vec(0.0..13.68f64, 10),
            i in 0usize..10,
            dv in 0.0..5.0f64,
        ) {
            let net = straight(100.0);
            let cfg = MetricsConfig::default();
            let before = step_metrics(&net, &state(v.clone()), &cfg).queue;
            let mut faster = v;
            faster[i] += dv;
            let after = step_metrics(&net, &state(faster), &cfg).queue;
            prop_assert!(after <= before);
        }
    }
}
