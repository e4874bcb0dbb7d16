//! Event-triggered broadcasting.
//!
//! Each agent holds a broadcast value `x̂_i`, and its error is
//! `e_i = x̂_i - x_i`. Agent `i` fires when `|e_i| - c e^{-βt} > 0`, at which
//! point `x̂_i` snaps to the current state. `β = 0` is the static trigger.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::EdgeWeights;
use crate::graph::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Static,
    Dynamic,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::Static => "static",
            TriggerKind::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    kind: TriggerKind,
    c: f64,
    beta: f64,
}

impl TriggerSpec {
    pub fn static_trigger(c: f64) -> Result<Self> {
        Self::new(TriggerKind::Static, c, 0.0)
    }

    pub fn dynamic(c: f64, beta: f64) -> Result<Self> {
        Self::new(TriggerKind::Dynamic, c, beta)
    }

    /// A static trigger ignores `beta` (it is the `β = 0` case).
    pub fn new(kind: TriggerKind, c: f64, beta: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("trigger threshold c must be > 0, got {c}")));
        }
        let beta = match kind {
            TriggerKind::Static => 0.0,
            TriggerKind::Dynamic => {
                if !(beta >= 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidParameter(format!("trigger decay beta must be >= 0, got {beta}")));
                }
                beta
            }
        };
        Ok(Self { kind, c, beta })
    }

    pub fn kind(&self) -> TriggerKind {
        self.kind
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `c e^{-βt}`
    pub fn threshold(&self, t: f64) -> f64 {
        if self.beta == 0.0 {
            self.c
        } else {
            self.c * (-self.beta * t).exp()
        }
    }

    /// `f_i = |e_i| - c e^{-βt}`; an event fires iff this is strictly positive.
    pub fn trigger_value(&self, t: f64, error: f64) -> f64 {
        error.abs() - self.threshold(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub agent: usize,
    pub time: f64,
    pub value: f64,
    pub kind: TriggerKind,
}

/// Broadcast values, last event times and the event log of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastState {
    pub x_hat: Vec<f64>,
    pub last_event_time: Vec<f64>,
    pub event_log: Vec<Event>,
}

impl BroadcastState {
    /// Starts with zero error: `x̂(t₀) = x(t₀)`. The initial broadcast is not
    /// logged as an event.
    pub fn new(x0: &[f64], t0: f64) -> Self {
        Self {
            x_hat: x0.to_vec(),
            last_event_time: vec![t0; x0.len()],
            event_log: Vec::new(),
        }
    }

    pub fn errors(&self, x: &[f64]) -> Vec<f64> {
        self.x_hat.iter().zip(x).map(|(h, v)| h - v).collect()
    }

    /// Fires every agent whose trigger is positive at `t`; returns them in
    /// ascending order.
    pub fn apply_events(&mut self, x: &[f64], t: f64, spec: &TriggerSpec) -> Vec<usize> {
        let threshold = spec.threshold(t);
        let mut fired = Vec::new();
        for (i, (&xi, hat)) in x.iter().zip(self.x_hat.iter_mut()).enumerate() {
            if (*hat - xi).abs() - threshold > 0.0 {
                *hat = xi;
                self.last_event_time[i] = t;
                self.event_log.push(Event {
                    agent: i,
                    time: t,
                    value: xi,
                    kind: spec.kind(),
                });
                fired.push(i);
            }
        }
        fired
    }
}

/// `u = -k L(t) x̂` accumulated edge by edge.
pub(crate) fn control_into(edges: &[(usize, usize)], weights: &[f64], x_hat: &[f64], k: f64, u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = 0.0);
    for (&(a, b), &w) in edges.iter().zip(weights) {
        let flow = k * w * (x_hat[b] - x_hat[a]);
        u[a] += flow;
        u[b] -= flow;
    }
}

/// Control input `u = -k L(𝒢̃(t)) x̂` at time `t`.
pub fn control_input(
    topology: &Topology,
    weights: &dyn EdgeWeights,
    t: f64,
    x_hat: &[f64],
    k: f64,
) -> Result<Vec<f64>> {
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("gain k must be > 0, got {k}")));
    }
    if x_hat.len() != topology.node_count() {
        return Err(Error::DimensionMismatch {
            what: "broadcast state",
            expected: topology.node_count(),
            got: x_hat.len(),
        });
    }
    if weights.edge_count() != topology.edge_count() {
        return Err(Error::DimensionMismatch {
            what: "edge weights",
            expected: topology.edge_count(),
            got: weights.edge_count(),
        });
    }
    let w = weights.weights_at(t);
    topology.check_weights(&w)?;
    let mut u = vec![0.0; x_hat.len()];
    control_into(topology.edges(), &w, x_hat, k, &mut u);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{EdgeSignal, WeightSignal};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    #[test]
    fn trigger_values() {
        let st = TriggerSpec::static_trigger(0.5).unwrap();
        assert_eq!(st.trigger_value(3.0, 0.0), -0.5);
        assert_eq!(st.beta(), 0.0);

        let dy = TriggerSpec::dynamic(0.5, 0.06).unwrap();
        assert_eq!(dy.trigger_value(0.0, 0.5), 0.0);
        let f = dy.trigger_value(10.0, 0.3);
        let independent = 0.3 - 0.5 * f64::exp(-0.6);
        assert!((f - independent).abs() < 1e-15);
        assert!((f - 0.025594).abs() < 1e-6);
        assert!(f > 0.0);
    }

    #[test]
    fn static_forces_zero_beta_and_rejects_bad_c() {
        let st = TriggerSpec::new(TriggerKind::Static, 1.0, 0.4).unwrap();
        assert_eq!(st.beta(), 0.0);
        assert!(TriggerSpec::static_trigger(0.0).is_err());
        assert!(TriggerSpec::dynamic(1.0, -0.1).is_err());
    }

    #[test]
    fn boundary_does_not_fire() {
        let dy = TriggerSpec::dynamic(0.5, 0.0).unwrap();
        let mut b = BroadcastState::new(&[0.0, 0.0], 0.0);
        assert!(b.apply_events(&[0.5, -0.5], 1.0, &dy).is_empty());
    }

    #[test]
    fn apply_events_cases() {
        let spec = TriggerSpec::static_trigger(0.5).unwrap();
        let mut b = BroadcastState::new(&[1.0, 2.0, 3.0], 0.0);
        assert!(b.apply_events(&[1.0, 2.0, 3.0], 0.5, &spec).is_empty());
        assert!(b.event_log.is_empty());

        assert_eq!(b.apply_events(&[1.0, 2.7, 3.1], 1.0, &spec), vec![1]);
        assert_eq!(b.x_hat, vec![1.0, 2.7, 3.0]);
        assert_eq!(b.errors(&[1.0, 2.7, 3.1])[1], 0.0);
        assert_eq!(b.last_event_time, vec![0.0, 1.0, 0.0]);
        assert_eq!(b.event_log.len(), 1);

        // mirror-symmetric states cross together
        let mut b = BroadcastState::new(&[-1.0, 1.0], 0.0);
        assert_eq!(b.apply_events(&[-0.4, 0.4], 2.0, &spec), vec![0, 1]);
        assert_eq!(b.event_log[0].time, b.event_log[1].time);
    }

    #[test]
    fn control_input_examples() {
        let t = Topology::new(2, &[(0, 1)]).unwrap();
        let w = WeightSignal::constant(&[1.0]).unwrap();
        assert_eq!(control_input(&t, &w, 0.0, &[0.0, 1.0], 1.0).unwrap(), vec![1.0, -1.0]);
        assert_eq!(control_input(&t, &w, 0.0, &[3.0, 3.0], 2.0).unwrap(), vec![0.0, 0.0]);
        assert!(control_input(&t, &w, 0.0, &[3.0], 2.0).is_err());
        assert!(control_input(&t, &w, 0.0, &[3.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn control_matches_laplacian_and_sums_to_zero() {
        let topo = Topology::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let w = WeightSignal::new(
            (0..5)
                .map(|j| EdgeSignal::Sinusoid { offset: 1.0, amplitude: 0.5, frequency: 1.0 + j as f64, phase: 0.0 })
                .collect(),
            None,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let t = rng.gen_range(0.0..20.0);
            let k = rng.gen_range(0.1..3.0);
            let u = control_input(&topo, &w, t, &x, k).unwrap();
            assert!(u.iter().sum::<f64>().abs() < 1e-12);
            let l = topo.laplacian_at(&w.weights_at(t)).unwrap();
            let dense = -(l * DVector::from_column_slice(&x)) * k;
            for (a, b) in u.iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
