//! Edge-weight signals and numerical persistence-of-excitation checks.
//!
//! Signals are piecewise continuous. Anything that integrates across a
//! discontinuity first splits the interval at the signal's breakpoints and
//! evaluates each piece with [`EdgeWeights::eval_piece`], whose `anchor`
//! argument (any time strictly inside the piece) selects the continuous branch.
//! That way the endpoint of a piece sees the one-sided limit from inside it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::pieces;

/// Window integrals at or below this value count as zero excitation.
pub const PE_TOLERANCE: f64 = 1e-12;

/// Time-varying diagonal edge-weight matrix `W(t)`.
pub trait EdgeWeights: Sync {
    fn edge_count(&self) -> usize;

    /// Weights at `t` on the continuous piece that contains `anchor`.
    fn eval_piece(&self, t: f64, anchor: f64, out: &mut [f64]);

    /// Right-continuous evaluation.
    fn eval(&self, t: f64, out: &mut [f64]) {
        self.eval_piece(t, t, out)
    }

    /// Sorted discontinuity times in `[t_start, t_end]`.
    fn breakpoints(&self, t_start: f64, t_end: f64) -> Vec<f64>;

    /// Declared bound `ω ≥ max_i w_ii(t)`.
    fn omega(&self) -> f64;

    fn weights_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.edge_count()];
        self.eval(t, &mut out);
        out
    }
}

/// `max(0, A · (square(a t, d) + shift) · sin(b t))`, the square-wave-gated
/// sinusoid family. `square` has unit amplitude, period `2π/a` and duty
/// cycle `d` percent. Without `sine_rate` the sinusoid is replaced by 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareSine {
    #[serde(default = "one")]
    pub amplitude: f64,
    pub square_rate: f64,
    pub duty: f64,
    #[serde(default = "one")]
    pub shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sine_rate: Option<f64>,
    #[serde(default = "yes")]
    pub clamp: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl SquareSine {
    /// Edge `i` (1-based) of the benchmark family: duty `20 - (i-1)·0.1π`
    /// percent, square rate 4, sine rate 5, shift 1.
    pub fn benchmark(i: usize) -> Self {
        Self {
            amplitude: 1.0,
            square_rate: 4.0,
            duty: 20.0 - (i as f64 - 1.0) * 0.1 * PI,
            shift: 1.0,
            sine_rate: Some(5.0),
            clamp: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.square_rate > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "square wave period must be positive (rate {})",
                self.square_rate
            )));
        }
        if !(self.duty > 0.0 && self.duty <= 100.0) {
            return Err(Error::InvalidSignal(format!("duty cycle {} outside (0, 100]", self.duty)));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidSignal(format!("amplitude {} must be finite and >= 0", self.amplitude)));
        }
        if !self.shift.is_finite() || self.sine_rate.is_some_and(|b| !b.is_finite()) {
            return Err(Error::InvalidSignal("non-finite square-sine parameter".into()));
        }
        Ok(())
    }

    fn period(&self) -> f64 {
        2.0 * PI / self.square_rate
    }

    fn is_on(&self, anchor: f64) -> bool {
        let phase = (self.square_rate * anchor).rem_euclid(2.0 * PI);
        phase < 2.0 * PI * self.duty / 100.0
    }

    pub fn eval_piece(&self, t: f64, anchor: f64) -> f64 {
        let square = if self.is_on(anchor) { 1.0 } else { -1.0 };
        let carrier = self.sine_rate.map_or(1.0, |b| (b * t).sin());
        let v = self.amplitude * (square + self.shift) * carrier;
        if self.clamp {
            v.max(0.0)
        } else {
            v
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_piece(t, t)
    }

    fn bound(&self) -> f64 {
        let hi = self.amplitude.abs() * (1.0 + self.shift).abs().max((self.shift - 1.0).abs());
        if self.clamp {
            hi.max(0.0)
        } else {
            hi
        }
    }

    fn can_go_negative(&self) -> bool {
        if self.clamp {
            return false;
        }
        self.sine_rate.is_some() || self.shift < 1.0
    }

    fn breakpoints(&self, t_start: f64, t_end: f64, out: &mut Vec<f64>) {
        if self.duty >= 100.0 {
            return;
        }
        let period = self.period();
        let fall = period * self.duty / 100.0;
        let first = (t_start / period).floor() as i64 - 1;
        let last = (t_end / period).ceil() as i64 + 1;
        for j in first..=last {
            let base = j as f64 * period;
            for t in [base, base + fall] {
                if t >= t_start && t <= t_end {
                    out.push(t);
                }
            }
        }
    }
}

/// Weight trajectory of a single edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeSignal {
    Zero,
    Constant {
        value: f64,
    },
    /// `offset + amplitude · sin(frequency · t + phase)`
    Sinusoid {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude · |sin(frequency · t + phase)|`
    AbsSine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    SquareSine(SquareSine),
    /// Linear interpolation through `(time, weight)` samples, held constant
    /// outside the sampled range.
    Table {
        samples: Vec<[f64; 2]>,
    },
}

impl EdgeSignal {
    /// The benchmark family member for 1-based edge `i`: the gated sinusoid
    /// for `i <= 5` and the inactive edge (identically zero) for `i = 6`.
    pub fn benchmark(i: usize) -> Result<Self> {
        match i {
            1..=5 => Ok(EdgeSignal::SquareSine(SquareSine::benchmark(i))),
            6 => Ok(EdgeSignal::Zero),
            _ => Err(Error::InvalidSignal(format!("benchmark family defines edges 1..=6, not {i}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EdgeSignal::Zero => Ok(()),
            EdgeSignal::Constant { value } => {
                if *value >= 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidSignal(format!("constant weight {value} must be finite and >= 0")))
                }
            }
            EdgeSignal::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                if ![offset, amplitude, frequency, phase].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidSignal("non-finite sinusoid parameter".into()));
                }
                if *offset < amplitude.abs() {
                    return Err(Error::InvalidSignal(format!(
                        "sinusoid offset {offset} below |amplitude| {} gives negative weights",
                        amplitude.abs()
                    )));
                }
                Ok(())
            }
            EdgeSignal::AbsSine {
                amplitude,
                frequency,
                phase,
            } => {
                if !(*amplitude >= 0.0) || ![amplitude, frequency, phase].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidSignal("abs-sine needs finite parameters and amplitude >= 0".into()));
                }
                Ok(())
            }
            EdgeSignal::SquareSine(s) => {
                s.validate()?;
                if s.can_go_negative() {
                    return Err(Error::InvalidSignal(
                        "unclamped square-sine takes negative values; edge weights must be >= 0".into(),
                    ));
                }
                Ok(())
            }
            EdgeSignal::Table { samples } => {
                if samples.is_empty() {
                    return Err(Error::InvalidSignal("weight table has no samples".into()));
                }
                if samples.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(Error::InvalidSignal("weight table times must be strictly increasing".into()));
                }
                if let Some(s) = samples.iter().find(|s| !(s[1] >= 0.0) || !s[0].is_finite()) {
                    return Err(Error::InvalidSignal(format!("bad weight table sample {s:?}")));
                }
                Ok(())
            }
        }
    }

    pub fn eval_piece(&self, t: f64, anchor: f64) -> f64 {
        match self {
            EdgeSignal::Zero => 0.0,
            EdgeSignal::Constant { value } => *value,
            EdgeSignal::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (frequency * t + phase).sin(),
            EdgeSignal::AbsSine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).sin().abs(),
            EdgeSignal::SquareSine(s) => s.eval_piece(t, anchor),
            EdgeSignal::Table { samples } => interpolate(samples, t),
        }
    }

    /// Analytic upper bound on the signal.
    pub fn bound(&self) -> f64 {
        match self {
            EdgeSignal::Zero => 0.0,
            EdgeSignal::Constant { value } => *value,
            EdgeSignal::Sinusoid { offset, amplitude, .. } => offset + amplitude.abs(),
            EdgeSignal::AbsSine { amplitude, .. } => *amplitude,
            EdgeSignal::SquareSine(s) => s.bound(),
            EdgeSignal::Table { samples } => samples.iter().fold(0.0, |a, s| a.max(s[1])),
        }
    }

    fn scaled(&self, factor: f64) -> EdgeSignal {
        match self.clone() {
            EdgeSignal::Zero => EdgeSignal::Zero,
            EdgeSignal::Constant { value } => EdgeSignal::Constant { value: value * factor },
            EdgeSignal::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => EdgeSignal::Sinusoid {
                offset: offset * factor,
                amplitude: amplitude * factor,
                frequency,
                phase,
            },
            EdgeSignal::AbsSine {
                amplitude,
                frequency,
                phase,
            } => EdgeSignal::AbsSine {
                amplitude: amplitude * factor,
                frequency,
                phase,
            },
            EdgeSignal::SquareSine(s) => EdgeSignal::SquareSine(SquareSine {
                amplitude: s.amplitude * factor,
                ..s
            }),
            EdgeSignal::Table { samples } => EdgeSignal::Table {
                samples: samples.into_iter().map(|[t, w]| [t, w * factor]).collect(),
            },
        }
    }

    fn breakpoints(&self, t_start: f64, t_end: f64, out: &mut Vec<f64>) {
        match self {
            EdgeSignal::SquareSine(s) => s.breakpoints(t_start, t_end, out),
            EdgeSignal::Table { samples } => {
                out.extend(samples.iter().map(|s| s[0]).filter(|&t| t >= t_start && t <= t_end))
            }
            _ => {}
        }
    }
}

fn interpolate(samples: &[[f64; 2]], t: f64) -> f64 {
    let k = samples.partition_point(|s| s[0] <= t);
    if k == 0 {
        return samples[0][1];
    }
    if k == samples.len() {
        return samples[k - 1][1];
    }
    let [t0, w0] = samples[k - 1];
    let [t1, w1] = samples[k];
    w0 + (w1 - w0) * (t - t0) / (t1 - t0)
}

/// Per-edge weight signals plus the declared bound `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSignal {
    edges: Vec<EdgeSignal>,
    omega: f64,
}

impl WeightSignal {
    /// Validates every edge signal. Without an explicit `omega` the largest
    /// analytic per-edge bound is used.
    pub fn new(edges: Vec<EdgeSignal>, omega: Option<f64>) -> Result<Self> {
        for (j, e) in edges.iter().enumerate() {
            e.validate()
                .map_err(|err| Error::InvalidSignal(format!("edge {j}: {err}")))?;
        }
        let omega = match omega {
            Some(w) if w.is_finite() && w >= 0.0 => w,
            Some(w) => return Err(Error::InvalidSignal(format!("omega {w} must be finite and >= 0"))),
            None => edges.iter().fold(0.0f64, |a, e| a.max(e.bound())),
        };
        Ok(Self { edges, omega })
    }

    pub fn constant(weights: &[f64]) -> Result<Self> {
        Self::new(
            weights.iter().map(|&value| EdgeSignal::Constant { value }).collect(),
            None,
        )
    }

    pub fn edges(&self) -> &[EdgeSignal] {
        &self.edges
    }

    /// Every edge multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {factor} must be positive")));
        }
        Self::new(
            self.edges.iter().map(|e| e.scaled(factor)).collect(),
            Some(self.omega * factor),
        )
    }
}

impl EdgeWeights for WeightSignal {
    fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn eval_piece(&self, t: f64, anchor: f64, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.edges) {
            *o = e.eval_piece(t, anchor);
        }
    }

    fn breakpoints(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.edges {
            e.breakpoints(t_start, t_end, &mut out);
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn omega(&self) -> f64 {
        self.omega
    }
}

/// Numerical certificate that the tree-edge weights are persistently
/// exciting on a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeCertificate {
    /// Window length `T`.
    pub window: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub windows_checked: usize,
    pub grid_step: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Start of the window and the edge that attain `mu1`.
    pub weakest_window_start: f64,
    pub weakest_edge: usize,
}

/// Checks `μ₁ ≤ ∫ w_ii(s)² ds ≤ μ₂` over sliding windows of length `window`
/// (stride `window / 4`) for every edge in `tree_edges`.
pub fn verify_pe(
    signal: &dyn EdgeWeights,
    tree_edges: &[usize],
    window: f64,
    t_start: f64,
    t_end: f64,
    grid_step: f64,
) -> Result<PeCertificate> {
    verify_pe_with_stride(signal, tree_edges, window, t_start, t_end, grid_step, window / 4.0)
}

pub fn verify_pe_with_stride(
    signal: &dyn EdgeWeights,
    tree_edges: &[usize],
    window: f64,
    t_start: f64,
    t_end: f64,
    grid_step: f64,
    stride: f64,
) -> Result<PeCertificate> {
    if !(window > 0.0) {
        return Err(Error::InvalidParameter(format!("PE window must be positive, got {window}")));
    }
    if !(t_end - t_start >= window * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "PE horizon [{t_start}, {t_end}] is shorter than the window {window}"
        )));
    }
    if !(grid_step > 0.0 && grid_step <= window / 100.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "PE grid step {grid_step} must be in (0, T/100 = {}]",
            window / 100.0
        )));
    }
    if !(stride > 0.0) {
        return Err(Error::InvalidParameter(format!("PE window stride must be positive, got {stride}")));
    }
    if tree_edges.is_empty() {
        return Err(Error::InvalidParameter("PE check needs at least one edge".into()));
    }
    if let Some(&j) = tree_edges.iter().find(|&&j| j >= signal.edge_count()) {
        return Err(Error::InvalidParameter(format!("edge {j} out of range")));
    }

    let mut starts = Vec::new();
    let mut k = 0usize;
    loop {
        let s = t_start + k as f64 * stride;
        if s + window > t_end + 1e-9 * window {
            break;
        }
        starts.push(s);
        k += 1;
    }
    let last = t_end - window;
    if starts.last().is_none_or(|&s| last - s > 1e-9 * window) {
        starts.push(last.max(t_start));
    }

    let breaks = signal.breakpoints(t_start, t_end);
    let mut mu1 = f64::INFINITY;
    let mut mu2 = 0.0f64;
    let mut weakest = (t_start, tree_edges[0]);
    for &s in &starts {
        let integrals = window_square_integrals(signal, tree_edges, s, s + window, grid_step, &breaks);
        for (&edge, &value) in tree_edges.iter().zip(&integrals) {
            if value <= PE_TOLERANCE {
                return Err(Error::NotPersistentlyExciting {
                    edge,
                    window_start: s,
                    window_end: s + window,
                    integral: value,
                });
            }
            if value < mu1 {
                mu1 = value;
                weakest = (s, edge);
            }
            mu2 = mu2.max(value);
        }
    }

    Ok(PeCertificate {
        window,
        mu1,
        mu2,
        windows_checked: starts.len(),
        grid_step,
        t_start,
        t_end,
        weakest_window_start: weakest.0,
        weakest_edge: weakest.1,
    })
}

/// Composite trapezoid integrals of `w_j(s)²` over `[a, b]` for each listed
/// edge, splitting at `breaks`.
pub(crate) fn window_square_integrals(
    signal: &dyn EdgeWeights,
    edges: &[usize],
    a: f64,
    b: f64,
    grid_step: f64,
    breaks: &[f64],
) -> Vec<f64> {
    let lo = breaks.partition_point(|&t| t <= a);
    let hi = breaks.partition_point(|&t| t < b);
    let mut acc = vec![0.0; edges.len()];
    let mut w = vec![0.0; signal.edge_count()];
    for (u, v) in pieces(a, b, &breaks[lo..hi]) {
        let anchor = 0.5 * (u + v);
        let count = (((v - u) / grid_step) - 1e-9).ceil().max(1.0) as usize;
        let dt = (v - u) / count as f64;
        for i in 0..=count {
            let t = if i == count { v } else { u + i as f64 * dt };
            signal.eval_piece(t, anchor, &mut w);
            let weight = if i == 0 || i == count { 0.5 * dt } else { dt };
            for (slot, &j) in acc.iter_mut().zip(edges) {
                *slot += weight * w[j] * w[j];
            }
        }
    }
    acc
}

/// Largest sampled diagonal entry of `W(t)` over `[t_start, t_end]`, checked
/// against the declared `ω`.
pub fn norm_bound(signal: &dyn EdgeWeights, t_start: f64, t_end: f64, grid_step: f64) -> Result<f64> {
    if !(grid_step > 0.0) || !(t_end >= t_start) {
        return Err(Error::InvalidParameter(format!(
            "norm bound needs t_end >= t_start and a positive grid step (got [{t_start}, {t_end}], {grid_step})"
        )));
    }
    let omega = signal.omega();
    let breaks = signal.breakpoints(t_start, t_end);
    let mut w = vec![0.0; signal.edge_count()];
    let mut best = 0.0f64;
    for (u, v) in pieces(t_start, t_end, &breaks) {
        let anchor = 0.5 * (u + v);
        let count = ((v - u) / grid_step).ceil().max(1.0) as usize;
        let dt = (v - u) / count as f64;
        for i in 0..=count {
            let t = if i == count { v } else { u + i as f64 * dt };
            signal.eval_piece(t, anchor, &mut w);
            for (edge, &value) in w.iter().enumerate() {
                if value > omega * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::OmegaExceeded { edge, t, value, omega });
                }
                best = best.max(value);
            }
        }
    }
    Ok(best)
}
