//! Closed-loop simulation of `ẋ = -kL(t)x̂` with event-triggered broadcasts.
//!
//! The integrator is fixed-step RK4 with nodes forced at weight breakpoints,
//! topology switches, caller-supplied times and the localized trigger
//! crossings. Between events `x̂` is constant, so the right-hand side only
//! depends on `t` and a fresh sub-step from the step start gives the state at
//! any intermediate time; crossings are bisected on that sub-step.

use serde::{Deserialize, Serialize};

use crate::bounds::CertifiedBounds;
use crate::error::{Error, Result};
use crate::excitation::EdgeWeights;
use crate::graph::{SpanningDecomposition, Topology};
use crate::ode::{pieces, rk4_step};
use crate::trigger::{control_into, BroadcastState, Event, TriggerSpec};

pub const EVENT_TOLERANCE: f64 = 1e-9;

/// Slack allowed when comparing trajectories with the certified envelope.
pub const ENVELOPE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feedback {
    /// `x̂ ≡ x`: plain consensus with no broadcast error.
    Continuous,
    EventTriggered(TriggerSpec),
}

impl Feedback {
    pub fn trigger(&self) -> Option<TriggerSpec> {
        match self {
            Feedback::Continuous => None,
            Feedback::EventTriggered(t) => Some(*t),
        }
    }
}

/// A named subset of the underlying graph's edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub name: String,
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start: f64,
    pub set: usize,
}

/// Piecewise-constant selection of active edge sets. The last entry stays
/// active forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingSchedule {
    pub sets: Vec<EdgeSet>,
    pub entries: Vec<ScheduleEntry>,
    pub dwell_min: f64,
    pub union_windows: Vec<(f64, f64)>,
}

impl SwitchingSchedule {
    /// Cycles through `pattern` (indices into `sets`) with a fixed `dwell`
    /// from `t0` until `horizon`. Each union window spans `window_span`
    /// consecutive entries.
    pub fn periodic(
        sets: Vec<EdgeSet>,
        pattern: &[usize],
        dwell: f64,
        dwell_min: f64,
        t0: f64,
        horizon: f64,
        window_span: usize,
    ) -> Result<Self> {
        if pattern.is_empty() || window_span == 0 {
            return Err(Error::Schedule("pattern and window span must be non-empty".into()));
        }
        if !(dwell > 0.0) || !(horizon > t0) {
            return Err(Error::Schedule(format!(
                "need dwell > 0 and horizon > t0 (dwell {dwell}, [{t0}, {horizon}])"
            )));
        }
        let count = ((horizon - t0) / dwell).ceil() as usize;
        let entries: Vec<ScheduleEntry> = (0..count.max(1))
            .map(|j| ScheduleEntry {
                start: t0 + j as f64 * dwell,
                set: pattern[j % pattern.len()],
            })
            .collect();
        let union_windows = (0..)
            .map(|b| (t0 + (b * window_span) as f64 * dwell, t0 + ((b + 1) * window_span) as f64 * dwell))
            .take_while(|(start, _)| *start < horizon)
            .collect();
        Ok(Self {
            sets,
            entries,
            dwell_min,
            union_windows,
        })
    }

    pub fn active_entry(&self, t: f64) -> Option<usize> {
        self.entries.partition_point(|e| e.start <= t).checked_sub(1)
    }

    pub fn active_set(&self, t: f64) -> Option<&EdgeSet> {
        self.active_entry(t).map(|i| &self.sets[self.entries[i].set])
    }

    pub fn switch_times(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| e.start)
            .filter(|&s| s > t_start && s < t_end)
            .collect()
    }

    fn check_structure(&self, m: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Schedule("schedule has no entries".into()));
        }
        for (i, set) in self.sets.iter().enumerate() {
            if let Some(&bad) = set.edges.iter().find(|&&e| e >= m) {
                return Err(Error::Schedule(format!(
                    "edge set {} ('{}') references edge {} but the graph has {m} edges",
                    i + 1,
                    set.name,
                    bad + 1
                )));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.set >= self.sets.len() {
                return Err(Error::Schedule(format!("entry {} references unknown edge set {}", i + 1, e.set + 1)));
            }
            if !e.start.is_finite() {
                return Err(Error::Schedule(format!("entry {} has a non-finite start", i + 1)));
            }
        }
        for (i, w) in self.entries.windows(2).enumerate() {
            if !(w[1].start > w[0].start) {
                return Err(Error::Schedule(format!(
                    "entry start times must increase (entry {} at {}, entry {} at {})",
                    i + 1,
                    w[0].start,
                    i + 2,
                    w[1].start
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCertificate {
    pub windows_checked: usize,
    /// Longest union window.
    pub t_max: f64,
    pub shortest_dwell: Option<f64>,
}

/// Checks the dwell time, the contiguity of the union windows and that every
/// window's active edges contain a spanning tree.
pub fn validate_schedule(schedule: &SwitchingSchedule, topology: &Topology) -> Result<ScheduleCertificate> {
    schedule.check_structure(topology.edge_count())?;
    if !(schedule.dwell_min > 0.0) {
        return Err(Error::Schedule(format!("dwell time t_L must be > 0, got {}", schedule.dwell_min)));
    }
    let mut shortest: Option<f64> = None;
    for (i, w) in schedule.entries.windows(2).enumerate() {
        let gap = w[1].start - w[0].start;
        shortest = Some(shortest.map_or(gap, |s: f64| s.min(gap)));
        if gap < schedule.dwell_min * (1.0 - 1e-12) {
            return Err(Error::Schedule(format!(
                "entries {} and {} are {gap} apart, below the dwell time {}",
                i + 1,
                i + 2,
                schedule.dwell_min
            )));
        }
    }
    if schedule.union_windows.is_empty() {
        return Err(Error::Schedule("no union windows declared".into()));
    }
    let mut t_max = 0.0f64;
    for (i, &(start, end)) in schedule.union_windows.iter().enumerate() {
        if !(end > start) {
            return Err(Error::Schedule(format!("union window {} is empty: [{start}, {end}]", i + 1)));
        }
        if let Some(&(_, prev_end)) = i.checked_sub(1).and_then(|j| schedule.union_windows.get(j)) {
            if (start - prev_end).abs() > 1e-12 * start.abs().max(1.0) {
                return Err(Error::Schedule(format!(
                    "union windows {} and {} are not contiguous ({prev_end} vs {start})",
                    i,
                    i + 1
                )));
            }
        }
        t_max = t_max.max(end - start);
        let mut union: Vec<usize> = Vec::new();
        for (j, entry) in schedule.entries.iter().enumerate() {
            let until = schedule.entries.get(j + 1).map_or(f64::INFINITY, |e| e.start);
            if entry.start < end && until > start {
                union.extend(&schedule.sets[entry.set].edges);
            }
        }
        union.sort_unstable();
        union.dedup();
        let components = topology.components(Some(&union));
        if components.len() > 1 {
            return Err(Error::WindowNotSpanning {
                window: i + 1,
                start,
                end,
                components: components.iter().map(|c| c.iter().map(|v| v + 1).collect()).collect(),
            });
        }
    }
    Ok(ScheduleCertificate {
        windows_checked: schedule.union_windows.len(),
        t_max,
        shortest_dwell: shortest,
    })
}

/// Base weights with inactive edges zeroed by a schedule.
pub struct ScheduledWeights<'a> {
    base: &'a dyn EdgeWeights,
    schedule: &'a SwitchingSchedule,
    masks: Vec<Vec<bool>>,
}

impl<'a> ScheduledWeights<'a> {
    pub fn new(base: &'a dyn EdgeWeights, schedule: &'a SwitchingSchedule) -> Result<Self> {
        let m = base.edge_count();
        schedule.check_structure(m)?;
        let masks = schedule
            .sets
            .iter()
            .map(|s| {
                let mut mask = vec![false; m];
                s.edges.iter().for_each(|&e| mask[e] = true);
                mask
            })
            .collect();
        Ok(Self { base, schedule, masks })
    }
}

impl EdgeWeights for ScheduledWeights<'_> {
    fn edge_count(&self) -> usize {
        self.base.edge_count()
    }

    fn eval_piece(&self, t: f64, anchor: f64, out: &mut [f64]) {
        self.base.eval_piece(t, anchor, out);
        match self.schedule.active_entry(anchor) {
            Some(i) => {
                let mask = &self.masks[self.schedule.entries[i].set];
                out.iter_mut().zip(mask).filter(|(_, on)| !**on).for_each(|(w, _)| *w = 0.0);
            }
            None => out.iter_mut().for_each(|w| *w = 0.0),
        }
    }

    fn breakpoints(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        let mut b = self.base.breakpoints(t_start, t_end);
        b.extend(self.schedule.switch_times(t_start, t_end));
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    fn omega(&self) -> f64 {
        self.base.omega()
    }
}

/// The plant and controller of one run.
#[derive(Clone, Copy)]
pub struct Scenario<'a> {
    /// Underlying graph; with a schedule this is the union of all edge sets.
    pub topology: &'a Topology,
    pub weights: &'a dyn EdgeWeights,
    pub schedule: Option<&'a SwitchingSchedule>,
    pub feedback: Feedback,
    pub gain: f64,
    pub x0: &'a [f64],
    /// Decomposition used for `Υ`; a breadth-first tree when absent.
    pub decomposition: Option<&'a SpanningDecomposition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t0: f64,
    pub t_end: f64,
    pub step: f64,
    pub event_tol: f64,
    /// Extra times at which the integrator lands exactly.
    pub extra_nodes: Vec<f64>,
}

impl SimConfig {
    pub fn new(t0: f64, t_end: f64, step: f64) -> Self {
        Self {
            t0,
            t_end,
            step,
            event_tol: EVENT_TOLERANCE,
            extra_nodes: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.t_end > self.t0) || !self.t_end.is_finite() || !self.t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need t_end > t0, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(self.step > 0.0) || !(self.event_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step and event tolerance must be > 0 (step {}, tolerance {})",
                self.step, self.event_tol
            )));
        }
        Ok(())
    }
}

/// Default step `min(T/200, 1e-2, dwell/50)`.
pub fn default_step(window: f64, shortest_dwell: Option<f64>) -> f64 {
    let mut h = (window / 200.0).min(1e-2);
    if let Some(d) = shortest_dwell {
        h = h.min(d / 50.0);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub x_hat: Vec<Vec<f64>>,
    /// `‖Dᵀx‖` over the underlying graph.
    pub x_e_norm: Vec<f64>,
    /// `‖Dᵀx‖` over the edges active at each sample (switching runs only).
    pub x_e_norm_active: Option<Vec<f64>>,
    pub upsilon_norm: Vec<f64>,
    pub events: Vec<Event>,
    pub envelope: Option<Vec<f64>>,
    /// Per agent, the shortest gap between consecutive broadcasts, counting
    /// the initial one at `t0`.
    pub min_inter_event: Vec<Option<f64>>,
    pub consensus_value: f64,
    pub max_mean_drift: f64,
    /// Largest trigger value seen when an event was applied; bounded by the
    /// localization tolerance times the error slope.
    pub max_trigger_excess: Option<f64>,
}

impl SimResult {
    pub fn attach_envelope(&mut self, consts: &CertifiedBounds) {
        self.envelope = Some(self.times.iter().map(|&t| consts.envelope(t)).collect());
    }

    pub fn final_state(&self) -> &[f64] {
        self.x.last().expect("at least one sample")
    }

    /// Index of the sample recorded exactly at `t`, if any.
    pub fn sample_at(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }

    /// State at `t` by linear interpolation between samples.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            return self.x[0].clone();
        }
        if i >= self.times.len() {
            return self.final_state().to_vec();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        self.x[i - 1].iter().zip(&self.x[i]).map(|(a, b)| a + s * (b - a)).collect()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }
}

struct Recorder<'a> {
    topology: &'a Topology,
    schedule: Option<&'a SwitchingSchedule>,
    dec: &'a SpanningDecomposition,
    mean0: f64,
    out: SimResult,
}

impl<'a> Recorder<'a> {
    fn new(
        topology: &'a Topology,
        schedule: Option<&'a SwitchingSchedule>,
        dec: &'a SpanningDecomposition,
        x0: &[f64],
    ) -> Self {
        let mean0 = x0.iter().sum::<f64>() / x0.len() as f64;
        Self {
            topology,
            schedule,
            dec,
            mean0,
            out: SimResult {
                times: Vec::new(),
                x: Vec::new(),
                x_hat: Vec::new(),
                x_e_norm: Vec::new(),
                x_e_norm_active: schedule.map(|_| Vec::new()),
                upsilon_norm: Vec::new(),
                events: Vec::new(),
                envelope: None,
                min_inter_event: vec![None; x0.len()],
                consensus_value: mean0,
                max_mean_drift: 0.0,
                max_trigger_excess: None,
            },
        }
    }

    fn push(&mut self, t: f64, x: &[f64], x_hat: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        let diffs = self.topology.edge_differences(x);
        self.out.x_e_norm.push(diffs.iter().map(|d| d * d).sum::<f64>().sqrt());
        if let (Some(active), Some(sched)) = (self.out.x_e_norm_active.as_mut(), self.schedule) {
            let norm = sched
                .active_set(t)
                .map_or(0.0, |s| s.edges.iter().map(|&e| diffs[e] * diffs[e]).sum::<f64>().sqrt());
            active.push(norm);
        }
        self.out.upsilon_norm.push(self.dec.upsilon_norm(x));
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        self.out.max_mean_drift = self.out.max_mean_drift.max((mean - self.mean0).abs());
        self.out.times.push(t);
        self.out.x.push(x.to_vec());
        self.out.x_hat.push(x_hat.to_vec());
        Ok(())
    }

    fn finish(mut self, t0: f64, broadcast: Option<BroadcastState>, excess: Option<f64>) -> SimResult {
        if let Some(b) = broadcast {
            let mut last = vec![t0; self.out.min_inter_event.len()];
            for ev in &b.event_log {
                let gap = ev.time - last[ev.agent];
                let slot = &mut self.out.min_inter_event[ev.agent];
                *slot = Some(slot.map_or(gap, |g: f64| g.min(gap)));
                last[ev.agent] = ev.time;
            }
            self.out.events = b.event_log;
        }
        self.out.max_trigger_excess = excess;
        self.out
    }
}

fn check_scenario(sc: &Scenario<'_>) -> Result<()> {
    let (n, m) = (sc.topology.node_count(), sc.topology.edge_count());
    if sc.x0.len() != n {
        return Err(Error::DimensionMismatch { what: "x0", expected: n, got: sc.x0.len() });
    }
    if sc.weights.edge_count() != m {
        return Err(Error::DimensionMismatch {
            what: "edge weights",
            expected: m,
            got: sc.weights.edge_count(),
        });
    }
    if !(sc.gain > 0.0) {
        return Err(Error::InvalidParameter(format!("gain k must be > 0, got {}", sc.gain)));
    }
    if sc.x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("x0 must be finite".into()));
    }
    Ok(())
}

/// Forced integration nodes inside `(t0, t_end)`.
fn forced_nodes(weights: &dyn EdgeWeights, cfg: &SimConfig) -> Vec<f64> {
    let mut nodes = weights.breakpoints(cfg.t0, cfg.t_end);
    nodes.extend(cfg.extra_nodes.iter().copied().filter(|&t| t > cfg.t0 && t < cfg.t_end));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
}

fn max_trigger(spec: &TriggerSpec, x_hat: &[f64], x: &[f64], t: f64) -> f64 {
    let thr = spec.threshold(t);
    x_hat
        .iter()
        .zip(x)
        .map(|(h, v)| (h - v).abs() - thr)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the closed loop with RK4 and bisection-localized events.
pub fn simulate(sc: &Scenario<'_>, cfg: &SimConfig) -> Result<SimResult> {
    check_scenario(sc)?;
    cfg.check()?;
    let scheduled;
    let weights: &dyn EdgeWeights = match sc.schedule {
        Some(s) => {
            if s.entries.first().is_none_or(|e| e.start > cfg.t0) {
                return Err(Error::Schedule("the first schedule entry must start at or before t0".into()));
            }
            scheduled = ScheduledWeights::new(sc.weights, s)?;
            &scheduled
        }
        None => sc.weights,
    };
    let owned;
    let dec = match sc.decomposition {
        Some(d) => d,
        None => {
            owned = SpanningDecomposition::new(sc.topology, None)?;
            &owned
        }
    };

    let n = sc.x0.len();
    let edges = sc.topology.edges();
    let k = sc.gain;
    let mut w = vec![0.0; edges.len()];
    let mut x = sc.x0.to_vec();
    let mut next = vec![0.0; n];
    let mut probe = vec![0.0; n];
    let mut scratch = vec![0.0; 5 * n];
    let mut broadcast = BroadcastState::new(sc.x0, cfg.t0);
    let mut excess: Option<f64> = None;
    let mut rec = Recorder::new(sc.topology, sc.schedule, dec, sc.x0);
    rec.push(cfg.t0, &x, &broadcast.x_hat)?;

    let nodes = forced_nodes(weights, cfg);
    let mut t = cfg.t0;
    for (a, b) in pieces(cfg.t0, cfg.t_end, &nodes) {
        let anchor = 0.5 * (a + b);
        let count = ((b - a) / cfg.step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / count as f64;
        for i in 0..count {
            let target = if i + 1 == count { b } else { a + (i + 1) as f64 * h };
            match sc.feedback {
                Feedback::Continuous => {
                    let mut rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
                        weights.eval_piece(s, anchor, &mut w);
                        control_into(edges, &w, y, k, dy);
                    };
                    rk4_step(&mut rhs, t, &x, target - t, &mut next, &mut scratch);
                    std::mem::swap(&mut x, &mut next);
                    t = target;
                    rec.push(t, &x, &x)?;
                }
                Feedback::EventTriggered(spec) => {
                    while t < target {
                        let x_hat = broadcast.x_hat.clone();
                        let mut rhs = |s: f64, _y: &[f64], dy: &mut [f64]| {
                            weights.eval_piece(s, anchor, &mut w);
                            control_into(edges, &w, &x_hat, k, dy);
                        };
                        rk4_step(&mut rhs, t, &x, target - t, &mut next, &mut scratch);
                        if max_trigger(&spec, &x_hat, &next, target) <= 0.0 {
                            std::mem::swap(&mut x, &mut next);
                            t = target;
                            rec.push(t, &x, &broadcast.x_hat)?;
                            break;
                        }
                        let (mut lo, mut hi) = (t, target);
                        while hi - lo > cfg.event_tol {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            rk4_step(&mut rhs, t, &x, mid - t, &mut probe, &mut scratch);
                            if max_trigger(&spec, &x_hat, &probe, mid) > 0.0 {
                                hi = mid;
                                std::mem::swap(&mut next, &mut probe);
                            } else {
                                lo = mid;
                            }
                        }
                        std::mem::swap(&mut x, &mut next);
                        t = hi;
                        let f = max_trigger(&spec, &x_hat, &x, t);
                        excess = Some(excess.map_or(f, |e: f64| e.max(f)));
                        broadcast.apply_events(&x, t, &spec);
                        rec.push(t, &x, &broadcast.x_hat)?;
                    }
                }
            }
        }
    }
    let broadcast = matches!(sc.feedback, Feedback::EventTriggered(_)).then_some(broadcast);
    Ok(rec.finish(cfg.t0, broadcast, excess))
}

/// Forward Euler re-simulation with a dense Laplacian and the same event
/// semantics. Samples are kept only at forced nodes, events and `t_end`.
pub fn reference_oracle(sc: &Scenario<'_>, cfg: &SimConfig, fine_step: f64) -> Result<SimResult> {
    check_scenario(sc)?;
    cfg.check()?;
    if !(fine_step > 0.0) || fine_step > cfg.step / 10.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "oracle step must satisfy 0 < fine_step <= step/10 (got {fine_step}, step {})",
            cfg.step
        )));
    }
    let scheduled;
    let weights: &dyn EdgeWeights = match sc.schedule {
        Some(s) => {
            scheduled = ScheduledWeights::new(sc.weights, s)?;
            &scheduled
        }
        None => sc.weights,
    };
    let owned;
    let dec = match sc.decomposition {
        Some(d) => d,
        None => {
            owned = SpanningDecomposition::new(sc.topology, None)?;
            &owned
        }
    };
    let n = sc.x0.len();
    let m = sc.topology.edge_count();
    let d = sc.topology.incidence();
    let mut w = vec![0.0; m];
    let mut lap = vec![0.0; n * n];
    // u = -k D W Dᵀ v, formed densely
    let mut drift = |s: f64, anchor: f64, v: &[f64], u: &mut [f64]| {
        weights.eval_piece(s, anchor, &mut w);
        for i in 0..n {
            for j in 0..n {
                lap[i * n + j] = (0..m).map(|e| d[(i, e)] * w[e] * d[(j, e)]).sum();
            }
        }
        for i in 0..n {
            u[i] = -sc.gain * (0..n).map(|j| lap[i * n + j] * v[j]).sum::<f64>();
        }
    };

    let mut x = sc.x0.to_vec();
    let mut u = vec![0.0; n];
    let mut probe = vec![0.0; n];
    let mut broadcast = BroadcastState::new(sc.x0, cfg.t0);
    let mut excess: Option<f64> = None;
    let mut rec = Recorder::new(sc.topology, sc.schedule, dec, sc.x0);
    rec.push(cfg.t0, &x, &broadcast.x_hat)?;

    let nodes = forced_nodes(weights, cfg);
    let mut t = cfg.t0;
    for (a, b) in pieces(cfg.t0, cfg.t_end, &nodes) {
        let anchor = 0.5 * (a + b);
        let count = ((b - a) / fine_step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / count as f64;
        for i in 0..count {
            let target = if i + 1 == count { b } else { a + (i + 1) as f64 * h };
            match sc.feedback {
                Feedback::Continuous => {
                    let state = x.clone();
                    drift(t, anchor, &state, &mut u);
                    x.iter_mut().zip(&u).for_each(|(xi, ui)| *xi += (target - t) * ui);
                    t = target;
                }
                Feedback::EventTriggered(spec) => {
                    while t < target {
                        let x_hat = broadcast.x_hat.clone();
                        drift(t, anchor, &x_hat, &mut u);
                        let euler = |tau: f64, out: &mut [f64]| {
                            for ((o, xi), ui) in out.iter_mut().zip(&x).zip(&u) {
                                *o = xi + (tau - t) * ui;
                            }
                        };
                        euler(target, &mut probe);
                        if max_trigger(&spec, &x_hat, &probe, target) <= 0.0 {
                            x.copy_from_slice(&probe);
                            t = target;
                            break;
                        }
                        let (mut lo, mut hi) = (t, target);
                        while hi - lo > cfg.event_tol {
                            let mid = 0.5 * (lo + hi);
                            if mid <= lo || mid >= hi {
                                break;
                            }
                            euler(mid, &mut probe);
                            if max_trigger(&spec, &x_hat, &probe, mid) > 0.0 {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        euler(hi, &mut probe);
                        x.copy_from_slice(&probe);
                        t = hi;
                        let f = max_trigger(&spec, &x_hat, &x, t);
                        excess = Some(excess.map_or(f, |e: f64| e.max(f)));
                        broadcast.apply_events(&x, t, &spec);
                        rec.push(t, &x, &broadcast.x_hat)?;
                    }
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
        }
        let shown = match sc.feedback {
            Feedback::Continuous => x.clone(),
            Feedback::EventTriggered(_) => broadcast.x_hat.clone(),
        };
        if rec.out.times.last() != Some(&t) {
            rec.push(t, &x, &shown)?;
        }
    }
    let broadcast = matches!(sc.feedback, Feedback::EventTriggered(_)).then_some(broadcast);
    Ok(rec.finish(cfg.t0, broadcast, excess))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeViolation {
    pub t: f64,
    pub x_e_norm: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub samples_checked: usize,
    pub slack: f64,
    pub violations: Vec<EnvelopeViolation>,
    /// Smallest `envelope - ‖x_e‖` and where it occurred.
    pub min_margin: f64,
    pub min_margin_time: f64,
    /// `(t, envelope - ‖x_e‖)` thinned to at most ~200 points.
    pub margin_profile: Vec<(f64, f64)>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_envelope(result: &SimResult, consts: &CertifiedBounds) -> EnvelopeReport {
    let stride = (result.times.len() / 200).max(1);
    let mut report = EnvelopeReport {
        samples_checked: result.times.len(),
        slack: ENVELOPE_SLACK,
        violations: Vec::new(),
        min_margin: f64::INFINITY,
        min_margin_time: result.times.first().copied().unwrap_or(0.0),
        margin_profile: Vec::new(),
    };
    for (i, (&t, &xe)) in result.times.iter().zip(&result.x_e_norm).enumerate() {
        let env = consts.envelope(t);
        let margin = env - xe;
        if margin < report.min_margin {
            report.min_margin = margin;
            report.min_margin_time = t;
        }
        if xe > env + ENVELOPE_SLACK {
            report.violations.push(EnvelopeViolation { t, x_e_norm: xe, envelope: env });
        }
        if i % stride == 0 || i + 1 == result.times.len() {
            report.margin_profile.push((t, margin));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoReport {
    pub gamma_min: f64,
    pub tolerance: f64,
    pub per_agent_min: Vec<Option<f64>>,
    /// Agents (0-based) whose shortest gap falls below `gamma_min - tolerance`.
    pub flagged: Vec<usize>,
    pub events: usize,
}

impl ZenoReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compares observed inter-event gaps with `gamma_min`; `tolerance` is
/// usually a small multiple of the event localization tolerance.
pub fn check_zeno(result: &SimResult, gamma_min: f64, tolerance: f64) -> ZenoReport {
    let flagged = result
        .min_inter_event
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_some_and(|g| g < gamma_min - tolerance))
        .map(|(i, _)| i)
        .collect();
    ZenoReport {
        gamma_min,
        tolerance,
        per_agent_min: result.min_inter_event.clone(),
        flagged,
        events: result.events.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallReport {
    pub radius: f64,
    pub tail_start: f64,
    /// Largest `‖x_e‖` over the tail of the horizon.
    pub tail_sup: f64,
    pub final_norm: f64,
    pub tail_events: usize,
}

impl BallReport {
    pub fn passed(&self) -> bool {
        self.tail_sup <= self.radius
    }
}

/// Sup of `‖x_e‖` over the last `tail_fraction` of the run against `radius`.
pub fn check_ball(result: &SimResult, radius: f64, tail_fraction: f64) -> BallReport {
    let t0 = result.times[0];
    let t_end = *result.times.last().expect("non-empty run");
    let tail_start = t_end - tail_fraction * (t_end - t0);
    let tail_sup = result
        .times
        .iter()
        .zip(&result.x_e_norm)
        .filter(|(t, _)| **t >= tail_start)
        .map(|(_, v)| *v)
        .fold(0.0f64, f64::max);
    BallReport {
        radius,
        tail_start,
        tail_sup,
        final_norm: *result.x_e_norm.last().expect("non-empty run"),
        tail_events: result.events.iter().filter(|e| e.time >= tail_start).count(),
    }
}
