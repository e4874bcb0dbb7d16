//! Scenario documents (TOML). Node and edge indices are 1-based in the file
//! and 0-based everywhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{EdgeSignal, WeightSignal};
use crate::graph::Topology;
use crate::simulator::{default_step, EdgeSet, Feedback, SwitchingSchedule, EVENT_TOLERANCE};
use crate::trigger::{TriggerKind, TriggerSpec};

pub const DEFAULT_WINDOW: f64 = 1.0;
/// Default quadrature step as a fraction of the PE window.
pub const DEFAULT_GRID_DIVISIONS: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub topology: TopologySection,
    pub weights: WeightsSection,
    pub trigger: TriggerSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub excitation: ExcitationSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching: Option<SwitchingSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_hint: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub edges: Vec<EdgeSignal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Static,
    Dynamic,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "unit")]
    pub k: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_tol: Option<f64>,
    /// Extend `t_end` until the certified envelope is below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// End of the certification horizon; `t_end` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeSelection {
    /// The configured (or breadth-first) decomposition tree.
    #[default]
    Decomposition,
    Kappa2Min,
    Kappa2Max,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Supplied overshoot constant; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_v_step: Option<f64>,
    #[serde(default)]
    pub tree_selection: TreeSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSetSpec {
    pub name: String,
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSection {
    pub topologies: Vec<EdgeSetSpec>,
    /// 1-based indices into `topologies`, cycled with a fixed dwell.
    pub pattern: Vec<usize>,
    pub dwell: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell_min: Option<f64>,
    /// Entries per union window; the pattern length by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_span: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Keep every `stride`-th trajectory sample (events are always kept).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn emit_config(cfg: &ScenarioConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a positive finite number, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.topology.nodes;
        if n < 2 {
            return Err(Error::config("topology.nodes", format!("need at least 2 nodes, got {n}")));
        }
        for (i, &[a, b]) in self.topology.edges.iter().enumerate() {
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::config(
                    "topology.edges",
                    format!("edge {} = ({a}, {b}) has an endpoint outside 1..={n}", i + 1),
                ));
            }
        }
        let m = self.topology.edges.len();
        if let Some(hint) = &self.topology.tree_hint {
            if let Some(bad) = hint.iter().find(|&&e| e == 0 || e > m) {
                return Err(Error::config("topology.tree_hint", format!("edge index {bad} outside 1..={m}")));
            }
        }
        if self.weights.edges.len() != m {
            return Err(Error::config(
                "weights.edges",
                format!("{} signals given for {m} edges", self.weights.edges.len()),
            ));
        }
        for (i, s) in self.weights.edges.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::config(format!("weights.edges[{}]", i + 1), e.to_string()))?;
        }
        if let Some(w) = self.weights.omega {
            positive("weights.omega", w)?;
        }

        match self.trigger.kind {
            FeedbackKind::Continuous => {}
            kind => {
                let c = self
                    .trigger
                    .c
                    .ok_or_else(|| Error::config("trigger.c", "required for static and dynamic triggers"))?;
                positive("trigger.c", c)?;
                if kind == FeedbackKind::Dynamic {
                    let beta = self
                        .trigger
                        .beta
                        .ok_or_else(|| Error::config("trigger.beta", "required for the dynamic trigger"))?;
                    if !(beta >= 0.0) || !beta.is_finite() {
                        return Err(Error::config("trigger.beta", format!("must be >= 0, got {beta}")));
                    }
                }
            }
        }

        let sim = &self.simulation;
        positive("simulation.k", sim.k)?;
        if sim.x0.len() != n {
            return Err(Error::config(
                "simulation.x0",
                format!("has {} entries but the graph has {n} nodes", sim.x0.len()),
            ));
        }
        if sim.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("simulation.x0", "entries must be finite"));
        }
        if !sim.t0.is_finite() || !(sim.t_end > sim.t0) || !sim.t_end.is_finite() {
            return Err(Error::config(
                "simulation.t_end",
                format!("must be finite and greater than t0 = {}, got {}", sim.t0, sim.t_end),
            ));
        }
        if let Some(h) = sim.step {
            positive("simulation.step", h)?;
        }
        if let Some(e) = sim.event_tol {
            positive("simulation.event_tol", e)?;
        }
        if let Some(e) = sim.consensus_target {
            positive("simulation.consensus_target", e)?;
        }

        let window = self.window();
        positive("excitation.window", window)?;
        if let Some(h) = self.excitation.horizon {
            if !(h - sim.t0 >= window) {
                return Err(Error::config(
                    "excitation.horizon",
                    format!("must cover at least one window past t0 (horizon {h}, window {window})"),
                ));
            }
        } else if sim.t_end - sim.t0 < window {
            return Err(Error::config(
                "excitation.window",
                format!("window {window} is longer than the simulated horizon"),
            ));
        }
        if let Some(g) = self.excitation.grid_step {
            positive("excitation.grid_step", g)?;
            if g > window / 100.0 {
                return Err(Error::config("excitation.grid_step", format!("must be <= window/100 = {}", window / 100.0)));
            }
        }

        if let Some(v) = self.bounds.m_v {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::config("bounds.m_v", format!("must be >= 1, got {v}")));
            }
        }
        if let Some(h) = self.bounds.m_v_step {
            positive("bounds.m_v_step", h)?;
        }

        if let Some(sw) = &self.switching {
            if sw.topologies.is_empty() {
                return Err(Error::config("switching.topologies", "at least one edge set is required"));
            }
            for (i, set) in sw.topologies.iter().enumerate() {
                if let Some(bad) = set.edges.iter().find(|&&e| e == 0 || e > m) {
                    return Err(Error::config(
                        format!("switching.topologies[{}].edges", i + 1),
                        format!("edge index {bad} outside 1..={m}"),
                    ));
                }
            }
            if sw.pattern.is_empty() {
                return Err(Error::config("switching.pattern", "must not be empty"));
            }
            if let Some(bad) = sw.pattern.iter().find(|&&p| p == 0 || p > sw.topologies.len()) {
                return Err(Error::config(
                    "switching.pattern",
                    format!("index {bad} outside 1..={}", sw.topologies.len()),
                ));
            }
            positive("switching.dwell", sw.dwell)?;
            if let Some(d) = sw.dwell_min {
                positive("switching.dwell_min", d)?;
            }
            if sw.window_span == Some(0) {
                return Err(Error::config("switching.window_span", "must be >= 1"));
            }
        }
        if self.output.stride == Some(0) {
            return Err(Error::config("output.stride", "must be >= 1"));
        }
        Ok(())
    }

    /// Defaults that apply to this document, as `field = value` lines.
    pub fn defaults_applied(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.excitation.window.is_none() {
            out.push(format!("excitation.window = {DEFAULT_WINDOW}"));
        }
        if self.excitation.horizon.is_none() {
            out.push(format!("excitation.horizon = {} (t_end)", self.pe_horizon()));
        }
        if self.excitation.grid_step.is_none() {
            out.push(format!("excitation.grid_step = {} (window/{DEFAULT_GRID_DIVISIONS})", self.grid_step()));
        }
        if self.simulation.step.is_none() {
            out.push(format!("simulation.step = {} (min(T/200, 1e-2, dwell/50))", self.step()));
        }
        if self.simulation.event_tol.is_none() {
            out.push(format!("simulation.event_tol = {EVENT_TOLERANCE}"));
        }
        if self.bounds.m_v.is_none() {
            out.push(format!("bounds.m_v estimated with step {}", self.m_v_step()));
        }
        out
    }

    pub fn window(&self) -> f64 {
        self.excitation.window.unwrap_or(DEFAULT_WINDOW)
    }

    pub fn pe_horizon(&self) -> f64 {
        self.excitation.horizon.unwrap_or(self.simulation.t_end)
    }

    pub fn grid_step(&self) -> f64 {
        self.excitation.grid_step.unwrap_or(self.window() / DEFAULT_GRID_DIVISIONS)
    }

    pub fn step(&self) -> f64 {
        self.simulation
            .step
            .unwrap_or_else(|| default_step(self.window(), self.switching.as_ref().map(|s| s.dwell)))
    }

    pub fn event_tol(&self) -> f64 {
        self.simulation.event_tol.unwrap_or(EVENT_TOLERANCE)
    }

    pub fn m_v_step(&self) -> f64 {
        self.bounds.m_v_step.unwrap_or_else(|| self.step())
    }

    pub fn stride(&self) -> usize {
        self.output.stride.unwrap_or(1)
    }

    pub fn topology(&self) -> Result<Topology> {
        let edges: Vec<(usize, usize)> = self.topology.edges.iter().map(|&[a, b]| (a, b)).collect();
        Topology::from_one_based(self.topology.nodes, &edges)
    }

    pub fn tree_hint(&self) -> Option<Vec<usize>> {
        self.topology.tree_hint.as_ref().map(|h| h.iter().map(|e| e - 1).collect())
    }

    pub fn weight_signal(&self) -> Result<WeightSignal> {
        WeightSignal::new(self.weights.edges.clone(), self.weights.omega)
    }

    pub fn feedback(&self) -> Result<Feedback> {
        let t = &self.trigger;
        Ok(match t.kind {
            FeedbackKind::Continuous => Feedback::Continuous,
            FeedbackKind::Static => {
                Feedback::EventTriggered(TriggerSpec::new(TriggerKind::Static, t.c.unwrap_or(0.0), 0.0)?)
            }
            FeedbackKind::Dynamic => Feedback::EventTriggered(TriggerSpec::new(
                TriggerKind::Dynamic,
                t.c.unwrap_or(0.0),
                t.beta.unwrap_or(0.0),
            )?),
        })
    }

    /// The switching schedule covering `[t0, horizon]`, if any.
    pub fn schedule(&self, horizon: f64) -> Result<Option<SwitchingSchedule>> {
        let Some(sw) = &self.switching else {
            return Ok(None);
        };
        let sets = sw
            .topologies
            .iter()
            .map(|s| EdgeSet {
                name: s.name.clone(),
                edges: s.edges.iter().map(|e| e - 1).collect(),
            })
            .collect();
        let pattern: Vec<usize> = sw.pattern.iter().map(|p| p - 1).collect();
        SwitchingSchedule::periodic(
            sets,
            &pattern,
            sw.dwell,
            sw.dwell_min.unwrap_or(sw.dwell),
            self.simulation.t0,
            horizon,
            sw.window_span.unwrap_or(pattern.len()),
        )
        .map(Some)
    }
}

pub const PRESET_NAMES: [&str; 4] = ["benchmark-dynamic", "benchmark-static", "triangle-dynamic", "two-node"];

/// Text of a built-in scenario.
pub fn preset(name: &str) -> Result<String> {
    let body = match name {
        "benchmark-dynamic" => benchmark("benchmark-dynamic", "kind = \"dynamic\"\nc = 0.5\nbeta = 0.06\n"),
        "benchmark-static" => benchmark("benchmark-static", "kind = \"static\"\nc = 0.5\n"),
        "triangle-dynamic" => TRIANGLE.to_string(),
        "two-node" => TWO_NODE.to_string(),
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset '{other}' (available: {})", PRESET_NAMES.join(", ")),
            ))
        }
    };
    Ok(body)
}

fn benchmark(name: &str, trigger: &str) -> String {
    let mut s = format!(
        r#"# Four agents on the complete graph K4 with two alternating spanning trees.
name = "{name}"

[topology]
nodes = 4
# e1..e4 run around the square 1-2-3-4, e5 and e6 are the diagonals 1-3, 2-4.
edges = [[1, 2], [2, 3], [3, 4], [4, 1], [1, 3], [2, 4]]
tree_hint = [1, 2, 3]

[trigger]
{trigger}
[simulation]
k = 1.0
x0 = [1.0, 2.0, 0.3, 0.4]
t0 = 0.0
t_end = 200.0
consensus_target = 0.01

[excitation]
# three square-wave periods (2*pi/4 each) plus the sine period 2*pi/5 fit in 2*pi
window = 6.283185307179586
horizon = 200.0
grid_step = 0.005

[bounds]
tree_selection = "kappa2_max"

[switching]
# G1 is the path e1 e2 e3, G2 the star e1 e4 e5 around agent 1.
pattern = [1, 2]
dwell = 1.5707963267948966
window_span = 2

[[switching.topologies]]
name = "G1"
edges = [1, 2, 3]

[[switching.topologies]]
name = "G2"
edges = [1, 4, 5]

[weights]
omega = 2.0
# Gated sinusoids g_i(t) = max(0, (square(4t, d_i) + 1) * sin(5t)) with duty
# d_i = 20 - (i-1)*0.1*pi percent. The source expression
# "square(4*t, 20-(i-1)0.1pi)+1).*sin(5*t)" has unbalanced parentheses; this
# is the reading that keeps weights nonnegative. g_5 is not given in the
# source and follows the same formula; g_6 = 0 is the inactive diagonal.
"#
    );
    for i in 1..=6 {
        match EdgeSignal::benchmark(i).expect("benchmark edge") {
            EdgeSignal::SquareSine(sq) => s.push_str(&format!(
                "\n[[weights.edges]]\nkind = \"square_sine\"\namplitude = 1.0\nsquare_rate = 4.0\nduty = {:?}\nshift = 1.0\nsine_rate = 5.0\nclamp = true\n",
                sq.duty
            )),
            _ => s.push_str("\n[[weights.edges]]\nkind = \"zero\"\n"),
        }
    }
    s
}

const TRIANGLE: &str = r#"# Triangle with unit weights; the dynamic trigger decays slower than the
# certified consensus rate, so every bound constant is available.
name = "triangle-dynamic"

[topology]
nodes = 3
edges = [[1, 2], [2, 3], [1, 3]]

[trigger]
kind = "dynamic"
c = 0.5
beta = 0.02

[simulation]
k = 1.0
x0 = [1.0, -0.5, 0.2]
t_end = 50.0
consensus_target = 0.01

[excitation]
window = 1.0
horizon = 50.0

[bounds]
tree_selection = "decomposition"

[weights]
edges = [
    { kind = "constant", value = 1.0 },
    { kind = "constant", value = 1.0 },
    { kind = "constant", value = 1.0 },
]
"#;

const TWO_NODE: &str = r#"name = "two-node"

[topology]
nodes = 2
edges = [[1, 2]]

[trigger]
kind = "static"
c = 0.1

[simulation]
x0 = [0.0, 1.0]
t_end = 5.0

[weights]
edges = [{ kind = "constant", value = 1.0 }]
"#;
