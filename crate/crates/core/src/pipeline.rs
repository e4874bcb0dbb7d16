//! End-to-end runs: decompose, schedule, excitation, constants, simulate,
//! check, write. Each stage maps to its own exit code.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::bounds::{
    certify, extremal_kappa2, feedback_label, CertificationSetup, ConstantsReport, ExtremalKappa2, MvChoice,
};
use crate::config::{ScenarioConfig, TreeSelection};
use crate::error::Error;
use crate::excitation::{norm_bound, verify_pe, EdgeWeights, PeCertificate, WeightSignal};
use crate::export;
use crate::graph::{SpanningDecomposition, Topology};
use crate::simulator::{
    check_ball, check_envelope, check_zeno, simulate, validate_schedule, Feedback, Scenario, ScheduleCertificate,
    ScheduledWeights, SimConfig, SimResult, SwitchingSchedule,
};

/// Largest `|mean(x(t)) - mean(x0)|` accepted.
pub const MEAN_DRIFT_TOLERANCE: f64 = 1e-9;
/// Largest trigger value accepted at an applied event.
pub const TRIGGER_EXCESS_TOLERANCE: f64 = 1e-6;
pub const BALL_TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Decompose,
    Schedule,
    Excitation,
    Constants,
    Simulate,
    Check,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Decompose => 3,
            Stage::Schedule => 4,
            Stage::Excitation => 5,
            Stage::Constants => 6,
            Stage::Simulate => 7,
            Stage::Check => 8,
            Stage::Output => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Decompose => "decompose",
            Stage::Schedule => "schedule",
            Stage::Excitation => "excitation",
            Stage::Constants => "constants",
            Stage::Simulate => "simulate",
            Stage::Check => "check",
            Stage::Output => "output",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// PE and weight-bound failures belong to the excitation stage.
fn constants_stage_of(e: &Error) -> Stage {
    match e {
        Error::NotPersistentlyExciting { .. } | Error::OmegaExceeded { .. } => Stage::Excitation,
        _ => Stage::Constants,
    }
}

pub fn decompose_stage(cfg: &ScenarioConfig) -> Result<(Topology, SpanningDecomposition), StageError> {
    let topo = cfg.topology().at(Stage::Decompose)?;
    let hint = cfg.tree_hint();
    let dec = SpanningDecomposition::new(&topo, hint.as_deref()).at(Stage::Decompose)?;
    Ok((topo, dec))
}

pub fn schedule_stage(
    cfg: &ScenarioConfig,
    topo: &Topology,
    horizon: f64,
) -> Result<Option<(SwitchingSchedule, ScheduleCertificate)>, StageError> {
    match cfg.schedule(horizon).at(Stage::Schedule)? {
        Some(s) => {
            let cert = validate_schedule(&s, topo).at(Stage::Schedule)?;
            Ok(Some((s, cert)))
        }
        None => Ok(None),
    }
}

fn setup<'a>(
    cfg: &'a ScenarioConfig,
    topo: &'a Topology,
    weights: &'a dyn EdgeWeights,
    feedback: Feedback,
) -> CertificationSetup<'a> {
    CertificationSetup {
        topology: topo,
        weights,
        trigger: feedback.trigger(),
        gain: cfg.simulation.k,
        x0: &cfg.simulation.x0,
        t0: cfg.simulation.t0,
        pe_window: cfg.window(),
        pe_start: cfg.simulation.t0,
        pe_end: cfg.pe_horizon(),
        pe_grid: cfg.grid_step(),
        m_v: match cfg.bounds.m_v {
            Some(value) => MvChoice::Supplied { value },
            None => MvChoice::Estimate { step: cfg.m_v_step() },
        },
    }
}

/// Certificate for the decomposition tree, plus the sampled weight bound.
pub fn pe_check(cfg: &ScenarioConfig) -> Result<(PeCertificate, f64), StageError> {
    let (topo, dec) = decompose_stage(cfg)?;
    let weights = cfg.weight_signal().at(Stage::Config)?;
    let sched = schedule_stage(cfg, &topo, cfg.pe_horizon().max(cfg.simulation.t_end))?;
    let masked;
    let w: &dyn EdgeWeights = match &sched {
        Some((s, _)) => {
            masked = ScheduledWeights::new(&weights, s).at(Stage::Schedule)?;
            &masked
        }
        None => &weights,
    };
    let (t0, t1, grid) = (cfg.simulation.t0, cfg.pe_horizon(), cfg.grid_step());
    let cert = verify_pe(w, &dec.tree_edges, cfg.window(), t0, t1, grid).at(Stage::Excitation)?;
    let bound = norm_bound(w, t0, t1, grid).at(Stage::Excitation)?;
    Ok((cert, bound))
}

/// Constants together with the decomposition they were computed on.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsDocument {
    pub feedback: &'static str,
    pub tree_selection: TreeSelection,
    /// 1-based edge indices of the tree behind the constants.
    pub tree: Vec<usize>,
    pub pe_horizon: [f64; 2],
    pub report: ConstantsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extremal: Option<ExtremalKappa2>,
    pub notes: Vec<String>,
}

fn constants_with(
    cfg: &ScenarioConfig,
    topo: &Topology,
    base_dec: SpanningDecomposition,
    weights: &dyn EdgeWeights,
    feedback: Feedback,
) -> Result<(SpanningDecomposition, ConstantsDocument), StageError> {
    let st = setup(cfg, topo, weights, feedback);
    let classify = |e: Error| StageError {
        stage: constants_stage_of(&e),
        source: e,
    };
    let mut notes = Vec::new();
    let (dec, extremal) = match cfg.bounds.tree_selection {
        TreeSelection::Decomposition => (base_dec, None),
        sel => match extremal_kappa2(&st) {
            Ok(ex) => {
                let tree = if sel == TreeSelection::Kappa2Min { &ex.tree_min } else { &ex.tree_max };
                let dec = SpanningDecomposition::new(topo, Some(tree)).at(Stage::Constants)?;
                (dec, Some(ex))
            }
            // nothing to rank: report the decomposition tree as uncertified
            Err(Error::Hypothesis(msg)) => {
                notes.push(format!("{msg}; falling back to the decomposition tree"));
                (base_dec, None)
            }
            Err(e) => return Err(classify(e)),
        },
    };
    let report = certify(&st, &dec).map_err(classify)?;
    notes.push(match cfg.bounds.m_v {
        Some(v) => format!("m_v = {v} supplied by the configuration"),
        None => format!(
            "m_v estimated from the state transition matrix on [{}, {}] with step {}",
            cfg.simulation.t0,
            cfg.pe_horizon(),
            cfg.m_v_step()
        ),
    });
    notes.push(format!(
        "persistence of excitation certified numerically on [{}, {}] only",
        cfg.simulation.t0,
        cfg.pe_horizon()
    ));
    if let Some(reason) = &report.uncertified_reason {
        notes.push(format!("envelope and inter-event constants unavailable: {reason}"));
    }
    if let Some(ex) = &extremal {
        let skipped = ex.trees.iter().filter(|t| t.kappa2.is_none()).count();
        if skipped > 0 {
            notes.push(format!("{skipped} spanning trees skipped for lack of certified constants"));
        }
    }
    let doc = ConstantsDocument {
        feedback: feedback_label(feedback.trigger()),
        tree_selection: cfg.bounds.tree_selection,
        tree: dec.tree_edges.iter().map(|e| e + 1).collect(),
        pe_horizon: [cfg.simulation.t0, cfg.pe_horizon()],
        report,
        extremal,
        notes,
    };
    Ok((dec, doc))
}

/// The constants stage on its own (used by the `constants` subcommand).
pub fn constants_stage(cfg: &ScenarioConfig) -> Result<ConstantsDocument, StageError> {
    let (topo, dec) = decompose_stage(cfg)?;
    let weights = cfg.weight_signal().at(Stage::Config)?;
    let feedback = cfg.feedback().at(Stage::Config)?;
    let sched = schedule_stage(cfg, &topo, cfg.pe_horizon().max(cfg.simulation.t_end))?;
    let masked;
    let w: &dyn EdgeWeights = match &sched {
        Some((s, _)) => {
            masked = ScheduledWeights::new(&weights, s).at(Stage::Schedule)?;
            &masked
        }
        None => &weights,
    };
    Ok(constants_with(cfg, &topo, dec, w, feedback)?.1)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: Option<String>,
    pub feedback: &'static str,
    pub certified: bool,
    pub uncertified_reason: Option<String>,
    pub t0: f64,
    pub t_end: f64,
    pub t_end_source: &'static str,
    pub step: f64,
    pub events: usize,
    pub final_x_e_norm: f64,
    pub consensus_value: f64,
    /// Per agent (1-based position), shortest gap between broadcasts.
    pub min_inter_event: Vec<Option<f64>>,
    pub tree: Vec<usize>,
    pub schedule: Option<ScheduleCertificate>,
    pub defaults_applied: Vec<String>,
    pub checks: Vec<CheckOutcome>,
    pub failed_stage: Option<Stage>,
    pub partial: bool,
    pub artifacts: Vec<String>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub struct PipelineOutcome {
    pub summary: Summary,
    pub result: SimResult,
    pub constants: ConstantsDocument,
    pub schedule: Option<SwitchingSchedule>,
}

impl PipelineOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.all_passed() {
            0
        } else {
            Stage::Check.exit_code()
        }
    }
}

/// `t_end` long enough for the certified envelope to drop below `target`:
/// `ρ(κ₁⁺ + κ₂) e^{-βt} ≤ target`.
pub fn consensus_horizon(doc: &ConstantsDocument, target: f64) -> Option<f64> {
    let th = doc.report.certified.as_ref()?;
    if !(th.beta > 0.0) {
        return None;
    }
    let scale = th.rate.rho * (th.kappa1.max(0.0) + th.kappa2);
    (scale > target).then(|| (scale / target).ln() / th.beta)
}

fn checks(cfg: &ScenarioConfig, result: &SimResult, doc: &ConstantsDocument) -> Vec<CheckOutcome> {
    let mut out = vec![CheckOutcome {
        name: "average_invariance",
        passed: result.max_mean_drift < MEAN_DRIFT_TOLERANCE,
        detail: json!({ "max_mean_drift": result.max_mean_drift, "tolerance": MEAN_DRIFT_TOLERANCE }),
    }];
    if let Some(excess) = result.max_trigger_excess {
        out.push(CheckOutcome {
            name: "trigger_enforcement",
            passed: excess <= TRIGGER_EXCESS_TOLERANCE,
            detail: json!({ "max_trigger_excess": excess, "tolerance": TRIGGER_EXCESS_TOLERANCE }),
        });
    }
    if let Some(th) = &doc.report.certified {
        let env = check_envelope(result, th);
        out.push(CheckOutcome {
            name: "envelope",
            passed: env.passed(),
            detail: json!({
                "violations": env.violations.len(),
                "first_violation": env.violations.first(),
                "min_margin": env.min_margin,
                "min_margin_time": env.min_margin_time,
                "slack": env.slack,
            }),
        });
        if let Some(gamma) = th.gamma_min {
            let z = check_zeno(result, gamma, 10.0 * cfg.event_tol());
            out.push(CheckOutcome {
                name: "zeno",
                passed: z.passed(),
                detail: json!({
                    "gamma_min": gamma,
                    "per_agent_min": z.per_agent_min,
                    "flagged_agents": z.flagged.iter().map(|a| a + 1).collect::<Vec<_>>(),
                }),
            });
        }
        if th.trigger.is_some() && th.beta == 0.0 {
            let b = check_ball(result, th.ball_radius, BALL_TAIL_FRACTION);
            out.push(CheckOutcome {
                name: "static_ball",
                passed: b.passed(),
                detail: serde_json::to_value(&b).unwrap_or_default(),
            });
        }
    }
    if let (Some(target), "dynamic") = (cfg.simulation.consensus_target, doc.feedback) {
        let last = *result.x_e_norm.last().expect("non-empty run");
        out.push(CheckOutcome {
            name: "consensus_target",
            passed: last <= target,
            detail: json!({ "final_x_e_norm": last, "target": target }),
        });
    }
    out
}

fn pipeline_inner(cfg: &ScenarioConfig) -> Result<PipelineOutcome, StageError> {
    cfg.validate().at(Stage::Config)?;
    let weights: WeightSignal = cfg.weight_signal().at(Stage::Config)?;
    let feedback = cfg.feedback().at(Stage::Config)?;
    let (topo, base_dec) = decompose_stage(cfg)?;
    let t0 = cfg.simulation.t0;
    let first_horizon = cfg.pe_horizon().max(cfg.simulation.t_end);
    let mut sched = schedule_stage(cfg, &topo, first_horizon)?;

    let (dec, doc) = {
        let masked;
        let w: &dyn EdgeWeights = match &sched {
            Some((s, _)) => {
                masked = ScheduledWeights::new(&weights, s).at(Stage::Schedule)?;
                &masked
            }
            None => &weights,
        };
        constants_with(cfg, &topo, base_dec, w, feedback)?
    };

    let (t_end, t_end_source) = match cfg
        .simulation
        .consensus_target
        .and_then(|target| consensus_horizon(&doc, target))
    {
        Some(t) if t > cfg.simulation.t_end => (t, "consensus_target"),
        _ => (cfg.simulation.t_end, "config"),
    };
    if t_end > first_horizon {
        sched = schedule_stage(cfg, &topo, t_end)?;
    }

    let scenario = Scenario {
        topology: &topo,
        weights: &weights,
        schedule: sched.as_ref().map(|(s, _)| s),
        feedback,
        gain: cfg.simulation.k,
        x0: &cfg.simulation.x0,
        decomposition: Some(&dec),
    };
    let sim_cfg = SimConfig {
        event_tol: cfg.event_tol(),
        ..SimConfig::new(t0, t_end, cfg.step())
    };
    let mut result = simulate(&scenario, &sim_cfg).at(Stage::Simulate)?;
    if let Some(th) = &doc.report.certified {
        result.attach_envelope(th);
    }

    let summary = Summary {
        name: cfg.name.clone(),
        feedback: doc.feedback,
        certified: doc.report.is_certified(),
        uncertified_reason: doc.report.uncertified_reason.clone(),
        t0,
        t_end,
        t_end_source,
        step: cfg.step(),
        events: result.events.len(),
        final_x_e_norm: *result.x_e_norm.last().expect("non-empty run"),
        consensus_value: result.consensus_value,
        min_inter_event: result.min_inter_event.clone(),
        tree: doc.tree.clone(),
        schedule: sched.as_ref().map(|(_, c)| c.clone()),
        defaults_applied: cfg.defaults_applied(),
        checks: checks(cfg, &result, &doc),
        failed_stage: None,
        partial: false,
        artifacts: Vec::new(),
    };
    Ok(PipelineOutcome {
        summary,
        result,
        constants: doc,
        schedule: sched.map(|(s, _)| s),
    })
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_artifacts(outcome: &mut PipelineOutcome, dir: &Path, stride: usize) -> Result<(), StageError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).at(Stage::Output)?;
    let names = [
        "constants.json",
        "trajectory.csv",
        "events.csv",
        "events.json",
        "plot/series.csv",
        "plot/markers.csv",
        "summary.json",
    ];
    outcome.summary.artifacts = names.iter().map(|s| s.to_string()).collect();
    export::save_json(&dir.join("constants.json"), &outcome.constants).at(Stage::Output)?;
    export::save_trajectory(&dir.join("trajectory.csv"), &outcome.result, stride).at(Stage::Output)?;
    export::save_events(&dir.join("events.csv"), &dir.join("events.json"), &outcome.result.events)
        .at(Stage::Output)?;
    export::emit_plot_data(
        &outcome.result,
        outcome.constants.report.certified.as_ref(),
        &dir.join("plot"),
        stride,
    )
    .at(Stage::Output)?;
    export::save_json(&dir.join("summary.json"), &outcome.summary).at(Stage::Output)?;
    Ok(())
}

/// Runs every stage and, with `out_dir`, writes the artifacts. A failing
/// stage still leaves a `summary.json` marked partial.
pub fn run_pipeline(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<PipelineOutcome, StageError> {
    match pipeline_inner(cfg) {
        Ok(mut outcome) => {
            if let Some(dir) = out_dir {
                write_artifacts(&mut outcome, dir, cfg.stride())?;
            }
            Ok(outcome)
        }
        Err(err) => {
            if let Some(dir) = out_dir {
                let partial = json!({
                    "name": cfg.name,
                    "failed_stage": err.stage,
                    "exit_code": err.exit_code(),
                    "error": err.source.to_string(),
                    "partial": true,
                });
                let _ = std::fs::create_dir_all(dir).and_then(|_| {
                    std::fs::write(
                        dir.join("summary.json"),
                        serde_json::to_string_pretty(&partial).unwrap_or_default() + "\n",
                    )
                });
            }
            Err(err)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub exit_code: i32,
    pub certified: Option<bool>,
    pub events: Option<usize>,
    pub final_x_e_norm: Option<f64>,
    pub error: Option<String>,
    pub out_dir: Option<PathBuf>,
}

/// Runs independent pipelines concurrently; rows keep the input order.
pub fn run_sweep(runs: &[(String, ScenarioConfig)], out_root: Option<&Path>) -> Vec<SweepRow> {
    runs.par_iter()
        .map(|(label, cfg)| {
            let dir = out_root.map(|r| r.join(label));
            match run_pipeline(cfg, dir.as_deref()) {
                Ok(o) => SweepRow {
                    label: label.clone(),
                    exit_code: o.exit_code(),
                    certified: Some(o.summary.certified),
                    events: Some(o.summary.events),
                    final_x_e_norm: Some(o.summary.final_x_e_norm),
                    error: None,
                    out_dir: dir,
                },
                Err(e) => SweepRow {
                    label: label.clone(),
                    exit_code: e.exit_code(),
                    certified: None,
                    events: None,
                    final_x_e_norm: None,
                    error: Some(e.to_string()),
                    out_dir: dir,
                },
            }
        })
        .collect()
}
