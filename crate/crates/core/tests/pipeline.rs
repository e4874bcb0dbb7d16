use etcons::config::{emit_config, parse_config, preset, FeedbackKind, ScenarioConfig, PRESET_NAMES};
use etcons::excitation::EdgeSignal;
use etcons::pipeline::{constants_stage, run_pipeline, run_sweep, Stage};

fn triangle() -> ScenarioConfig {
    parse_config(&preset("triangle-dynamic").unwrap()).unwrap()
}

fn two_node() -> ScenarioConfig {
    parse_config(&preset("two-node").unwrap()).unwrap()
}

fn failing_stage(cfg: &ScenarioConfig) -> Stage {
    match run_pipeline(cfg, None) {
        Err(e) => e.stage,
        Ok(_) => panic!("pipeline unexpectedly succeeded"),
    }
}

#[test]
fn presets_round_trip() {
    for name in PRESET_NAMES {
        let cfg = parse_config(&preset(name).unwrap()).unwrap();
        let again = parse_config(&emit_config(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn disconnected_graph_fails_decomposition() {
    let mut cfg = triangle();
    cfg.topology.nodes = 4;
    cfg.simulation.x0.push(0.0);
    let stage = failing_stage(&cfg);
    assert_eq!(stage, Stage::Decompose);
    assert_eq!(stage.exit_code(), 3);
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let mut cfg = triangle();
    cfg.simulation.x0.pop();
    assert_eq!(failing_stage(&cfg), Stage::Config);
}

#[test]
fn dead_tree_edge_fails_excitation() {
    let mut cfg = triangle();
    cfg.weights.edges[0] = EdgeSignal::Zero;
    let stage = failing_stage(&cfg);
    assert_eq!(stage, Stage::Excitation);
    assert_eq!(stage.exit_code(), 5);
}

#[test]
fn non_spanning_schedule_fails_schedule_stage() {
    let mut cfg = parse_config(&preset("benchmark-dynamic").unwrap()).unwrap();
    let sw = cfg.switching.as_mut().unwrap();
    sw.topologies[0].edges = vec![1, 2];
    sw.topologies[1].edges = vec![2];
    let dir = tempfile::tempdir().unwrap();
    let err = run_pipeline(&cfg, Some(dir.path())).err().unwrap();
    assert_eq!(err.exit_code(), 4);
    // a partial summary is still written
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["partial"], true);
    assert_eq!(summary["exit_code"], 4);
    assert!(summary["error"].as_str().unwrap().contains("[4]"), "agent 4 should be isolated");
}

#[test]
fn artifacts_are_byte_identical() {
    let cfg = two_node();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run_pipeline(&cfg, Some(a.path())).unwrap();
    run_pipeline(&cfg, Some(b.path())).unwrap();
    assert!(!oa.summary.artifacts.is_empty());
    for name in &oa.summary.artifacts {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} empty");
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn artifacts_describe_the_run() {
    let cfg = two_node();
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&cfg, Some(dir.path())).unwrap();
    let events = std::fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), out.result.events.len() + 1);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,x_1,x_2,xhat_1,xhat_2,x_e_norm,envelope");
    let constants: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("constants.json")).unwrap()).unwrap();
    let kappa2 = constants["report"]["certified"]["kappa2"].as_f64().unwrap();
    assert_eq!(kappa2, out.constants.report.certified.as_ref().unwrap().kappa2);
    assert!(out.summary.checks.iter().any(|c| c.name == "envelope"));
    assert!(out.summary.all_passed());
}

#[test]
fn uncertified_run_still_simulates() {
    let mut cfg = triangle();
    cfg.trigger.beta = Some(5.0);
    cfg.simulation.t_end = 5.0;
    let out = run_pipeline(&cfg, None).unwrap();
    assert!(!out.summary.certified);
    assert!(out.summary.uncertified_reason.as_deref().unwrap().contains("beta"));
    assert!(out.summary.checks.iter().all(|c| c.name != "envelope"));
    assert_eq!(out.summary.t_end_source, "config");
}

#[test]
fn consensus_target_extends_horizon() {
    let cfg = triangle();
    let doc = constants_stage(&cfg).unwrap();
    let th = doc.report.certified.as_ref().unwrap();
    let out = run_pipeline(&cfg, None).unwrap();
    let expected = (th.rate.rho * (th.kappa1.max(0.0) + th.kappa2) / 0.01).ln() / th.beta;
    assert_eq!(out.summary.t_end_source, "consensus_target");
    assert!((out.summary.t_end - expected).abs() <= 1e-9 * expected);
}

#[test]
fn sweep_keeps_input_order() {
    let runs: Vec<(String, ScenarioConfig)> = [0.05, 0.1, 0.4]
        .iter()
        .map(|&c| {
            let mut cfg = two_node();
            cfg.trigger.c = Some(c);
            (format!("c{c}"), cfg)
        })
        .collect();
    let rows = run_sweep(&runs, None);
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["c0.05", "c0.1", "c0.4"]);
    assert!(rows.iter().all(|r| r.exit_code == 0));
    // smaller thresholds fire more often
    let events: Vec<usize> = rows.iter().map(|r| r.events.unwrap()).collect();
    assert!(events[0] >= events[1] && events[1] >= events[2], "{events:?}");
}

#[test]
fn continuous_feedback_has_no_events() {
    let mut cfg = two_node();
    cfg.trigger.kind = FeedbackKind::Continuous;
    cfg.trigger.c = None;
    cfg.trigger.beta = None;
    let out = run_pipeline(&cfg, None).unwrap();
    assert_eq!(out.summary.events, 0);
    assert_eq!(out.summary.feedback, "continuous");
    assert!(out.summary.all_passed());
}

#[test]
fn benchmark_trees_give_distinct_kappa2() {
    let base = parse_config(&preset("benchmark-static").unwrap()).unwrap();
    let kappa2 = |tree: Vec<usize>| {
        let mut cfg = base.clone();
        cfg.topology.tree_hint = Some(tree);
        cfg.bounds.tree_selection = etcons::config::TreeSelection::Decomposition;
        constants_stage(&cfg).unwrap().report.certified.unwrap().kappa2
    };
    let (g1, g2) = (kappa2(vec![1, 2, 3]), kappa2(vec![1, 4, 5]));
    assert!((g1 - g2).abs() > 1e-6 * g1.max(g2), "{g1} vs {g2}");

    let ex = constants_stage(&base).unwrap().extremal.unwrap();
    let (lo, hi) = (ex.kappa2_min, ex.kappa2_max);
    assert!(lo <= g1.min(g2) && g1.max(g2) <= hi);
}
