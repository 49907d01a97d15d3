mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use agdl_core::collision::{despawn_tiles, solid_tiles};
use agdl_core::linking::render_grid;
use agdl_core::pipeline::{evaluate, learn, DesignModel, LearnerConfig};
use agdl_core::report::{jump_table, model_fsm_dot, rooms_dot, write_level_corpus, ReportError};
use agdl_core::toysim::{random_walk_inputs, simulate};
use agdl_core::trace::Trace;
use common::*;

fn coverage() -> &'static (Trace, DesignModel) {
    static CELL: OnceLock<(Trace, DesignModel)> = OnceLock::new();
    CELL.get_or_init(|| {
        let trace = simulate_default(&coverage_inputs());
        let model = learn(std::slice::from_ref(&trace), &LearnerConfig::default()).unwrap();
        (trace, model)
    })
}

#[test]
fn coverage_trace_recovers_the_design() {
    let (_, model) = coverage();
    let fsm = model.player_fsm().unwrap();
    assert_eq!(fsm.states.len(), 4);
    let solid = solid_tiles(&model.collision_rules);
    assert!(model.collision_rules.iter().filter(|r| matches!(r.effect, agdl_core::collision::Effect::StopX | agdl_core::collision::Effect::StopY)).count() >= 2);
    assert!(solid.iter().all(|&id| design().tile_class(id).is_solid()));
    assert_eq!(model.room_graph.nodes.len(), 4);

    let report = evaluate(model, &design(), 2);
    assert!(report.player_identified);
    assert_eq!(report.state_count_delta, 0);
    assert_eq!(report.transition_f1, Some(1.0));
    assert_eq!(report.transition_precision, Some(1.0));
    assert_eq!(report.transition_recall, Some(1.0));
    assert!(report.max_param_error.unwrap() <= 0.01);
    assert_eq!((report.solidity_precision, report.solidity_recall), (1.0, 1.0));
    assert!(report.rooms_isomorphic);
}

#[test]
fn model_json_round_trips() {
    let (_, model) = coverage();
    let text = model.to_json();
    let back = DesignModel::from_json(&text).unwrap();
    assert_eq!(&back, model);
    assert_eq!(back.to_json(), text);
}

#[test]
fn never_jumping_degrades_gracefully() {
    let trace = simulate_default(&never_jump_inputs());
    let model = learn(&[trace], &LearnerConfig::default()).unwrap();
    assert!(model.jump_metrics.is_none());
    let report = evaluate(&model, &design(), 2);
    assert!(report.player_identified);
    // idle and run, plus the fall from the start position; no jump state
    assert_eq!(report.state_count_delta, -1);
    assert!(report.state_errors.iter().all(|e| e.truth != "jump"));
    assert!(report.max_param_error.unwrap() <= 0.01);
    // the four idle/run transitions match; the one landing is below the
    // support floor and stays an unmatched low-confidence timeout
    let timeouts = model.player_fsm().unwrap().transitions.iter().filter(|t| t.low_confidence).count();
    assert_eq!(timeouts, 1);
    assert!((report.transition_precision.unwrap() - 0.8).abs() < 1e-12);
    assert!((report.transition_recall.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn adding_a_trace_keeps_what_was_learned() {
    let (trace, model) = coverage();
    let extra = simulate(&design(), &random_walk_inputs(4, 600), 4).unwrap();
    let both = learn(&[trace.clone(), extra], &LearnerConfig::default()).unwrap();
    let rooms = |m: &DesignModel| m.room_graph.nodes.iter().map(|n| n.key.clone()).collect::<BTreeSet<_>>();
    assert!(rooms(model).is_subset(&rooms(&both)));
    assert!(solid_tiles(&model.collision_rules).is_subset(&solid_tiles(&both.collision_rules)));
    assert!(despawn_tiles(&model.collision_rules).is_subset(&despawn_tiles(&both.collision_rules)));
    assert!(both.player_fsm().unwrap().states.len() >= model.player_fsm().unwrap().states.len());
}

#[test]
fn fsm_dot_export() {
    let (_, model) = coverage();
    let dot = model_fsm_dot(model, &model.player_class).unwrap();
    assert_eq!(dot, model_fsm_dot(model, &model.player_class).unwrap());
    let nodes = dot.lines().filter(|l| l.trim_start().starts_with('s') && !l.contains("->")).count();
    assert_eq!(nodes, 4);
    assert!(dot.contains("pressed(A)"));
    assert!(matches!(model_fsm_dot(model, "nope"), Err(ReportError::UnknownClass(_))));
}

#[test]
fn rooms_dot_export() {
    let (_, model) = coverage();
    let dot = rooms_dot(&model.room_graph);
    assert_eq!(dot.matches("->").count(), model.room_graph.edges.len());
    for n in &model.room_graph.nodes {
        assert!(dot.contains(&n.key[..12]));
    }
}

#[test]
fn level_corpus_on_disk_matches_design() {
    let (_, model) = coverage();
    let dir = tempfile::tempdir().unwrap();
    let n = write_level_corpus(model, dir.path()).unwrap();
    assert_eq!(n, 4);
    let d = design();
    for room in 0..d.rooms.len() {
        let idx = model.room_graph.node_index(&d.room_signature(room)).unwrap();
        let text = std::fs::read_to_string(dir.path().join(format!("room_{idx:03}.txt"))).unwrap();
        assert_eq!(text, render_grid(&d.rooms[room].grid(), &model.collision_rules));
    }
    let legend: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("legend.json")).unwrap()).unwrap();
    assert_eq!(legend["legend"]["#"]["1"], "solid");
}

#[test]
fn jump_table_tracks_gravity() {
    let gravities = [0.4, 0.5, 0.6];
    let models: Vec<DesignModel> = gravities
        .iter()
        .map(|&g| {
            let d = design().with_gravity(g, g);
            let trace = simulate(&d, &physics_inputs(), 0).unwrap();
            learn(&[trace], &LearnerConfig::default()).unwrap()
        })
        .collect();
    let never = learn(&[simulate_default(&never_jump_inputs())], &LearnerConfig::default()).unwrap();
    let mut rows: Vec<(String, &DesignModel)> =
        gravities.iter().zip(&models).map(|(g, m)| (format!("g{g}"), m)).collect();
    rows.push(("flat".into(), &never));
    let table = jump_table(&rows);
    assert!(table.warning.is_none());
    for (row, g) in table.rows.iter().zip(gravities) {
        let m = row.metrics.unwrap();
        assert!((m[0] - g).abs() <= 0.01 && (m[1] - g).abs() <= 0.01, "{row:?}");
    }
    assert!(table.rows[3].metrics.is_none());
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().last().unwrap(), "flat,,,,,");

    let empty = jump_table(&[("flat".into(), &never)]);
    assert!(empty.warning.is_some());
    assert_eq!(empty.to_csv().lines().count(), 2);
}
