//! Human-readable artifacts: DOT graphs, jump-metric tables and the level
//! corpus on disk.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::fsm::FsmModel;
use crate::linking::{export_level_corpus, RoomGraph};
use crate::pipeline::DesignModel;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no character class named {0:?} in the model")]
    UnknownClass(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// DOT digraph of one character FSM. Nodes carry the state id and its
/// acceleration centroid, edges the guard conjunction and support.
pub fn fsm_dot(name: &str, fsm: &FsmModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(name));
    out.push_str("  rankdir=LR;\n  node [shape=ellipse];\n");
    for s in &fsm.states {
        let label = format!("S{} {}\nax={:.3} ay={:.3}", s.state_id, s.name, s.ax, s.ay);
        let _ = writeln!(out, "  s{} [label={}];", s.state_id, quote(&label));
    }
    for t in &fsm.transitions {
        let guards: Vec<String> = t.guards.iter().map(|g| g.to_string()).collect();
        let mut label = format!("{} [{}]", guards.join(" & "), t.support);
        if t.low_confidence {
            label.push_str(" ?");
        }
        let from = fsm.states[t.from].state_id;
        let to = fsm.states[t.to].state_id;
        let _ = writeln!(out, "  s{from} -> s{to} [label={}];", quote(&label));
    }
    out.push_str("}\n");
    out
}

/// DOT digraph of the FSM for `class` in `model`.
pub fn model_fsm_dot(model: &DesignModel, class: &str) -> Result<String, ReportError> {
    let fsm = model.characters.get(class).ok_or_else(|| ReportError::UnknownClass(class.to_string()))?;
    Ok(fsm_dot(class, fsm))
}

/// Room nodes are labeled with the first 12 characters of their signature.
pub fn rooms_dot(graph: &RoomGraph) -> String {
    let mut out = String::from("digraph rooms {\n  node [shape=box];\n");
    for (i, n) in graph.nodes.iter().enumerate() {
        let prefix: String = n.key.chars().take(12).collect();
        let _ = writeln!(out, "  r{i} [label={}];", quote(&prefix));
    }
    for e in &graph.edges {
        let label = format!("{} [{}]", e.exit, e.support);
        let _ = writeln!(out, "  r{} -> r{} [label={}];", e.from, e.to, quote(&label));
    }
    out.push_str("}\n");
    out
}

pub const JUMP_COLUMNS: [&str; 6] = ["game", "gravity_up", "gravity_down", "jump_height", "hang_time", "asymmetry"];

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRow {
    pub game: String,
    /// gravity up, gravity down, height (px), hang time (s), asymmetry.
    pub metrics: Option<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpTable {
    pub rows: Vec<JumpRow>,
    /// Set when no model had jump metrics.
    pub warning: Option<String>,
}

/// One row per (game id, model), in input order.
pub fn jump_table(models: &[(String, &DesignModel)]) -> JumpTable {
    let rows: Vec<JumpRow> = models
        .iter()
        .map(|(game, m)| JumpRow {
            game: game.clone(),
            metrics: m
                .jump_metrics
                .as_ref()
                .map(|j| [j.ascent_accel, j.descent_accel, j.height, j.hang_time, j.asymmetry]),
        })
        .collect();
    let warning = if rows.iter().all(|r| r.metrics.is_none()) {
        Some("no model has jump metrics".to_string())
    } else {
        None
    };
    JumpTable { rows, warning }
}

impl JumpTable {
    fn cells(&self) -> Vec<Vec<String>> {
        let mut out = vec![JUMP_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        for r in &self.rows {
            let mut row = vec![r.game.clone()];
            match r.metrics {
                Some(m) => row.extend(m.iter().map(|v| format!("{v:.4}"))),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            out.push(row);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.cells() {
            let fields: Vec<String> = row
                .iter()
                .map(|c| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.clone() })
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned columns; the game column is left aligned, numbers right.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths = [0usize; 6];
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for row in &cells {
            let mut line = String::new();
            for (i, c) in row.iter().enumerate() {
                if i == 0 {
                    let _ = write!(line, "{c:<w$}", w = widths[0]);
                } else {
                    let _ = write!(line, "  {c:>w$}", w = widths[i]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Writes `room_<index>.txt` per room with tile data plus `legend.json`
/// into `dir`, creating it if needed. Returns the number of room files.
pub fn write_level_corpus(model: &DesignModel, dir: &Path) -> Result<usize, ReportError> {
    let corpus = export_level_corpus(&model.room_graph, &model.collision_rules);
    fs::create_dir_all(dir)?;
    for (i, text) in &corpus.rooms {
        fs::write(dir.join(format!("room_{i:03}.txt")), text)?;
    }
    let legend = serde_json::json!({
        "legend": corpus.legend,
        "skipped": corpus.skipped,
    });
    let mut text = serde_json::to_string_pretty(&legend).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(dir.join("legend.json"), text)?;
    Ok(corpus.rooms.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::{CharacterState, Guard, Transition};
    use crate::trace::Button;
    use std::collections::BTreeSet;

    fn two_state() -> FsmModel {
        let state = |id: usize, name: &str| CharacterState {
            state_id: id,
            name: name.into(),
            ax: 0.0,
            ay: 0.5,
            saturation: [0.0, 0.0],
            animations: BTreeSet::new(),
            members: vec![],
        };
        FsmModel {
            class_signatures: BTreeSet::new(),
            states: vec![state(0, "idle"), state(1, "jump")],
            transitions: vec![Transition {
                from: 0,
                to: 1,
                guards: vec![Guard::ButtonPressed { button: Button::A }],
                support: 3,
                precision: 1.0,
                low_confidence: false,
            }],
        }
    }

    #[test]
    fn fsm_dot_has_nodes_and_guard_labels() {
        let dot = fsm_dot("c0", &two_state());
        assert!(dot.starts_with("digraph \"c0\" {"));
        assert_eq!(dot.matches("[label=").count(), 3);
        assert!(dot.contains("s0 -> s1 [label=\"pressed(A) [3]\"]"));
        assert!(dot.contains("ay=0.500"));
    }

    #[test]
    fn empty_room_graph_is_valid_digraph() {
        let dot = rooms_dot(&RoomGraph::default());
        assert_eq!(dot, "digraph rooms {\n  node [shape=box];\n}\n");
    }

    #[test]
    fn quote_escapes() {
        assert_eq!(quote("a\"b\\c\nd"), "\"a\\\"b\\\\c\\nd\"");
    }

    #[test]
    fn csv_and_text_layout() {
        let t = JumpTable {
            rows: vec![
                JumpRow { game: "a".into(), metrics: Some([0.5, 0.5, 22.5, 0.3167, 1.0]) },
                JumpRow { game: "b,c".into(), metrics: None },
            ],
            warning: None,
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "game,gravity_up,gravity_down,jump_height,hang_time,asymmetry");
        assert_eq!(lines[1], "a,0.5000,0.5000,22.5000,0.3167,1.0000");
        assert_eq!(lines[2], "\"b,c\",,,,,");
        let text = t.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().trim_end() == "b,c");
    }
}
