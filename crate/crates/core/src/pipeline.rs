//! End-to-end learner: tracking, motion segmentation, state machines,
//! collision rules and the room graph, combined into one design model; and
//! evaluation of a model against a known design.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::collision::{
    detect_events, mine_rules, solid_tiles, tile_contact_counts, CollisionEvent, CollisionRule, Contact, RuleConfig,
    TraceEvidence,
};
use crate::fsm::{
    cluster_states, induce_transitions, label_segments, match_fsm, CharacterState, CharacterTimeline, ContactClass,
    FsmModel, Guard, InduceConfig, Transition,
};
use crate::geom::Direction;
use crate::linking::{build_room_graph, graphs_isomorphic, Exit, PlayerPath, RoomGraph};
use crate::physics::{jump_metrics, segment_track, JumpMetrics, MotionSegment, SegmentConfig};
use crate::toysim::{sprite_signature, GroundTruthDesign, TileClass};
use crate::trace::Trace;
use crate::tracker::{identify_player, track, EntityTrack, TrackerConfig};
use crate::util::{sha256_hex, short_hash};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("{stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
}

fn stage(stage: &'static str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        msg: e.to_string(),
    }
}

/// Every learner threshold. Missing fields in a config file take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Tracker gate radius, in tiles per frame.
    pub gate_tiles: f64,
    pub max_gap: u64,
    pub persistence: u32,
    pub lag: u64,
    pub segment: SegmentConfig,
    /// State clustering tolerance in normalised parameter space.
    pub eps: f64,
    /// Cause/effect window shared by guard induction and rule mining.
    pub window: u64,
    pub min_precision: f64,
    pub min_support: u32,
    pub generalization_slack: f64,
    pub stop_eps: f64,
    /// Room-boundary position jump, in tiles.
    pub jump_tiles: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gate_tiles: 2.0,
            max_gap: 8,
            persistence: 4,
            lag: 4,
            segment: SegmentConfig::default(),
            eps: 0.1,
            window: 3,
            min_precision: 0.9,
            min_support: 2,
            generalization_slack: 0.02,
            stop_eps: 1e-6,
            jump_tiles: 4.0,
        }
    }
}

impl LearnerConfig {
    pub fn tracker(&self, tile_size: u32) -> TrackerConfig {
        TrackerConfig {
            tile_size,
            max_step: self.gate_tiles * f64::from(tile_size),
            max_gap: self.max_gap,
            persistence: self.persistence,
            lag: self.lag,
        }
    }

    pub fn induce(&self) -> InduceConfig {
        InduceConfig {
            window: self.window,
            min_precision: self.min_precision,
            min_support: self.min_support,
        }
    }

    pub fn rules(&self, tile_size: u32) -> RuleConfig {
        RuleConfig {
            window: self.window,
            min_precision: self.min_precision,
            min_support: self.min_support,
            generalization_slack: self.generalization_slack,
            stop_eps: self.stop_eps,
            jump_threshold: self.jump_tiles * f64::from(tile_size),
        }
    }

    /// SHA-256 of the canonical (compact, declaration-ordered) JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Short content hash of each input trace, in input order.
    pub trace_ids: Vec<String>,
    pub config_digest: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignModel {
    pub version: u32,
    pub provenance: Provenance,
    pub player_class: String,
    /// Character class → learned state machine.
    pub characters: BTreeMap<String, FsmModel>,
    pub collision_rules: Vec<CollisionRule>,
    pub room_graph: RoomGraph,
    pub jump_metrics: Option<JumpMetrics>,
    /// Tile id → contact onsets of the player class.
    pub tile_contacts: BTreeMap<u32, u32>,
    /// Reserved for outputs outside the current schema.
    #[serde(default)]
    pub extensions: BTreeMap<String, Value>,
}

impl DesignModel {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, PipelineError> {
        let m: DesignModel = serde_json::from_str(s).map_err(|e| PipelineError::Argument(format!("model: {e}")))?;
        if m.version != MODEL_VERSION {
            return Err(PipelineError::Argument(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn player_fsm(&self) -> Option<&FsmModel> {
        self.characters.get(&self.player_class)
    }
}

/// Groups tracks of all traces into character classes: tracks that share
/// any appearance signature belong to one class. Classes are named `c0`,
/// `c1`, … in order of first appearance. Returns, per trace, the class of
/// each track.
pub fn assign_classes(tracks: &[Vec<EntityTrack>]) -> Vec<Vec<String>> {
    let mut sig_class: BTreeMap<String, usize> = BTreeMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    let mut raw: Vec<Vec<usize>> = Vec::new();
    for ts in tracks {
        let mut per = Vec::new();
        for t in ts {
            let ids: Vec<usize> = t
                .signatures
                .iter()
                .map(|s| {
                    *sig_class.entry(s.clone()).or_insert_with(|| {
                        parent.push(parent.len());
                        parent.len() - 1
                    })
                })
                .collect();
            let root = find(&mut parent, ids[0]);
            for &i in &ids[1..] {
                let r = find(&mut parent, i);
                if r != root {
                    let (lo, hi) = (root.min(r), root.max(r));
                    parent[hi] = lo;
                }
            }
            per.push(ids[0]);
        }
        raw.push(per);
    }
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut ordered: Vec<(u64, usize, usize, usize)> = Vec::new();
    for (k, ts) in tracks.iter().enumerate() {
        for (i, t) in ts.iter().enumerate() {
            ordered.push((k as u64, t.first_frame() as usize, t.track_id, raw[k][i]));
        }
    }
    ordered.sort();
    for (_, _, _, id) in ordered {
        let root = find(&mut parent, id);
        let n = names.len();
        names.entry(root).or_insert_with(|| format!("c{n}"));
    }
    raw.into_iter()
        .map(|per| per.into_iter().map(|i| names[&find(&mut parent, i)].clone()).collect())
        .collect()
}

struct TraceWork {
    tracks: Vec<EntityTrack>,
    segments: Vec<Vec<MotionSegment>>,
    events: Vec<CollisionEvent>,
}

/// Learns a design model from traces of one game. Output is a pure
/// function of the traces (in order) and the configuration.
pub fn learn(traces: &[Trace], cfg: &LearnerConfig) -> Result<DesignModel, PipelineError> {
    if traces.is_empty() {
        return Err(PipelineError::Argument("no traces given".into()));
    }
    let games: BTreeSet<String> = traces.iter().map(|t| t.header.game_id()).collect();
    if games.len() > 1 {
        return Err(stage(
            "linking",
            format!("incompatible traces from games {}", games.into_iter().collect::<Vec<_>>().join(", ")),
        ));
    }
    let tile_size = traces[0].header.tile_size;

    let work: Vec<TraceWork> = traces
        .par_iter()
        .map(|t| {
            let tracks = track(t, &cfg.tracker(t.header.tile_size));
            let segments = tracks.par_iter().map(|tr| segment_track(tr, &cfg.segment)).collect();
            let events = detect_events(t, &tracks);
            TraceWork {
                tracks,
                segments,
                events,
            }
        })
        .collect();

    let all_tracks: Vec<Vec<EntityTrack>> = work.iter().map(|w| w.tracks.clone()).collect();
    let classes = assign_classes(&all_tracks);

    // player class: majority vote of per-trace identification
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    let mut last_err = None;
    for (k, t) in traces.iter().enumerate() {
        match identify_player(&work[k].tracks, t, cfg.lag) {
            Ok(id) => *votes.entry(classes[k][id].clone()).or_default() += 1,
            Err(e) => last_err = Some(e),
        }
    }
    let player_class = votes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| c.clone())
        .ok_or_else(|| stage("tracker", last_err.map_or("no tracks".to_string(), |e| e.to_string())))?;

    // global segment lists per class, with track ids made unique across traces
    let offsets: Vec<usize> = work
        .iter()
        .scan(0, |acc, w| {
            let o = *acc;
            *acc += w.tracks.len();
            Some(o)
        })
        .collect();
    let mut class_segments: BTreeMap<String, Vec<MotionSegment>> = BTreeMap::new();
    for (k, w) in work.iter().enumerate() {
        for (i, segs) in w.segments.iter().enumerate() {
            let entry = class_segments.entry(classes[k][i].clone()).or_default();
            entry.extend(segs.iter().cloned().map(|mut s| {
                s.track_id += offsets[k];
                s
            }));
        }
    }

    let class_states: BTreeMap<String, Vec<CharacterState>> = class_segments
        .par_iter()
        .map(|(c, segs)| (c.clone(), cluster_states(segs, cfg.eps)))
        .collect();

    // per trace: track id → labelled segments
    let mut labels: Vec<BTreeMap<usize, Vec<(u64, u64, usize)>>> = vec![BTreeMap::new(); traces.len()];
    for (c, segs) in &class_segments {
        let states = &class_states[c];
        for (s, l) in segs.iter().zip(label_segments(states, segs)) {
            let Some(state) = l else { continue };
            let k = offsets.partition_point(|&o| o <= s.track_id) - 1;
            labels[k]
                .entry(s.track_id - offsets[k])
                .or_default()
                .push((s.t0, s.t1, state));
        }
    }

    let contact_class = |k: usize, c: &Contact| match c {
        Contact::Tile { id, .. } => ContactClass::Tile(*id),
        Contact::Track { track_id } => ContactClass::Entity(classes[k][*track_id].clone()),
    };

    let characters: BTreeMap<String, FsmModel> = class_states
        .par_iter()
        .map(|(c, states)| {
            let mut timelines = Vec::new();
            for (k, t) in traces.iter().enumerate() {
                for tr in &work[k].tracks {
                    if &classes[k][tr.track_id] != c {
                        continue;
                    }
                    let contacts = work[k]
                        .events
                        .iter()
                        .filter(|e| e.track_id == tr.track_id)
                        .map(|e| (e.frame, contact_class(k, &e.other), e.dir))
                        .collect();
                    timelines.push(CharacterTimeline {
                        trace: t,
                        track: tr,
                        segments: labels[k].get(&tr.track_id).cloned().unwrap_or_default(),
                        contacts,
                    });
                }
            }
            (c.clone(), induce_transitions(states, &timelines, &cfg.induce()))
        })
        .collect();

    let evidence: Vec<TraceEvidence<'_>> = traces
        .iter()
        .enumerate()
        .map(|(k, t)| TraceEvidence::new(t, &work[k].tracks, &classes[k], &labels[k], &work[k].events))
        .collect();
    let collision_rules = mine_rules(&evidence, &cfg.rules(tile_size));

    let players: Vec<PlayerPath> = (0..traces.len())
        .map(|k| {
            let mut path = PlayerPath::new();
            for tr in &work[k].tracks {
                if classes[k][tr.track_id] == player_class {
                    for (&f, s) in &tr.samples {
                        path.entry(f).or_insert_with(|| s.aabb());
                    }
                }
            }
            path
        })
        .collect();
    let trace_refs: Vec<&Trace> = traces.iter().collect();
    let room_graph =
        build_room_graph(&trace_refs, &players, cfg.jump_tiles * f64::from(tile_size)).map_err(|e| stage("linking", e))?;

    let jump = class_segments
        .get(&player_class)
        .and_then(|segs| jump_metrics(segs, traces[0].header.fps).ok());

    let mut tile_contacts = BTreeMap::new();
    for (k, w) in work.iter().enumerate() {
        let player_events: Vec<CollisionEvent> = w
            .events
            .iter()
            .filter(|e| classes[k][e.track_id] == player_class)
            .cloned()
            .collect();
        for (id, n) in tile_contact_counts(&player_events) {
            *tile_contacts.entry(id).or_insert(0) += n;
        }
    }

    Ok(DesignModel {
        version: MODEL_VERSION,
        provenance: Provenance {
            trace_ids: traces.iter().map(|t| short_hash(t.to_jsonl().as_bytes())).collect(),
            config_digest: cfg.digest(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        player_class,
        characters,
        collision_rules,
        room_graph,
        jump_metrics: jump,
        tile_contacts,
        extensions: BTreeMap::new(),
    })
}

/// The player state machine of a design, in the same form the learner
/// produces.
pub fn truth_fsm(design: &GroundTruthDesign) -> FsmModel {
    let states = design
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| CharacterState {
            state_id: i,
            name: s.name.clone(),
            ax: s.ax,
            ay: s.ay,
            saturation: [f64::from(u8::from(s.ax > 0.0 && s.vx_cap > 0.0)), 0.0],
            animations: BTreeSet::from([sprite_signature(&s.sprite)]),
            members: Vec::new(),
        })
        .collect();
    let transitions = design
        .transitions
        .iter()
        .map(|t| Transition {
            from: design.state_index(&t.from).expect("validated design"),
            to: design.state_index(&t.to).expect("validated design"),
            guards: t.guards.clone(),
            support: 1,
            precision: 1.0,
            low_confidence: false,
        })
        .collect();
    FsmModel {
        class_signatures: design.player_signatures().into_iter().collect(),
        states,
        transitions,
    }
}

/// Room adjacency of a design: side exits plus portals placed in rooms.
pub fn truth_room_edges(design: &GroundTruthDesign) -> BTreeSet<(usize, usize, Exit)> {
    let mut out = BTreeSet::new();
    for (i, r) in design.rooms.iter().enumerate() {
        if let Some(j) = r.exits.left {
            out.insert((i, j, Exit::Side { dir: Direction::Left }));
        }
        if let Some(j) = r.exits.right {
            out.insert((i, j, Exit::Side { dir: Direction::Right }));
        }
        for row in r.grid() {
            for id in row {
                if let TileClass::Portal { room, .. } = design.tile_class(id) {
                    out.insert((i, *room, Exit::Portal));
                }
            }
        }
    }
    out
}

/// Rewrites learned tile-id guards into the design's tile class names so
/// they compare with hand-written guards.
pub fn relabel_guards(m: &FsmModel, design: &GroundTruthDesign) -> FsmModel {
    let mut out = m.clone();
    for t in &mut out.transitions {
        for g in &mut t.guards {
            if let Guard::Collision {
                with: ContactClass::Tile(id),
                dir,
            } = g
            {
                *g = Guard::Collision {
                    with: ContactClass::Class(design.tile_class(*id).name().into()),
                    dir: *dir,
                };
            }
        }
        t.guards.sort();
        t.guards.dedup();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    pub learned: String,
    pub truth: String,
    pub ax_error: f64,
    pub ay_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub player_identified: bool,
    pub learned_states: usize,
    pub truth_states: usize,
    pub state_count_delta: i64,
    pub state_errors: Vec<StateError>,
    pub max_param_error: Option<f64>,
    pub transition_f1: Option<f64>,
    pub transition_precision: Option<f64>,
    pub transition_recall: Option<f64>,
    /// Tile ids the player touched at least `min_support` times.
    pub touched_tiles: Vec<u32>,
    pub solidity_precision: f64,
    pub solidity_recall: f64,
    pub rooms_isomorphic: bool,
}

/// Compares a learned model with the design that generated its traces.
pub fn evaluate(model: &DesignModel, design: &GroundTruthDesign, min_support: u32) -> EvalReport {
    let truth = truth_fsm(design);
    let player_sigs: BTreeSet<String> = design.player_signatures().into_iter().collect();
    let learned = model.player_fsm().map(|m| relabel_guards(m, design));
    let player_identified = learned
        .as_ref()
        .is_some_and(|m| !m.class_signatures.is_empty() && m.class_signatures.is_subset(&player_sigs));

    let (learned_states, mut state_errors, mut f1, mut precision, mut recall) = (
        learned.as_ref().map_or(0, |m| m.states.len()),
        Vec::new(),
        None,
        None,
        None,
    );
    if let Some(m) = &learned {
        if let Ok(r) = match_fsm(m, &truth) {
            f1 = Some(r.f1);
            precision = Some(r.precision);
            recall = Some(r.recall);
            for (li, ti) in r.mapping.iter().enumerate() {
                if let Some(ti) = ti {
                    let (ls, ts) = (&m.states[li], &truth.states[*ti]);
                    state_errors.push(StateError {
                        learned: ls.name.clone(),
                        truth: ts.name.clone(),
                        ax_error: (ls.ax - ts.ax).abs(),
                        ay_error: (ls.ay - ts.ay).abs(),
                    });
                }
            }
        }
    }
    let max_param_error = state_errors
        .iter()
        .map(|e| e.ax_error.max(e.ay_error))
        .reduce(f64::max);

    let touched: BTreeSet<u32> = model
        .tile_contacts
        .iter()
        .filter(|(_, &n)| n >= min_support)
        .map(|(&id, _)| id)
        .collect();
    let learned_solid: BTreeSet<u32> = solid_tiles(&model.collision_rules).intersection(&touched).copied().collect();
    let truth_solid: BTreeSet<u32> = touched.iter().copied().filter(|&id| design.tile_class(id).is_solid()).collect();
    let hit = learned_solid.intersection(&truth_solid).count() as f64;
    let solidity_precision = if learned_solid.is_empty() {
        f64::from(u8::from(truth_solid.is_empty()))
    } else {
        hit / learned_solid.len() as f64
    };
    let solidity_recall = if truth_solid.is_empty() {
        1.0
    } else {
        hit / truth_solid.len() as f64
    };

    let truth_edges = truth_room_edges(design);
    let rooms_isomorphic = model.room_graph.nodes.len() <= 8
        && graphs_isomorphic(
            model.room_graph.nodes.len(),
            &model.room_graph.edge_set(),
            design.rooms.len(),
            &truth_edges,
        );

    EvalReport {
        player_identified,
        learned_states,
        truth_states: truth.states.len(),
        state_count_delta: learned_states as i64 - truth.states.len() as i64,
        state_errors,
        max_param_error,
        transition_f1: f1,
        transition_precision: precision,
        transition_recall: recall,
        touched_tiles: touched.into_iter().collect(),
        solidity_precision,
        solidity_recall,
        rooms_isomorphic,
    }
}
