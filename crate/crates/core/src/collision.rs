//! Contact events between tracked entities and tiles, and the cause→effect
//! rules mined from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fsm::ContactClass;
use crate::geom::{tile_contacts, Aabb, Axis, Direction};
use crate::trace::Trace;
use crate::tracker::EntityTrack;

/// Tile grids over time, rebuilt from the snapshots in a trace.
#[derive(Debug, Clone, Default)]
pub struct TileHistory {
    /// (first frame, grid) in frame order.
    snapshots: Vec<(u64, BTreeMap<(i64, i64), u32>)>,
}

impl TileHistory {
    pub fn from_trace(trace: &Trace) -> Self {
        let snapshots = trace
            .frames
            .iter()
            .filter_map(|f| {
                let cells = f.tile_patch.as_ref()?;
                let grid = cells
                    .iter()
                    .filter(|c| c.id != 0)
                    .map(|c| ((i64::from(c.col), i64::from(c.row)), c.id))
                    .collect();
                Some((f.index, grid))
            })
            .collect();
        Self { snapshots }
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn grid_at(&self, frame: u64) -> Option<&BTreeMap<(i64, i64), u32>> {
        let i = self.snapshots.partition_point(|(f, _)| *f <= frame);
        i.checked_sub(1).map(|i| &self.snapshots[i].1)
    }

    pub fn tile(&self, frame: u64, col: i64, row: i64) -> u32 {
        self.grid_at(frame)
            .and_then(|g| g.get(&(col, row)).copied())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contact {
    Track { track_id: usize },
    /// A tile id, with every cell of that id touched at onset.
    Tile { id: u32, cells: Vec<(i64, i64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub frame: u64,
    pub track_id: usize,
    pub other: Contact,
    /// Side of the subject on which the other participant lies.
    pub dir: Direction,
    /// Penetration depth; 0 for flush tile contact.
    pub depth: f64,
}

fn sample_box(t: &EntityTrack, f: u64) -> Option<Aabb> {
    t.samples.get(&f).map(|s| s.aabb())
}

/// Contact onsets: one event when a (track, tile id, direction) or
/// (track, other track) contact begins. A contact is new when the track was
/// present on the previous frame without it.
pub fn detect_events(trace: &Trace, tracks: &[EntityTrack]) -> Vec<CollisionEvent> {
    let tiles = TileHistory::from_trace(trace);
    let ts = f64::from(trace.header.tile_size);
    let mut out = Vec::new();

    let tile_keys = |t: &EntityTrack, f: u64| -> BTreeMap<(u32, Direction), (Vec<(i64, i64)>, f64)> {
        let mut keys: BTreeMap<(u32, Direction), (Vec<(i64, i64)>, f64)> = BTreeMap::new();
        if let Some(b) = sample_box(t, f) {
            for c in tile_contacts(&b, ts, |col, row| tiles.tile(f, col, row)) {
                let e = keys.entry((c.id, c.dir)).or_insert((Vec::new(), 0.0));
                e.0.push((c.col, c.row));
                e.1 = e.1.max(c.depth);
            }
        }
        keys
    };

    for t in tracks {
        let mut prev: Option<(u64, BTreeMap<(u32, Direction), (Vec<(i64, i64)>, f64)>)> = None;
        for &f in t.samples.keys() {
            let keys = tile_keys(t, f);
            if let Some((pf, pkeys)) = &prev {
                if *pf + 1 == f {
                    for ((id, dir), (cells, depth)) in &keys {
                        if !pkeys.contains_key(&(*id, *dir)) {
                            out.push(CollisionEvent {
                                frame: f,
                                track_id: t.track_id,
                                other: Contact::Tile {
                                    id: *id,
                                    cells: cells.clone(),
                                },
                                dir: *dir,
                                depth: *depth,
                            });
                        }
                    }
                }
            }
            prev = Some((f, keys));
        }
    }

    for a in tracks {
        for b in tracks {
            if a.track_id == b.track_id || b.first_frame() > a.last_frame() || a.first_frame() > b.last_frame() {
                continue;
            }
            for &f in a.samples.keys() {
                let (Some(ba), Some(bb)) = (sample_box(a, f), sample_box(b, f)) else {
                    continue;
                };
                if !ba.intersects(&bb) {
                    continue;
                }
                let Some(pf) = f.checked_sub(1) else { continue };
                let (Some(pa), Some(pb)) = (sample_box(a, pf), sample_box(b, pf)) else {
                    continue;
                };
                if pa.intersects(&pb) {
                    continue;
                }
                if let Some((dir, depth)) = ba.contact(&bb) {
                    out.push(CollisionEvent {
                        frame: f,
                        track_id: a.track_id,
                        other: Contact::Track { track_id: b.track_id },
                        dir,
                        depth,
                    });
                }
            }
        }
    }
    out.sort_by(|x, y| {
        (x.frame, x.track_id, &x.other, x.dir).cmp(&(y.frame, y.track_id, &y.other, y.dir))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Participant {
    Subject,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    StopX,
    StopY,
    Despawn { which: Participant },
    Teleport,
    StateTransition { class: String, from: usize, to: usize },
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::StopX => f.write_str("stop-x"),
            Effect::StopY => f.write_str("stop-y"),
            Effect::Despawn { which } => write!(
                f,
                "despawn({})",
                match which {
                    Participant::Subject => "self",
                    Participant::Other => "other",
                }
            ),
            Effect::Teleport => f.write_str("teleport"),
            Effect::StateTransition { class, from, to } => write!(f, "transition({class},s{from},s{to})"),
        }
    }
}

impl Effect {
    /// Contact axis a stop effect applies to.
    fn stop_axis(&self) -> Option<Axis> {
        match self {
            Effect::StopX => Some(Axis::X),
            Effect::StopY => Some(Axis::Y),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRule {
    /// Character class of the moving participant.
    pub subject: String,
    pub other: ContactClass,
    /// `None` means any direction (on the stop axis, for stop effects).
    pub dir: Option<Direction>,
    pub effect: Effect,
    pub support: u32,
    pub precision: f64,
}

impl CollisionRule {
    fn cause_matches(&self, dir: Direction) -> bool {
        match (self.dir, self.effect.stop_axis()) {
            (Some(d), _) => d == dir,
            (None, Some(axis)) => dir.axis() == axis,
            (None, None) => true,
        }
    }
}

impl fmt::Display for CollisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = self.dir.map_or("any", |d| d.as_str());
        write!(
            f,
            "{} x {}, {} -> {} (support {}, precision {:.3})",
            self.subject, self.other, dir, self.effect, self.support, self.precision
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Frames after contact onset in which an effect may occur.
    pub window: u64,
    pub min_precision: f64,
    pub min_support: u32,
    /// An any-direction rule replaces directional ones when its precision
    /// is within this slack of theirs.
    pub generalization_slack: f64,
    /// Speeds at or below this (px/frame) count as stopped.
    pub stop_eps: f64,
    /// Position jumps above this (px) count as teleports.
    pub jump_threshold: f64,
}

impl RuleConfig {
    pub fn for_tile_size(tile_size: u32) -> Self {
        Self {
            window: 3,
            min_precision: 0.9,
            min_support: 2,
            generalization_slack: 0.02,
            stop_eps: 1e-6,
            jump_threshold: 4.0 * f64::from(tile_size),
        }
    }
}

/// Everything rule mining needs from one trace.
#[derive(Debug, Clone)]
pub struct TraceEvidence<'a> {
    pub trace: &'a Trace,
    pub tracks: &'a [EntityTrack],
    /// Character class of each track, indexed by track id.
    pub classes: &'a [String],
    /// Labelled segments `(t0, t1, state)` of tracks with a state machine.
    pub labels: &'a BTreeMap<usize, Vec<(u64, u64, usize)>>,
    pub events: &'a [CollisionEvent],
    tiles: TileHistory,
}

impl<'a> TraceEvidence<'a> {
    pub fn new(
        trace: &'a Trace,
        tracks: &'a [EntityTrack],
        classes: &'a [String],
        labels: &'a BTreeMap<usize, Vec<(u64, u64, usize)>>,
        events: &'a [CollisionEvent],
    ) -> Self {
        Self {
            trace,
            tracks,
            classes,
            labels,
            events,
            tiles: TileHistory::from_trace(trace),
        }
    }

    fn other_class(&self, c: &Contact) -> ContactClass {
        match c {
            Contact::Track { track_id } => ContactClass::Entity(self.classes[*track_id].clone()),
            Contact::Tile { id, .. } => ContactClass::Tile(*id),
        }
    }

    fn velocity(&self, track: usize, f: u64, axis: Axis) -> Option<f64> {
        let s = &self.tracks[track].samples;
        let (cur, prev) = (s.get(&f)?, s.get(&f.checked_sub(1)?)?);
        Some(match axis {
            Axis::X => cur.x - prev.x,
            Axis::Y => cur.y - prev.y,
        })
    }

    /// Successor of a track that ends at `end`: same class, starting the
    /// next frame. Returns the jump distance.
    fn successor_jump(&self, track: usize, end: u64) -> Option<f64> {
        let t = &self.tracks[track];
        let last = &t.samples[&end];
        self.tracks
            .iter()
            .filter(|o| o.track_id != track && o.first_frame() == end + 1 && self.classes[o.track_id] == self.classes[track])
            .map(|o| {
                let s = &o.samples[&o.first_frame()];
                (s.x - last.x).hypot(s.y - last.y)
            })
            .min_by(f64::total_cmp)
    }

    fn ends_in(&self, track: usize, lo: u64, hi: u64) -> Option<u64> {
        let end = self.tracks[track].last_frame();
        (end >= lo && end < hi && end < self.trace.last_index()).then_some(end)
    }

    /// Whether `effect` applies to event `e`; `None` when the event cannot
    /// show this effect at all (it does not count as an occurrence).
    fn effect_holds(&self, e: &CollisionEvent, effect: &Effect, cfg: &RuleConfig) -> Option<bool> {
        let (t, w) = (e.frame, cfg.window);
        match effect {
            Effect::StopX | Effect::StopY => {
                let axis = effect.stop_axis().expect("stop effect");
                if e.dir.axis() != axis {
                    return None;
                }
                let toward = match e.dir {
                    Direction::Right | Direction::Down => 1.0,
                    Direction::Left | Direction::Up => -1.0,
                };
                let v_in = self.velocity(e.track_id, t, axis)?;
                if v_in * toward <= cfg.stop_eps {
                    return None;
                }
                Some((t + 1..=t + w).any(|f| {
                    self.velocity(e.track_id, f, axis)
                        .is_some_and(|v| v * toward <= cfg.stop_eps)
                }))
            }
            Effect::Despawn { which: Participant::Other } => match &e.other {
                Contact::Tile { id, cells } => Some((t..=t + w).any(|f| {
                    cells.iter().any(|&(c, r)| self.tiles.tile(f, c, r) != *id)
                })),
                Contact::Track { track_id } => Some(
                    self.ends_in(*track_id, t, t + w + 1)
                        .is_some_and(|end| self.successor_jump(*track_id, end).is_none()),
                ),
            },
            Effect::Despawn { which: Participant::Subject } => Some(
                self.ends_in(e.track_id, t, t + w + 1)
                    .is_some_and(|end| self.successor_jump(e.track_id, end).is_none()),
            ),
            Effect::Teleport => Some(
                self.ends_in(e.track_id, t, t + w + 1)
                    .and_then(|end| self.successor_jump(e.track_id, end))
                    .is_some_and(|d| d > cfg.jump_threshold),
            ),
            Effect::StateTransition { class, from, to } => {
                if &self.classes[e.track_id] != class {
                    return None;
                }
                let segs = self.labels.get(&e.track_id)?;
                Some(segs.windows(2).any(|p| {
                    p[0].2 == *from
                        && p[1].2 == *to
                        && p[1].0 >= t
                        && p[1].0 <= t + w
                        && p[1].0 - p[0].1 <= w
                }))
            }
        }
    }

    /// Effects that some event could plausibly show; used to enumerate
    /// candidate rules.
    fn candidate_effects(&self, e: &CollisionEvent) -> Vec<Effect> {
        let mut out = vec![
            Effect::StopX,
            Effect::StopY,
            Effect::Despawn { which: Participant::Subject },
            Effect::Despawn { which: Participant::Other },
            Effect::Teleport,
        ];
        if let Some(segs) = self.labels.get(&e.track_id) {
            let class = self.classes[e.track_id].clone();
            for p in segs.windows(2) {
                if p[0].2 != p[1].2 && p[1].0 >= e.frame && p[1].0 <= e.frame + 3 {
                    out.push(Effect::StateTransition {
                        class: class.clone(),
                        from: p[0].2,
                        to: p[1].2,
                    });
                }
            }
        }
        out
    }
}

/// Hits and occurrences of `rule` over the evidence. Precision is
/// `hits / occurrences`.
pub fn rule_counts(rule: &CollisionRule, evidence: &[TraceEvidence<'_>], cfg: &RuleConfig) -> (u32, u32) {
    let mut hits = 0;
    let mut occ = 0;
    for ev in evidence {
        for e in ev.events {
            if ev.classes[e.track_id] != rule.subject || ev.other_class(&e.other) != rule.other || !rule.cause_matches(e.dir)
            {
                continue;
            }
            if let Some(h) = ev.effect_holds(e, &rule.effect, cfg) {
                occ += 1;
                hits += u32::from(h);
            }
        }
    }
    (hits, occ)
}

type Cause = (String, ContactClass);

/// Mines cause→effect rules. For each (subject class, other class, effect)
/// the any-direction rule is kept instead of directional ones when its
/// precision is within the configured slack of the best directional rule.
pub fn mine_rules(evidence: &[TraceEvidence<'_>], cfg: &RuleConfig) -> Vec<CollisionRule> {
    let mut candidates: BTreeMap<Cause, BTreeSet<Effect>> = BTreeMap::new();
    for ev in evidence {
        for e in ev.events {
            let cause = (ev.classes[e.track_id].clone(), ev.other_class(&e.other));
            candidates.entry(cause).or_default().extend(ev.candidate_effects(e));
        }
    }
    let mut out = Vec::new();
    for ((subject, other), effects) in candidates {
        for effect in effects {
            let rule = |dir: Option<Direction>| {
                let mut r = CollisionRule {
                    subject: subject.clone(),
                    other: other.clone(),
                    dir,
                    effect: effect.clone(),
                    support: 0,
                    precision: 0.0,
                };
                let (hits, occ) = rule_counts(&r, evidence, cfg);
                r.support = hits;
                r.precision = if occ == 0 { 0.0 } else { f64::from(hits) / f64::from(occ) };
                r
            };
            let passes = |r: &CollisionRule| r.precision >= cfg.min_precision && r.support >= cfg.min_support;
            let directional: Vec<CollisionRule> = Direction::ALL
                .iter()
                .filter(|d| effect.stop_axis().is_none_or(|a| d.axis() == a))
                .map(|&d| rule(Some(d)))
                .filter(passes)
                .collect();
            let any = rule(None);
            let best_dir = directional.iter().map(|r| r.precision).fold(f64::NEG_INFINITY, f64::max);
            if passes(&any) && any.precision >= best_dir - cfg.generalization_slack {
                out.push(any);
            } else {
                out.extend(directional);
            }
        }
    }
    out.sort_by(|a, b| {
        (&a.subject, &a.other, a.dir, &a.effect).cmp(&(&b.subject, &b.other, b.dir, &b.effect))
    });
    out
}

/// Tile ids with a mined stop rule.
pub fn solid_tiles(rules: &[CollisionRule]) -> BTreeSet<u32> {
    rules
        .iter()
        .filter(|r| matches!(r.effect, Effect::StopX | Effect::StopY))
        .filter_map(|r| match r.other {
            ContactClass::Tile(id) => Some(id),
            _ => None,
        })
        .collect()
}

/// Tile ids that vanish when touched.
pub fn despawn_tiles(rules: &[CollisionRule]) -> BTreeSet<u32> {
    rules
        .iter()
        .filter(|r| r.effect == Effect::Despawn { which: Participant::Other })
        .filter_map(|r| match r.other {
            ContactClass::Tile(id) => Some(id),
            _ => None,
        })
        .collect()
}

/// Tile ids whose touch moves the subject elsewhere.
pub fn teleport_tiles(rules: &[CollisionRule]) -> BTreeSet<u32> {
    rules
        .iter()
        .filter(|r| r.effect == Effect::Teleport)
        .filter_map(|r| match r.other {
            ContactClass::Tile(id) => Some(id),
            _ => None,
        })
        .collect()
}

/// Number of contact onsets per tile id across the events.
pub fn tile_contact_counts(events: &[CollisionEvent]) -> BTreeMap<u32, u32> {
    let mut out = BTreeMap::new();
    for e in events {
        if let Contact::Tile { id, .. } = e.other {
            *out.entry(id).or_default() += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EntityObservation, Frame, InputState, TileCell, TraceHeader};
    use crate::tracker::{track, TrackerConfig};

    fn frame(index: u64, ents: Vec<EntityObservation>, tiles: Option<Vec<TileCell>>) -> Frame {
        Frame {
            index,
            camera: (0.0, 0.0),
            input: InputState::NONE,
            entities: ents,
            tilemap_sig: "room".into(),
            tile_patch: tiles,
        }
    }

    fn wall() -> Vec<TileCell> {
        (0..4).map(|row| TileCell { col: 10, row, id: 7 }).collect()
    }

    /// An 8x8 box moving right at 2 px/frame from x = 60 into a wall cell
    /// at x = 80, clamped flush.
    fn wall_trace() -> Trace {
        let frames = (0..20u64)
            .map(|f| {
                let x = (60.0 + 2.0 * f as f64).min(72.0);
                frame(
                    f,
                    vec![EntityObservation::new("box", x, 8.0, 8, 8)],
                    (f == 0).then(wall),
                )
            })
            .collect();
        Trace::new(TraceHeader::new("unit", 60, 8), frames).unwrap()
    }

    #[test]
    fn distant_boxes_no_events() {
        let frames = (0..10)
            .map(|f| {
                frame(
                    f,
                    vec![
                        EntityObservation::new("a", 0.0, 0.0, 8, 8),
                        EntityObservation::new("b", 18.0, 0.0, 8, 8),
                    ],
                    None,
                )
            })
            .collect();
        let t = Trace::new(TraceHeader::new("unit", 60, 8), frames).unwrap();
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        assert!(detect_events(&t, &tracks).is_empty());
    }

    #[test]
    fn wall_contact_is_one_event_at_flush_frame() {
        let t = wall_trace();
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        let ev = detect_events(&t, &tracks);
        assert_eq!(ev.len(), 1, "{ev:?}");
        // right edge reaches 80 when 60 + 2f + 8 = 80
        assert_eq!(ev[0].frame, 6);
        assert_eq!(ev[0].dir, Direction::Right);
        assert_eq!(ev[0].depth, 0.0);
    }

    #[test]
    fn entity_overlap_onset_once() {
        let frames = (0..20u64)
            .map(|f| {
                frame(
                    f,
                    vec![
                        EntityObservation::new("a", f as f64, 0.0, 8, 8),
                        EntityObservation::new("b", 12.0, 2.0, 8, 8),
                    ],
                    None,
                )
            })
            .collect();
        let t = Trace::new(TraceHeader::new("unit", 60, 8), frames).unwrap();
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        let ev = detect_events(&t, &tracks);
        // a overlaps b from frame 5 to 19; one onset per perspective
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|e| e.frame == 5));
        assert_eq!(ev.iter().find(|e| e.track_id == 0).unwrap().dir, Direction::Right);
    }

    #[test]
    fn rare_effect_is_not_a_rule() {
        // ten wall hits, only one of which stops
        let mut frames = Vec::new();
        let mut idx = 0;
        for k in 0..10 {
            for step in 0..8 {
                let x = if k == 0 { (60.0 + 2.0 * step as f64).min(72.0) } else { 60.0 + 2.0 * step as f64 };
                let ents = if step < 7 {
                    vec![EntityObservation::new("box", x, 8.0, 8, 8)]
                } else {
                    vec![]
                };
                frames.push(frame(idx, ents, (idx == 0).then(wall)));
                idx += 1;
            }
            for _ in 0..10 {
                frames.push(frame(idx, vec![], None));
                idx += 1;
            }
        }
        let t = Trace::new(TraceHeader::new("unit", 60, 8), frames).unwrap();
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        let events = detect_events(&t, &tracks);
        let classes = vec!["c0".to_string(); tracks.len()];
        let labels = BTreeMap::new();
        let ev = [TraceEvidence::new(&t, &tracks, &classes, &labels, &events)];
        let rules = mine_rules(&ev, &RuleConfig::for_tile_size(8));
        assert!(solid_tiles(&rules).is_empty(), "{rules:?}");
    }
}
