use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::design::{sprite_signature, GroundTruthDesign, TileClass};
use super::SimError;
use crate::fsm::{ContactClass, Guard};
use crate::geom::{tile_contacts, Aabb, Axis, Direction, EDGE_EPS};
use crate::trace::{EntityObservation, Frame, InputState, TileCell, Trace, TraceHeader};

pub const SCREEN_WIDTH: f64 = 256.0;
const MAX_CHAINED_TRANSITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub room: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
enum ContactKey {
    Tile(u32, Direction),
    Entity(String, Direction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSim {
    pub body: Body,
    pub state: usize,
    pub facing_left: bool,
    contacts: BTreeSet<ContactKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnemySim {
    pub body: Body,
    /// +1 or -1.
    pub heading: f64,
}

/// Complete, copyable simulator state (a savestate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Index of the next frame to be produced.
    pub frame: u64,
    pub player: Option<PlayerSim>,
    pub enemies: Vec<EnemySim>,
    pub view_room: usize,
    pub camera: (f64, f64),
    /// Collected pickups as (room, col, row).
    pub collected: BTreeSet<(usize, u32, u32)>,
    pub prev_input: InputState,
    tiles_room: Option<usize>,
    tiles_dirty: bool,
}

impl SimState {
    pub fn initial(design: &GroundTruthDesign, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &design.player;
        let enemies = design
            .enemies
            .iter()
            .map(|e| {
                let phase = f64::from(rng.gen_range(0u32..16));
                EnemySim {
                    body: Body {
                        room: e.room,
                        x: e.x + phase,
                        y: e.y,
                        vx: 0.0,
                        vy: 0.0,
                    },
                    heading: if e.patrol_speed < 0.0 { -1.0 } else { 1.0 },
                }
            })
            .collect();
        SimState {
            frame: 0,
            player: Some(PlayerSim {
                body: Body {
                    room: p.room,
                    x: p.x,
                    y: p.y,
                    vx: 0.0,
                    vy: 0.0,
                },
                state: design.state_index(&p.start_state).unwrap_or(0),
                facing_left: false,
                contacts: BTreeSet::new(),
            }),
            enemies,
            view_room: p.room,
            camera: (0.0, 0.0),
            collected: BTreeSet::new(),
            prev_input: InputState::NONE,
            tiles_room: None,
            tiles_dirty: true,
        }
    }

    /// Removes the player, as if it had died.
    pub fn without_player(mut self) -> Self {
        self.player = None;
        self
    }

    pub fn player_grounded(&self, design: &GroundTruthDesign) -> bool {
        self.player
            .as_ref()
            .is_some_and(|p| design.states[p.state].ay == 0.0)
    }
}

/// Ground-truth record of one simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub index: u64,
    pub room: usize,
    pub player_state: Option<String>,
    pub player: Option<Body>,
    /// (from, to) state names of transitions taken this frame.
    pub transitions: Vec<(String, String)>,
    pub room_changed: bool,
}

pub struct Simulator<'a> {
    design: &'a GroundTruthDesign,
    pub state: SimState,
}

impl<'a> Simulator<'a> {
    pub fn new(design: &'a GroundTruthDesign, seed: u64) -> Result<Self, SimError> {
        design.validate()?;
        Ok(Self {
            design,
            state: SimState::initial(design, seed),
        })
    }

    pub fn from_state(design: &'a GroundTruthDesign, state: SimState) -> Result<Self, SimError> {
        design.validate()?;
        Ok(Self { design, state })
    }

    pub fn header(&self, seed: u64) -> TraceHeader {
        let mut meta = Map::new();
        meta.insert("game".into(), Value::String(self.design.game_id.clone()));
        meta.insert("seed".into(), Value::from(seed));
        TraceHeader {
            fps: self.design.fps,
            source: "toysim".into(),
            tile_size: self.design.tile_size,
            meta,
        }
    }

    fn ts(&self) -> f64 {
        f64::from(self.design.tile_size)
    }

    fn tile_at(&self, room: usize, col: i64, row: i64) -> u32 {
        let id = self.design.rooms[room].tile(col, row);
        if id != 0
            && col >= 0
            && row >= 0
            && self.state.collected.contains(&(room, col as u32, row as u32))
        {
            0
        } else {
            id
        }
    }

    fn is_solid(&self, id: u32) -> bool {
        id != 0 && self.design.tile_class(id).is_solid()
    }

    /// Moves `body` by its velocity on one axis and pushes it out of solid
    /// tiles. Returns true when the move was blocked.
    fn move_axis(&self, body: &mut Body, w: f64, h: f64, axis: Axis) -> bool {
        let delta = match axis {
            Axis::X => body.vx,
            Axis::Y => body.vy,
        };
        match axis {
            Axis::X => body.x += delta,
            Axis::Y => body.y += delta,
        }
        if delta == 0.0 {
            return false;
        }
        let ts = self.ts();
        let b = Aabb::new(body.x, body.y, w, h);
        let mut hit: Option<f64> = None;
        let c0 = (b.x / ts).floor() as i64;
        let c1 = ((b.right() - EDGE_EPS) / ts).floor() as i64;
        let r0 = (b.y / ts).floor() as i64;
        let r1 = ((b.bottom() - EDGE_EPS) / ts).floor() as i64;
        for row in r0..=r1 {
            for col in c0..=c1 {
                if !self.is_solid(self.tile_at(body.room, col, row)) {
                    continue;
                }
                let cell = Aabb::new(col as f64 * ts, row as f64 * ts, ts, ts);
                if !b.intersects(&cell) {
                    continue;
                }
                let edge = match (axis, delta > 0.0) {
                    (Axis::X, true) => cell.x - w,
                    (Axis::X, false) => cell.right(),
                    (Axis::Y, true) => cell.y - h,
                    (Axis::Y, false) => cell.bottom(),
                };
                hit = Some(match hit {
                    None => edge,
                    Some(e) if delta > 0.0 => e.min(edge),
                    Some(e) => e.max(edge),
                });
            }
        }
        match (hit, axis) {
            (Some(e), Axis::X) => {
                body.x = e;
                body.vx = 0.0;
                true
            }
            (Some(e), Axis::Y) => {
                body.y = e;
                body.vy = 0.0;
                true
            }
            (None, _) => false,
        }
    }

    fn player_contacts(&self, p: &PlayerSim) -> BTreeSet<ContactKey> {
        let d = &self.design.player;
        let b = Aabb::new(p.body.x, p.body.y, f64::from(d.w), f64::from(d.h));
        let room = p.body.room;
        let mut out: BTreeSet<ContactKey> = tile_contacts(&b, self.ts(), |c, r| self.tile_at(room, c, r))
            .into_iter()
            .map(|t| ContactKey::Tile(t.id, t.dir))
            .collect();
        for (e, def) in self.state.enemies.iter().zip(&self.design.enemies) {
            if e.body.room != room {
                continue;
            }
            let eb = Aabb::new(e.body.x, e.body.y, f64::from(def.w), f64::from(def.h));
            if b.intersects(&eb) {
                if let Some((dir, _)) = b.contact(&eb) {
                    out.insert(ContactKey::Entity(sprite_signature(&def.sprite), dir));
                }
            }
        }
        out
    }

    fn supported(&self, contacts: &BTreeSet<ContactKey>) -> bool {
        contacts.iter().any(|c| match c {
            ContactKey::Tile(id, Direction::Down) => self.is_solid(*id),
            _ => false,
        })
    }

    fn guard_holds(
        &self,
        g: &Guard,
        pressed: InputState,
        released: InputState,
        onsets: &[&ContactKey],
        v_before: (f64, f64),
        v_after: (f64, f64),
    ) -> bool {
        match g {
            Guard::ButtonPressed { button } => pressed.held(*button),
            Guard::ButtonReleased { button } => released.held(*button),
            Guard::Collision { with, dir } => onsets.iter().any(|c| match (c, with) {
                (ContactKey::Tile(id, d), ContactClass::Tile(want)) => d == dir && id == want,
                (ContactKey::Tile(id, d), ContactClass::Class(name)) => {
                    d == dir && self.design.tile_class(*id).name() == name
                }
                (ContactKey::Entity(sig, d), ContactClass::Entity(want)) => d == dir && sig == want,
                _ => false,
            }),
            Guard::VelocityZero { axis } => {
                let (b, a) = match axis {
                    Axis::X => (v_before.0, v_after.0),
                    Axis::Y => (v_before.1, v_after.1),
                };
                (b < 0.0 && a >= 0.0) || (b > 0.0 && a <= 0.0)
            }
            Guard::UnconditionalTimeout => false,
        }
    }

    fn enter(&self, p: &mut PlayerSim, to: usize) {
        p.state = to;
        if let Some(vy) = self.design.states[to].entry_vy {
            p.body.vy = vy;
        }
    }

    /// Resolves pickups, portals, hazards and side exits caused by the
    /// previous frame's position.
    fn apply_pending(&mut self) -> bool {
        let Some(mut p) = self.state.player.clone() else {
            return false;
        };
        let d = &self.design.player;
        let ts = self.ts();
        let mut room_changed = false;
        let b = Aabb::new(p.body.x, p.body.y, f64::from(d.w), f64::from(d.h));
        let mut teleport = None;
        let mut respawn = false;
        for t in tile_contacts(&b, ts, |c, r| self.tile_at(p.body.room, c, r)) {
            if t.depth <= 0.0 {
                continue;
            }
            match self.design.tile_class(t.id) {
                TileClass::Pickup => {
                    self.state
                        .collected
                        .insert((p.body.room, t.col as u32, t.row as u32));
                    self.state.tiles_dirty = true;
                }
                TileClass::Portal { room, x, y } => teleport = Some((*room, *x, *y)),
                TileClass::Hazard => respawn = true,
                _ => {}
            }
        }
        if respawn {
            teleport = Some((d.room, d.x, d.y));
            p.state = self.design.state_index(&d.start_state).unwrap_or(0);
        }
        if let Some((room, x, y)) = teleport {
            room_changed = room != p.body.room;
            p.body = Body { room, x, y, vx: 0.0, vy: 0.0 };
            p.contacts.clear();
        } else {
            let room = &self.design.rooms[p.body.room];
            let width = self.design.room_width(p.body.room);
            let cx = p.body.x + f64::from(d.w) / 2.0;
            if cx > width {
                if let Some(next) = room.exits.right {
                    p.body.room = next;
                    p.body.x -= width;
                    room_changed = true;
                }
            } else if cx < 0.0 {
                if let Some(next) = room.exits.left {
                    p.body.room = next;
                    p.body.x += self.design.room_width(next);
                    room_changed = true;
                }
            }
            if room_changed {
                p.contacts.clear();
            }
        }
        self.state.player = Some(p);
        room_changed
    }

    fn step_enemies(&mut self) {
        let mut enemies = std::mem::take(&mut self.state.enemies);
        for (e, def) in enemies.iter_mut().zip(&self.design.enemies) {
            let (w, h) = (f64::from(def.w), f64::from(def.h));
            e.body.vx = e.heading * def.patrol_speed.abs();
            e.body.vy += def.gravity;
            if self.move_axis(&mut e.body, w, h, Axis::X) {
                e.heading = -e.heading;
            }
            let width = self.design.room_width(e.body.room);
            if e.body.x < 0.0 {
                e.body.x = 0.0;
                e.heading = 1.0;
            } else if e.body.x + w > width {
                e.body.x = width - w;
                e.heading = -1.0;
            }
            self.move_axis(&mut e.body, w, h, Axis::Y);
        }
        self.state.enemies = enemies;
    }

    /// Advances one frame under `input`, returning the observation and the
    /// ground-truth log.
    pub fn step(&mut self, input: InputState) -> (Frame, FrameLog) {
        let design = self.design;
        let pressed = input.pressed_since(self.state.prev_input);
        let released = input.released_since(self.state.prev_input);
        let room_changed = self.apply_pending();
        self.step_enemies();

        let mut transitions = Vec::new();
        if let Some(mut p) = self.state.player.clone() {
            let d = &design.player;
            let (w, h) = (f64::from(d.w), f64::from(d.h));
            let v_before = (p.body.vx, p.body.vy);

            let is_input_guard =
                |g: &Guard| matches!(g, Guard::ButtonPressed { .. } | Guard::ButtonReleased { .. });
            let mut visited = vec![p.state];
            for _ in 0..MAX_CHAINED_TRANSITIONS {
                let cur = design.states[p.state].name.as_str();
                let next = design.transitions.iter().find(|t| {
                    t.from == cur
                        && t.guards.iter().all(is_input_guard)
                        && t.guards
                            .iter()
                            .all(|g| self.guard_holds(g, pressed, released, &[], v_before, v_before))
                });
                let Some(t) = next else { break };
                let to = design.state_index(&t.to).expect("validated");
                if visited.contains(&to) {
                    break;
                }
                transitions.push((t.from.clone(), t.to.clone()));
                self.enter(&mut p, to);
                visited.push(to);
            }

            let st = &design.states[p.state];
            let axis = f64::from(input.axis());
            p.body.vx = (p.body.vx + st.ax * axis).clamp(-st.vx_cap, st.vx_cap);
            p.body.vy += st.ay;
            if st.ax > 0.0 && axis != 0.0 {
                p.facing_left = axis < 0.0;
            }
            self.move_axis(&mut p.body, w, h, Axis::X);
            self.move_axis(&mut p.body, w, h, Axis::Y);
            let room = &design.rooms[p.body.room];
            let width = design.room_width(p.body.room);
            if room.exits.left.is_none() && p.body.x < 0.0 {
                p.body.x = 0.0;
                p.body.vx = 0.0;
            }
            if room.exits.right.is_none() && p.body.x + w > width {
                p.body.x = width - w;
                p.body.vx = 0.0;
            }

            let contacts = self.player_contacts(&p);
            if transitions.is_empty() {
                let onsets: Vec<&ContactKey> = contacts.difference(&p.contacts).collect();
                let v_after = (p.body.vx, p.body.vy);
                let cur = design.states[p.state].name.as_str();
                let next = design.transitions.iter().find(|t| {
                    t.from == cur
                        && !t.guards.iter().all(is_input_guard)
                        && t.guards
                            .iter()
                            .all(|g| self.guard_holds(g, pressed, released, &onsets, v_before, v_after))
                });
                if let Some(t) = next {
                    let to = design.state_index(&t.to).expect("validated");
                    transitions.push((t.from.clone(), t.to.clone()));
                    self.enter(&mut p, to);
                } else if st.ay == 0.0 && !self.supported(&contacts) {
                    let to = design.state_index(&d.airborne_state).expect("validated");
                    if to != p.state {
                        transitions.push((st.name.clone(), design.states[to].name.clone()));
                        self.enter(&mut p, to);
                    }
                }
            }
            p.contacts = contacts;
            self.state.view_room = p.body.room;
            let room_w = design.room_width(p.body.room);
            let cx = (p.body.x + w / 2.0 - SCREEN_WIDTH / 2.0).clamp(0.0, (room_w - SCREEN_WIDTH).max(0.0));
            self.state.camera = (cx, 0.0);
            self.state.player = Some(p);
        }

        let frame = self.emit(input);
        let log = FrameLog {
            index: frame.index,
            room: self.state.view_room,
            player_state: self
                .state
                .player
                .as_ref()
                .map(|p| design.states[p.state].name.clone()),
            player: self.state.player.as_ref().map(|p| p.body),
            transitions,
            room_changed,
        };
        self.state.prev_input = input;
        self.state.frame += 1;
        (frame, log)
    }

    fn emit(&mut self, input: InputState) -> Frame {
        let design = self.design;
        let room = self.state.view_room;
        let mut entities = Vec::new();
        if let Some(p) = &self.state.player {
            let mut o = EntityObservation::new(
                sprite_signature(&design.states[p.state].sprite),
                p.body.x,
                p.body.y,
                design.player.w,
                design.player.h,
            );
            o.hflip = p.facing_left;
            entities.push(o);
        }
        for (e, def) in self.state.enemies.iter().zip(&design.enemies) {
            if e.body.room != room {
                continue;
            }
            let mut o = EntityObservation::new(sprite_signature(&def.sprite), e.body.x, e.body.y, def.w, def.h);
            o.hflip = e.heading < 0.0;
            entities.push(o);
        }
        let tile_patch = if self.state.tiles_room != Some(room) || self.state.tiles_dirty {
            self.state.tiles_room = Some(room);
            self.state.tiles_dirty = false;
            Some(self.tile_snapshot(room))
        } else {
            None
        };
        Frame {
            index: self.state.frame,
            camera: self.state.camera,
            input,
            entities,
            tilemap_sig: design.room_signature(room),
            tile_patch,
        }
    }

    fn tile_snapshot(&self, room: usize) -> Vec<TileCell> {
        let r = &self.design.rooms[room];
        let mut out = Vec::new();
        for row in 0..r.rows() {
            for col in 0..r.cols() {
                let id = self.tile_at(room, col as i64, row as i64);
                if id != 0 {
                    out.push(TileCell {
                        col: col as u32,
                        row: row as u32,
                        id,
                    });
                }
            }
        }
        out
    }

    /// Runs `inputs` from the current state.
    pub fn run(&mut self, inputs: &[InputState]) -> (Vec<Frame>, Vec<FrameLog>) {
        inputs.iter().map(|i| self.step(*i)).unzip()
    }
}

/// Simulates `inputs` from the design's start state.
pub fn simulate(design: &GroundTruthDesign, inputs: &[InputState], seed: u64) -> Result<Trace, SimError> {
    simulate_logged(design, inputs, seed).map(|(t, _)| t)
}

/// Like [`simulate`], also returning the ground-truth per-frame log.
pub fn simulate_logged(
    design: &GroundTruthDesign,
    inputs: &[InputState],
    seed: u64,
) -> Result<(Trace, Vec<FrameLog>), SimError> {
    if inputs.is_empty() {
        return Err(SimError::Argument("input sequence is empty".into()));
    }
    let mut sim = Simulator::new(design, seed)?;
    let header = sim.header(seed);
    let (frames, log) = sim.run(inputs);
    let trace = Trace::new(header, frames).map_err(|e| SimError::Argument(e.to_string()))?;
    Ok((trace, log))
}

/// Replays `base_inputs[..cut]`, saves state, then continues under `suffix`.
pub fn branch_prefix(
    design: &GroundTruthDesign,
    base_inputs: &[InputState],
    cut: usize,
    suffix: &[InputState],
    seed: u64,
) -> Result<Trace, SimError> {
    if cut > base_inputs.len() {
        return Err(SimError::Argument(format!(
            "cut {cut} exceeds base length {}",
            base_inputs.len()
        )));
    }
    if cut + suffix.len() == 0 {
        return Err(SimError::Argument("branch has no frames".into()));
    }
    let mut sim = Simulator::new(design, seed)?;
    let header = sim.header(seed);
    let (mut frames, _) = sim.run(&base_inputs[..cut]);
    let saved = sim.state.clone();
    let mut branch = Simulator::from_state(design, saved)?;
    frames.extend(branch.run(suffix).0);
    Trace::new(header, frames).map_err(|e| SimError::Argument(e.to_string()))
}
