use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::fsm::{ContactClass, Guard};
use crate::geom::{Axis, Direction};
use crate::trace::Button;
use crate::util::short_hash;

/// Behaviour class of a background tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TileClass {
    Empty,
    Solid,
    Hazard,
    Pickup,
    Portal { room: usize, x: f64, y: f64 },
}

impl TileClass {
    pub fn name(&self) -> &'static str {
        match self {
            TileClass::Empty => "empty",
            TileClass::Solid => "solid",
            TileClass::Hazard => "hazard",
            TileClass::Pickup => "pickup",
            TileClass::Portal { .. } => "portal",
        }
    }

    pub fn is_solid(&self) -> bool {
        matches!(self, TileClass::Solid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub name: String,
    /// Sprite name; the emitted signature is a hash of it.
    pub sprite: String,
    /// Horizontal acceleration along the held input axis.
    pub ax: f64,
    /// Vertical acceleration, down positive.
    pub ay: f64,
    /// Horizontal speed cap; 0 pins the character in place horizontally.
    pub vx_cap: f64,
    /// Vertical velocity assigned on entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_vy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDef {
    pub from: String,
    pub guards: Vec<Guard>,
    pub to: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoomExits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomDef {
    pub name: String,
    /// Rows top to bottom, one decimal digit (tile id) per cell.
    pub tiles: Vec<String>,
    #[serde(default)]
    pub exits: RoomExits,
}

impl RoomDef {
    pub fn cols(&self) -> usize {
        self.tiles.first().map_or(0, |r| r.len())
    }

    pub fn rows(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile(&self, col: i64, row: i64) -> u32 {
        if col < 0 || row < 0 {
            return 0;
        }
        self.tiles
            .get(row as usize)
            .and_then(|r| r.as_bytes().get(col as usize))
            .map_or(0, |b| u32::from(b - b'0'))
    }

    pub fn grid(&self) -> Vec<Vec<u32>> {
        self.tiles
            .iter()
            .map(|r| r.bytes().map(|b| u32::from(b - b'0')).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnemyDef {
    pub sprite: String,
    pub w: u32,
    pub h: u32,
    /// Signed horizontal patrol speed (px/frame).
    pub patrol_speed: f64,
    pub gravity: f64,
    pub room: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerDef {
    pub w: u32,
    pub h: u32,
    pub room: usize,
    pub x: f64,
    pub y: f64,
    pub start_state: String,
    /// State entered when a grounded state loses its footing.
    pub airborne_state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDesign {
    pub game_id: String,
    pub fps: u32,
    pub tile_size: u32,
    pub player: PlayerDef,
    pub states: Vec<StateDef>,
    pub transitions: Vec<TransitionDef>,
    pub tile_catalog: BTreeMap<u32, TileClass>,
    pub rooms: Vec<RoomDef>,
    pub enemies: Vec<EnemyDef>,
}

/// Appearance signature the simulator emits for a sprite name.
pub fn sprite_signature(sprite: &str) -> String {
    short_hash(sprite.as_bytes())
}

impl GroundTruthDesign {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let d: GroundTruthDesign =
            serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn tile_class(&self, id: u32) -> &TileClass {
        static EMPTY: TileClass = TileClass::Empty;
        self.tile_catalog.get(&id).unwrap_or(&EMPTY)
    }

    pub fn player_signatures(&self) -> Vec<String> {
        self.states.iter().map(|s| sprite_signature(&s.sprite)).collect()
    }

    pub fn room_width(&self, room: usize) -> f64 {
        (self.rooms[room].cols() as u32 * self.tile_size) as f64
    }

    /// Opaque identity of a room's authored layout.
    pub fn room_signature(&self, room: usize) -> String {
        let r = &self.rooms[room];
        let mut bytes = format!("{}#{}#", self.game_id, room).into_bytes();
        for row in &r.tiles {
            bytes.extend_from_slice(row.as_bytes());
            bytes.push(b'\n');
        }
        short_hash(&bytes)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.fps == 0 || self.tile_size == 0 {
            return bad("fps and tile_size must be positive".into());
        }
        if self.states.is_empty() {
            return bad("design has no character states".into());
        }
        if self.player.w == 0 || self.player.h == 0 {
            return bad("player box must be non-empty".into());
        }
        for name in [&self.player.start_state, &self.player.airborne_state] {
            if self.state_index(name).is_none() {
                return bad(format!("player references undefined state {name:?}"));
            }
        }
        for t in &self.transitions {
            for name in [&t.from, &t.to] {
                if self.state_index(name).is_none() {
                    return bad(format!("transition references undefined state {name:?}"));
                }
            }
            if t.guards.is_empty() {
                return bad(format!("transition {} -> {} has no guard", t.from, t.to));
            }
        }
        if self.rooms.is_empty() {
            return bad("design has no rooms".into());
        }
        for (i, r) in self.rooms.iter().enumerate() {
            let cols = r.cols();
            if cols == 0 || r.tiles.iter().any(|row| row.len() != cols) {
                return bad(format!("room {i} grid is not rectangular"));
            }
            for row in &r.tiles {
                for b in row.bytes() {
                    if !b.is_ascii_digit() {
                        return bad(format!("room {i} has non-digit tile {:?}", b as char));
                    }
                    let id = u32::from(b - b'0');
                    if id != 0 && !self.tile_catalog.contains_key(&id) {
                        return bad(format!("room {i} uses tile {id} missing from catalog"));
                    }
                }
            }
            for target in [r.exits.left, r.exits.right].into_iter().flatten() {
                if target >= self.rooms.len() {
                    return bad(format!("room {i} exits to missing room {target}"));
                }
            }
        }
        for (id, class) in &self.tile_catalog {
            if let TileClass::Portal { room, .. } = class {
                if *room >= self.rooms.len() {
                    return bad(format!("portal tile {id} targets missing room {room}"));
                }
            }
        }
        if self.player.room >= self.rooms.len() {
            return bad("player starts in a missing room".into());
        }
        for e in &self.enemies {
            if e.room >= self.rooms.len() || e.w == 0 || e.h == 0 {
                return bad(format!("enemy {:?} is misconfigured", e.sprite));
            }
        }
        Ok(())
    }

    /// The bundled platformer: four rooms, a four-state hero and one enemy.
    pub fn default_platformer() -> Self {
        let state = |name: &str, ax, ay, vx_cap, entry_vy| StateDef {
            name: name.into(),
            sprite: format!("hero_{name}"),
            ax,
            ay,
            vx_cap,
            entry_vy,
        };
        let tr = |from: &str, guard: Guard, to: &str| TransitionDef {
            from: from.into(),
            guards: vec![guard],
            to: to.into(),
        };
        let pressed = |button| Guard::ButtonPressed { button };
        let released = |button| Guard::ButtonReleased { button };
        let mut tile_catalog = BTreeMap::new();
        tile_catalog.insert(1, TileClass::Solid);
        tile_catalog.insert(2, TileClass::Solid);
        tile_catalog.insert(3, TileClass::Pickup);
        tile_catalog.insert(4, TileClass::Portal { room: 3, x: 40.0, y: 120.0 });
        tile_catalog.insert(5, TileClass::Portal { room: 0, x: 40.0, y: 120.0 });
        tile_catalog.insert(6, TileClass::Hazard);

        GroundTruthDesign {
            game_id: "toysim-platformer".into(),
            fps: 60,
            tile_size: 8,
            player: PlayerDef {
                w: 16,
                h: 24,
                room: 0,
                x: 24.0,
                y: 112.0,
                start_state: "fall".into(),
                airborne_state: "fall".into(),
            },
            states: vec![
                state("idle", 0.0, 0.0, 0.0, None),
                state("run", 0.2, 0.0, 2.0, None),
                state("jump", 0.0, 0.5, 2.0, Some(-5.0)),
                state("fall", 0.0, 0.5, 2.0, None),
            ],
            transitions: vec![
                tr("idle", pressed(Button::A), "jump"),
                tr("run", pressed(Button::A), "jump"),
                tr("idle", pressed(Button::R), "run"),
                tr("idle", pressed(Button::L), "run"),
                tr("run", released(Button::R), "idle"),
                tr("run", released(Button::L), "idle"),
                tr("jump", Guard::VelocityZero { axis: Axis::Y }, "fall"),
                tr(
                    "fall",
                    Guard::Collision {
                        with: ContactClass::Class("solid".into()),
                        dir: Direction::Down,
                    },
                    "idle",
                ),
            ],
            tile_catalog,
            rooms: default_rooms(),
            enemies: vec![EnemyDef {
                sprite: "walker".into(),
                w: 16,
                h: 16,
                patrol_speed: 1.0,
                gravity: 0.5,
                room: 0,
                x: 168.0,
                y: 128.0,
            }],
        }
    }

    /// Copy of this design with different jump/fall gravity.
    pub fn with_gravity(&self, ascent: f64, descent: f64) -> Self {
        let mut d = self.clone();
        for s in &mut d.states {
            match s.name.as_str() {
                "jump" => s.ay = ascent,
                "fall" => s.ay = descent,
                _ => {}
            }
        }
        d.game_id = format!("{}-g{ascent}-{descent}", self.game_id);
        d
    }
}

const COLS: usize = 32;
const ROWS: usize = 20;

fn blank_room() -> Vec<Vec<u8>> {
    let mut g = vec![vec![b'0'; COLS]; ROWS];
    for row in &mut g[ROWS - 2..] {
        row.fill(b'1');
    }
    g
}

fn wall(g: &mut [Vec<u8>], col: usize) {
    for row in g.iter_mut().take(ROWS - 2) {
        row[col] = b'2';
    }
}

fn put(g: &mut [Vec<u8>], cells: &[(usize, usize)], id: u8) {
    for &(col, row) in cells {
        g[row][col] = id;
    }
}

fn finish(name: &str, g: Vec<Vec<u8>>, exits: RoomExits) -> RoomDef {
    RoomDef {
        name: name.into(),
        tiles: g.into_iter().map(|r| String::from_utf8(r).unwrap()).collect(),
        exits,
    }
}

fn default_rooms() -> Vec<RoomDef> {
    let mut r0 = blank_room();
    wall(&mut r0, 0);
    put(&mut r0, &[(10, 12), (11, 12), (12, 12), (13, 12)], b'2');
    put(&mut r0, &[(16, 17), (20, 17), (24, 17), (6, 13)], b'3');

    let mut r1 = blank_room();
    put(&mut r1, &[(14, 12), (15, 12), (16, 12), (17, 12)], b'2');
    put(&mut r1, &[(10, 17), (22, 17)], b'3');

    let mut r2 = blank_room();
    wall(&mut r2, COLS - 1);
    put(&mut r2, &[(26, 16), (26, 17)], b'4');
    put(&mut r2, &[(8, 17)], b'3');

    let mut r3 = blank_room();
    wall(&mut r3, 0);
    wall(&mut r3, COLS - 1);
    put(&mut r3, &[(26, 16), (26, 17)], b'5');
    put(&mut r3, &[(12, 12), (13, 12)], b'2');

    vec![
        finish("start", r0, RoomExits { left: None, right: Some(1) }),
        finish("field", r1, RoomExits { left: Some(0), right: Some(2) }),
        finish("gate", r2, RoomExits { left: Some(1), right: None }),
        finish("vault", r3, RoomExits::default()),
    ]
}
