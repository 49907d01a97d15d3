//! Active experiments run against the simulator from a saved state.

use super::design::{sprite_signature, GroundTruthDesign};
use super::sim::{SimState, Simulator};
use super::SimError;
use crate::trace::{Button, InputState, Trace};
use crate::tracker::{track, TrackerConfig};

/// Frames each probe branch runs for.
pub const PROBE_FRAMES: usize = 16;
/// Net downward displacement (px) that counts as falling.
pub const GRAVITY_THRESHOLD: f64 = 2.0;
/// Smallest cross-branch displacement spread (px) that identifies a
/// controllable entity.
pub const CONTROL_THRESHOLD: f64 = 1.0;

fn branch(design: &GroundTruthDesign, start: &SimState, input: InputState, frames: usize) -> Result<Trace, SimError> {
    let mut sim = Simulator::from_state(design, start.clone())?;
    let header = sim.header(0);
    let (frames, _) = sim.run(&vec![input; frames]);
    Trace::new(header, frames).map_err(|e| SimError::Argument(e.to_string()))
}

/// Runs hold-left, hold-right and no-input branches from `start` and returns
/// the signature of the entity whose horizontal displacement differs most
/// between them.
pub fn probe_player_identity(design: &GroundTruthDesign, start: &SimState) -> Result<String, SimError> {
    let inputs = [
        InputState::NONE,
        InputState::from_buttons([Button::L]),
        InputState::from_buttons([Button::R]),
    ];
    let cfg = TrackerConfig::for_tile_size(design.tile_size);
    let mut per_branch = Vec::new();
    for input in inputs {
        let trace = branch(design, start, input, PROBE_FRAMES)?;
        let first = trace.first_index();
        let tracks = track(&trace, &cfg);
        // (signature, x0, y0, displacement) of every entity present at the first frame
        let entities: Vec<(String, f64, f64, f64)> = tracks
            .iter()
            .filter_map(|t| {
                let s0 = t.samples.get(&first)?;
                let (_, last) = t.samples.last_key_value()?;
                Some((s0.signature.clone(), s0.x, s0.y, last.x - s0.x))
            })
            .collect();
        per_branch.push(entities);
    }
    let radius = cfg.max_step;
    let mut best: Option<(f64, String)> = None;
    for (sig, x, y, disp) in &per_branch[0] {
        let mut lo = *disp;
        let mut hi = *disp;
        for other in &per_branch[1..] {
            let matched = other
                .iter()
                .map(|(_, ox, oy, od)| ((ox - x).hypot(oy - y), *od))
                .filter(|(d, _)| *d <= radius)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, od)) = matched {
                lo = lo.min(od);
                hi = hi.max(od);
            }
        }
        let spread = hi - lo;
        if best.as_ref().is_none_or(|(s, _)| spread > *s) {
            best = Some((spread, sig.clone()));
        }
    }
    match best {
        Some((spread, sig)) if spread >= CONTROL_THRESHOLD => Ok(sig),
        _ => Err(SimError::InconclusiveProbe(
            "no entity responds differently to left, right and no input".into(),
        )),
    }
}

enum Target {
    Player,
    Enemy(usize),
}

/// Teleports the entity with `signature` into empty air, runs input-free
/// frames and reports whether it fell.
pub fn probe_gravity(design: &GroundTruthDesign, start: &SimState, signature: &str) -> Result<bool, SimError> {
    let player_sigs = design.player_signatures();
    let target = if start.player.is_some() && player_sigs.iter().any(|s| s == signature) {
        Target::Player
    } else if let Some(i) = design
        .enemies
        .iter()
        .position(|e| sprite_signature(&e.sprite) == signature)
    {
        Target::Enemy(i)
    } else {
        return Err(SimError::Argument(format!("no entity with signature {signature} in start state")));
    };
    let (room, w, h) = match target {
        Target::Player => {
            let p = start.player.as_ref().expect("checked above");
            (p.body.room, design.player.w, design.player.h)
        }
        Target::Enemy(i) => (start.enemies[i].body.room, design.enemies[i].w, design.enemies[i].h),
    };
    let (x, y) = empty_air(design, start, room, w, h).ok_or_else(|| {
        SimError::InconclusiveProbe(format!("room {room} has no empty-air position for a {w}x{h} box"))
    })?;

    let mut state = start.clone();
    let body = match target {
        Target::Player => &mut state.player.as_mut().expect("checked above").body,
        Target::Enemy(i) => &mut state.enemies[i].body,
    };
    body.x = x;
    body.y = y;
    body.vx = 0.0;
    body.vy = 0.0;
    let mut sim = Simulator::from_state(design, state)?;
    sim.run(&[InputState::NONE; PROBE_FRAMES]);
    let end_y = match target {
        Target::Player => sim.state.player.as_ref().map_or(y, |p| p.body.y),
        Target::Enemy(i) => sim.state.enemies[i].body.y,
    };
    Ok(end_y - y > GRAVITY_THRESHOLD)
}

/// First tile-aligned spot (top-down, left-right) where the box and the two
/// tile rows under it are empty.
fn empty_air(design: &GroundTruthDesign, state: &SimState, room: usize, w: u32, h: u32) -> Option<(f64, f64)> {
    let r = &design.rooms[room];
    let ts = design.tile_size;
    let wc = w.div_ceil(ts) as usize;
    let hc = (h.div_ceil(ts) + 2) as usize;
    let empty = |col: usize, row: usize| {
        r.tile(col as i64, row as i64) == 0 || state.collected.contains(&(room, col as u32, row as u32))
    };
    for row in 1..r.rows().saturating_sub(hc) {
        for col in 1..r.cols().saturating_sub(wc) {
            if (row..row + hc).all(|rr| (col..col + wc).all(|cc| empty(cc, rr))) {
                return Some(((col as u32 * ts) as f64, (row as u32 * ts) as f64));
            }
        }
    }
    None
}
