//! Deterministic 2D platformer with a fully known design. It generates
//! traces, serves as the ground truth for evaluation and answers active
//! probes from saved states.

mod design;
mod inputs;
mod probe;
mod sim;

use thiserror::Error;

pub use design::{
    sprite_signature, EnemyDef, GroundTruthDesign, PlayerDef, RoomDef, RoomExits, StateDef, TileClass,
    TransitionDef,
};
pub use inputs::{format_input_script, inputs_from_spec, parse_input_script, random_walk_inputs, Script};
pub use probe::{probe_gravity, probe_player_identity, CONTROL_THRESHOLD, GRAVITY_THRESHOLD, PROBE_FRAMES};
pub use sim::{branch_prefix, simulate, simulate_logged, Body, FrameLog, SimState, Simulator, SCREEN_WIDTH};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("design configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("inconclusive probe: {0}")]
    InconclusiveProbe(String),
}
