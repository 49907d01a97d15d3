//! Character-state machines: clustering motion segments into states and
//! inducing guarded transitions between them.

mod cluster;
mod induce;
mod matching;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{Axis, Direction};
use crate::trace::Button;

pub use cluster::{cluster_states, label_segments, segment_features};
pub use induce::{induce_transitions, CharacterTimeline, InduceConfig};
pub use matching::{match_fsm, FsmMatch, MatchError, MAX_EXHAUSTIVE_STATES};

/// What a collision guard or rule refers to on the other side of a contact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactClass {
    /// A background tile class keyed by tile id.
    Tile(u32),
    /// A named tile class, as used by hand-written designs ("solid").
    Class(String),
    /// Another character class.
    Entity(String),
}

impl fmt::Display for ContactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContactClass::Tile(id) => write!(f, "tile:{id}"),
            ContactClass::Class(c) => f.write_str(c),
            ContactClass::Entity(c) => write!(f, "entity:{c}"),
        }
    }
}

/// A single transition condition. Conjunctions are lists of guards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Guard {
    ButtonPressed { button: Button },
    ButtonReleased { button: Button },
    Collision { with: ContactClass, dir: Direction },
    VelocityZero { axis: Axis },
    UnconditionalTimeout,
}

impl Guard {
    /// Preference when several guards explain a transition equally well:
    /// inputs, then collisions, then physics observables.
    pub(crate) fn preference(&self) -> u8 {
        match self {
            Guard::ButtonPressed { .. } | Guard::ButtonReleased { .. } => 0,
            Guard::Collision { .. } => 1,
            Guard::VelocityZero { .. } => 2,
            Guard::UnconditionalTimeout => 3,
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::ButtonPressed { button } => write!(f, "pressed({button})"),
            Guard::ButtonReleased { button } => write!(f, "released({button})"),
            Guard::Collision { with, dir } => write!(f, "collision({with},{dir})"),
            Guard::VelocityZero { axis } => write!(f, "velocity_zero({axis})"),
            Guard::UnconditionalTimeout => f.write_str("timeout"),
        }
    }
}

/// Identifies one motion segment of one track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub track_id: usize,
    pub t0: u64,
    pub t1: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterState {
    pub state_id: usize,
    pub name: String,
    /// Mean horizontal acceleration magnitude of members (px/frame²).
    pub ax: f64,
    /// Mean vertical acceleration of members (px/frame², down positive).
    pub ay: f64,
    /// Fraction of members flagged as velocity-capped, per axis.
    pub saturation: [f64; 2],
    pub animations: BTreeSet<String>,
    pub members: Vec<SegmentRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub guards: Vec<Guard>,
    pub support: u32,
    pub precision: f64,
    #[serde(default)]
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmModel {
    pub class_signatures: BTreeSet<String>,
    pub states: Vec<CharacterState>,
    pub transitions: Vec<Transition>,
}

impl FsmModel {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn check(&self) -> Result<(), String> {
        for t in &self.transitions {
            if t.from >= self.states.len() || t.to >= self.states.len() {
                return Err(format!("transition {}->{} references a missing state", t.from, t.to));
            }
            if t.support < 1 {
                return Err("transition with zero support".into());
            }
            if !(0.0..=1.0).contains(&t.precision) {
                return Err(format!("precision {} out of range", t.precision));
            }
        }
        Ok(())
    }
}
