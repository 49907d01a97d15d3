#![allow(dead_code)]

use agdl_core::toysim::{simulate, GroundTruthDesign, Script};
use agdl_core::trace::{Button, InputState, Trace};

pub use Button::{A, L, R};

pub fn design() -> GroundTruthDesign {
    GroundTruthDesign::default_platformer()
}

/// Idle until landed, then walk out from under the platform to open floor
/// around x = 134 in the start room.
fn to_open_floor() -> Script {
    Script::new().idle(40).hold(&[R], 60).idle(15)
}

/// In-room play that exercises every transition of the default design.
/// Runs reach full speed and jumps stay clear of the overhead platform and
/// the wall.
fn exercise(mut s: Script, rounds: usize) -> Script {
    for _ in 0..rounds {
        s = s
            // idle -> run -> idle, both directions
            .hold(&[R], 24)
            .idle(20)
            .hold(&[L], 24)
            .idle(20)
            // standing jump
            .hold(&[A], 4)
            .idle(40)
            // running jump: run -> jump -> fall -> idle
            .hold(&[R], 16)
            .hold(&[R, A], 4)
            .idle(44)
            .hold(&[L], 16)
            .hold(&[L, A], 4)
            .idle(44);
    }
    s
}

/// From open floor in the start room: start → field → gate, back to the
/// start room, then through the gate portal into the vault and through its
/// portal home again. Never touches a wall.
fn tour(s: Script) -> Script {
    s.hold(&[R], 250) // start → field → gate
        .idle(10)
        .hold(&[L], 245) // gate → field → start
        .idle(10)
        .hold(&[R], 310) // start → field → gate → vault
        .idle(20)
        .hold(&[R], 90) // vault → start
        .idle(15)
}

/// 2000-frame coverage script: every transition several
/// times, then a tour of all four rooms.
pub fn coverage_inputs() -> Vec<InputState> {
    let mut v = tour(exercise(to_open_floor(), 3)).build();
    assert!(v.len() <= 2000);
    v.resize(2000, InputState::NONE);
    v
}

/// Tour of all four rooms without jumping.
pub fn walkthrough_inputs() -> Vec<InputState> {
    tour(to_open_floor()).build()
}

pub fn simulate_default(inputs: &[InputState]) -> Trace {
    simulate(&design(), inputs, 0).expect("simulation succeeds")
}

/// 600 frames with idle, run, standing and running jumps, and falls.
pub fn physics_inputs() -> Vec<InputState> {
    let mut v = exercise(to_open_floor(), 2).build();
    v.truncate(600);
    v
}

/// Runs back and forth in the start room without ever pressing jump.
pub fn never_jump_inputs() -> Vec<InputState> {
    let mut s = to_open_floor();
    for _ in 0..4 {
        s = s.hold(&[R], 24).idle(20).hold(&[L], 24).idle(20);
    }
    s.build()
}

/// Discrete ballistic arc of the simulator: starting at rest height 0 with
/// vertical velocity `v0` (up negative), integrate `v += g_up` while
/// rising and `v += g_down` after the apex, `y += v`, until back at height
/// 0. Returns (peak height, frames airborne including the landing frame).
pub fn discrete_arc(v0: f64, g_up: f64, g_down: f64) -> (f64, u64) {
    let (mut y, mut v, mut peak, mut frames) = (0.0f64, v0, 0.0f64, 0u64);
    let mut rising = true;
    loop {
        frames += 1;
        v += if rising { g_up } else { g_down };
        if rising && v >= 0.0 {
            rising = false;
        }
        y += v;
        peak = peak.min(y);
        if y >= 0.0 {
            return (-peak, frames);
        }
    }
}
