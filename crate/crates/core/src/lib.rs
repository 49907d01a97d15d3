//! Learning game designs from play traces of 2D tile-based games.

pub mod collision;
pub mod fsm;
pub mod geom;
pub mod linking;
pub mod physics;
pub mod pipeline;
pub mod report;
pub mod toysim;
pub mod trace;
pub mod tracker;
pub mod util;
