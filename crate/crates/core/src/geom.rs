//! Axis-aligned boxes and tile-contact enumeration.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance for treating two box edges as flush.
pub const EDGE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn axis(self) -> Axis {
        match self {
            Direction::Up | Direction::Down => Axis::Y,
            Direction::Left | Direction::Right => Axis::X,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Aabb {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Overlap extents along x and y (negative when separated).
    pub fn overlap(&self, o: &Aabb) -> (f64, f64) {
        (
            self.right().min(o.right()) - self.x.max(o.x),
            self.bottom().min(o.bottom()) - self.y.max(o.y),
        )
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        let (ox, oy) = self.overlap(o);
        ox > EDGE_EPS && oy > EDGE_EPS
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        let x = self.x.min(o.x);
        let y = self.y.min(o.y);
        Aabb::new(x, y, self.right().max(o.right()) - x, self.bottom().max(o.bottom()) - y)
    }

    /// Contact of `self` with `other`, seen from `self`: the side of `self`
    /// on which `other` lies and the penetration depth (0 when flush).
    pub fn contact(&self, other: &Aabb) -> Option<(Direction, f64)> {
        let (ox, oy) = self.overlap(other);
        let (cx, cy) = self.center();
        let (ocx, ocy) = other.center();
        let horizontal = |d: f64| {
            if ocx >= cx {
                (Direction::Right, d)
            } else {
                (Direction::Left, d)
            }
        };
        let vertical = |d: f64| {
            if ocy >= cy {
                (Direction::Down, d)
            } else {
                (Direction::Up, d)
            }
        };
        if ox > EDGE_EPS && oy > EDGE_EPS {
            Some(if ox < oy { horizontal(ox) } else { vertical(oy) })
        } else if ox > EDGE_EPS && oy.abs() <= EDGE_EPS {
            Some(vertical(0.0))
        } else if oy > EDGE_EPS && ox.abs() <= EDGE_EPS {
            Some(horizontal(0.0))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileContact {
    pub col: i64,
    pub row: i64,
    pub id: u32,
    pub dir: Direction,
    pub depth: f64,
}

/// Every non-empty tile cell overlapping or flush against `b`. `lookup`
/// returns the tile id at (col, row), 0 for empty or out of range.
pub fn tile_contacts(b: &Aabb, tile_size: f64, lookup: impl Fn(i64, i64) -> u32) -> Vec<TileContact> {
    let c0 = ((b.x - EDGE_EPS) / tile_size).floor() as i64 - 1;
    let c1 = ((b.right() + EDGE_EPS) / tile_size).floor() as i64;
    let r0 = ((b.y - EDGE_EPS) / tile_size).floor() as i64 - 1;
    let r1 = ((b.bottom() + EDGE_EPS) / tile_size).floor() as i64;
    let mut out = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            let id = lookup(col, row);
            if id == 0 {
                continue;
            }
            let cell = Aabb::new(col as f64 * tile_size, row as f64 * tile_size, tile_size, tile_size);
            if let Some((dir, depth)) = b.contact(&cell) {
                out.push(TileContact { col, row, id, dir, depth });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flush_and_overlap_directions() {
        let b = Aabb::new(8.0, 8.0, 16.0, 24.0);
        assert_eq!(b.contact(&Aabb::new(8.0, 32.0, 8.0, 8.0)), Some((Direction::Down, 0.0)));
        assert_eq!(b.contact(&Aabb::new(24.0, 8.0, 8.0, 8.0)), Some((Direction::Right, 0.0)));
        assert_eq!(b.contact(&Aabb::new(0.0, 0.0, 8.0, 8.0)), None, "corner touch");
        let (d, depth) = b.contact(&Aabb::new(22.0, 16.0, 8.0, 8.0)).unwrap();
        assert_eq!((d, depth), (Direction::Right, 2.0));
    }

    #[test]
    fn standing_on_floor_row() {
        let b = Aabb::new(4.0, 120.0, 16.0, 24.0);
        let c = tile_contacts(&b, 8.0, |_, row| u32::from(row == 18));
        let cols: Vec<i64> = c.iter().map(|t| t.col).collect();
        assert_eq!(cols, [0, 1, 2]);
        assert!(c.iter().all(|t| t.dir == Direction::Down && t.depth == 0.0));
    }
}
