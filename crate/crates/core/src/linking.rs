//! Room graph recovery from tile-map signature changes and player position
//! discontinuities, and export of visited rooms as text level grids.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{despawn_tiles, solid_tiles, teleport_tiles, CollisionRule, TileHistory};
use crate::geom::{Aabb, Direction};
use crate::trace::Trace;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("incompatible traces: {0}")]
    IncompatibleTraces(String),
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exit {
    Side { dir: Direction },
    Portal,
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exit::Side { dir } => f.write_str(dir.as_str()),
            Exit::Portal => f.write_str("portal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    /// Tile-map signature identifying the room.
    pub key: String,
    /// Representative tile ids, row-major with row 0 at the top.
    pub grid: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomEdge {
    pub from: usize,
    pub to: usize,
    pub exit: Exit,
    pub support: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomGraph {
    pub nodes: Vec<RoomNode>,
    pub edges: Vec<RoomEdge>,
}

impl RoomGraph {
    pub fn node_index(&self, key: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.key == key)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize, Exit)> {
        self.edges.iter().map(|e| (e.from, e.to, e.exit)).collect()
    }
}

/// Player box per frame, for one trace.
pub type PlayerPath = BTreeMap<u64, Aabb>;

fn dense_grid(cells: &BTreeMap<(i64, i64), u32>) -> Option<Vec<Vec<u32>>> {
    let cols = cells.keys().map(|k| k.0).max()? + 1;
    let rows = cells.keys().map(|k| k.1).max()? + 1;
    if cells.keys().any(|k| k.0 < 0 || k.1 < 0) {
        return None;
    }
    let mut grid = vec![vec![0u32; cols as usize]; rows as usize];
    for (&(c, r), &id) in cells {
        grid[r as usize][c as usize] = id;
    }
    Some(grid)
}

/// Side of the old room through which the player left, judged from its
/// last box in that room: the box must be within two tiles of that edge
/// with no tiles between it and the edge. `None` means a portal.
fn exit_side(last: &Aabb, grid: &[Vec<u32>], tile_size: f64) -> Option<Direction> {
    let rows = grid.len() as i64;
    let cols = grid.first().map_or(0, Vec::len) as i64;
    let (width, height) = (cols as f64 * tile_size, rows as f64 * tile_size);
    let margin = 2.0 * tile_size;
    let cell = |v: f64| (v / tile_size).floor() as i64;
    let span = |lo: f64, hi: f64| cell(lo)..=cell(hi - 1e-9);
    let clear = |cs: std::ops::Range<i64>, rs: std::ops::RangeInclusive<i64>, transpose: bool| {
        cs.clone().all(|a| {
            rs.clone().all(|b| {
                let (c, r) = if transpose { (b, a) } else { (a, b) };
                r < 0 || c < 0 || r >= rows || c >= cols || grid[r as usize][c as usize] == 0
            })
        })
    };
    let ceil = |v: f64| (v / tile_size).ceil() as i64;
    if last.right() >= width - margin && clear(ceil(last.right())..cols, span(last.y, last.bottom()), false) {
        Some(Direction::Right)
    } else if last.x <= margin && clear(0..cell(last.x), span(last.y, last.bottom()), false) {
        Some(Direction::Left)
    } else if last.y <= margin && clear(0..cell(last.y), span(last.x, last.right()), true) {
        Some(Direction::Up)
    } else if last.bottom() >= height - margin && clear(ceil(last.bottom())..rows, span(last.x, last.right()), true) {
        Some(Direction::Down)
    } else {
        None
    }
}

/// Builds one graph from every trace. Rooms with equal signatures merge;
/// nodes and edges are numbered by first observation.
pub fn build_room_graph(traces: &[&Trace], players: &[PlayerPath], jump: f64) -> Result<RoomGraph, LinkError> {
    if traces.len() != players.len() {
        return Err(LinkError::Argument("one player path per trace required".into()));
    }
    let games: BTreeSet<String> = traces.iter().map(|t| t.header.game_id()).collect();
    if games.len() > 1 {
        return Err(LinkError::IncompatibleTraces(format!(
            "traces come from different games: {}",
            games.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut graph = RoomGraph::default();
    let mut edge_index: BTreeMap<(usize, usize, Exit), usize> = BTreeMap::new();
    for (trace, player) in traces.iter().zip(players) {
        let tiles = TileHistory::from_trace(trace);
        let ts = f64::from(trace.header.tile_size);
        let node_for = |graph: &mut RoomGraph, key: &str, frame: u64| -> usize {
            let grid = tiles.grid_at(frame).and_then(dense_grid);
            match graph.node_index(key) {
                Some(i) => {
                    if graph.nodes[i].grid.is_none() {
                        graph.nodes[i].grid = grid;
                    }
                    i
                }
                None => {
                    graph.nodes.push(RoomNode {
                        key: key.to_string(),
                        grid,
                    });
                    graph.nodes.len() - 1
                }
            }
        };
        let Some(first) = trace.frames.first() else { continue };
        let mut current = node_for(&mut graph, &first.tilemap_sig, first.index);
        for w in trace.frames.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            let moved = match (player.get(&prev.index), player.get(&cur.index)) {
                (Some(a), Some(b)) => Some((a, (b.x - a.x).hypot(b.y - a.y))),
                _ => None,
            };
            let sig_changed = prev.tilemap_sig != cur.tilemap_sig;
            let jumped = moved.is_some_and(|(_, d)| d > jump);
            if !sig_changed && !jumped {
                continue;
            }
            let old_grid = tiles.grid_at(prev.index).and_then(dense_grid);
            let exit = match (moved, &old_grid) {
                (Some((last, _)), Some(grid)) => exit_side(last, grid, ts).map_or(Exit::Portal, |dir| Exit::Side { dir }),
                (Some((last, _)), None) => {
                    // no tiles: infer the side from the wrap-around direction
                    let b = player[&cur.index];
                    let (dx, dy) = (b.x - last.x, b.y - last.y);
                    if dx.abs() > jump && dy.abs() <= jump {
                        Exit::Side {
                            dir: if dx < 0.0 { Direction::Right } else { Direction::Left },
                        }
                    } else {
                        Exit::Portal
                    }
                }
                (None, _) => Exit::Portal,
            };
            let next = node_for(&mut graph, &cur.tilemap_sig, cur.index);
            let key = (current, next, exit);
            match edge_index.get(&key) {
                Some(&i) => graph.edges[i].support += 1,
                None => {
                    edge_index.insert(key, graph.edges.len());
                    graph.edges.push(RoomEdge {
                        from: current,
                        to: next,
                        exit,
                        support: 1,
                    });
                }
            }
            current = next;
        }
    }
    Ok(graph)
}

/// Whether some bijection of `0..n` maps edge set `a` onto `b`. Exhaustive;
/// meant for small graphs.
pub fn graphs_isomorphic(n: usize, a: &BTreeSet<(usize, usize, Exit)>, m: usize, b: &BTreeSet<(usize, usize, Exit)>) -> bool {
    if n != m || a.len() != b.len() {
        return false;
    }
    fn rec(
        k: usize,
        n: usize,
        perm: &mut Vec<usize>,
        used: &mut [bool],
        a: &BTreeSet<(usize, usize, Exit)>,
        b: &BTreeSet<(usize, usize, Exit)>,
    ) -> bool {
        if k == n {
            return a.iter().all(|&(x, y, e)| b.contains(&(perm[x], perm[y], e)));
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                perm.push(j);
                if rec(k + 1, n, perm, used, a, b) {
                    return true;
                }
                perm.pop();
                used[j] = false;
            }
        }
        false
    }
    rec(0, n, &mut Vec::new(), &mut vec![false; n], a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCorpus {
    /// (room index, grid text) for rooms with tile data.
    pub rooms: Vec<(usize, String)>,
    /// Legend character → tile id → learned property.
    pub legend: BTreeMap<char, BTreeMap<u32, String>>,
    /// Room keys skipped for lack of tile data.
    pub skipped: Vec<String>,
}

/// Character for a tile id under the learned rules.
pub fn legend_char(id: u32, solid: &BTreeSet<u32>, despawn: &BTreeSet<u32>, teleport: &BTreeSet<u32>) -> char {
    if id == 0 {
        '.'
    } else if solid.contains(&id) {
        '#'
    } else if despawn.contains(&id) {
        'o'
    } else if teleport.contains(&id) {
        '@'
    } else {
        '.'
    }
}

/// Renders a tile grid with the legend implied by `rules`.
pub fn render_grid(grid: &[Vec<u32>], rules: &[CollisionRule]) -> String {
    let (solid, despawn, teleport) = (solid_tiles(rules), despawn_tiles(rules), teleport_tiles(rules));
    let mut out = String::new();
    for row in grid {
        out.extend(row.iter().map(|&id| legend_char(id, &solid, &despawn, &teleport)));
        out.push('\n');
    }
    out
}

/// One text grid per room with tile data, plus the legend.
pub fn export_level_corpus(graph: &RoomGraph, rules: &[CollisionRule]) -> LevelCorpus {
    let (solid, despawn, teleport) = (solid_tiles(rules), despawn_tiles(rules), teleport_tiles(rules));
    let mut rooms = Vec::new();
    let mut skipped = Vec::new();
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        match &node.grid {
            Some(grid) => {
                seen.extend(grid.iter().flatten().copied());
                rooms.push((i, render_grid(grid, rules)));
            }
            None => skipped.push(node.key.clone()),
        }
    }
    let mut legend: BTreeMap<char, BTreeMap<u32, String>> = BTreeMap::new();
    for id in seen {
        let c = legend_char(id, &solid, &despawn, &teleport);
        let property = match c {
            '#' => "solid",
            'o' => "despawn_on_touch",
            '@' => "teleport",
            _ if id == 0 => "empty",
            _ => "unknown",
        };
        legend.entry(c).or_default().insert(id, property.into());
    }
    LevelCorpus { rooms, legend, skipped }
}
