//! Sprite grouping and frame-to-frame entity tracking.
//!
//! Small hardware sprites that keep the same relative offsets are merged
//! into composite characters, then merged observations are stitched into
//! tracks by greedy nearest-neighbour assignment on a constant-velocity
//! prediction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Aabb;
use crate::trace::{EntityObservation, Frame, Trace};

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub tile_size: u32,
    /// Gate radius for assignment (px per frame).
    pub max_step: f64,
    /// Longest tolerated run of missing frames before a track is split.
    pub max_gap: u64,
    /// Prior co-occurrences needed before two sprites are merged.
    pub persistence: u32,
    /// Input-to-motion lag window for player identification (frames).
    pub lag: u64,
}

impl TrackerConfig {
    pub fn for_tile_size(tile_size: u32) -> Self {
        Self {
            tile_size,
            max_step: 2.0 * f64::from(tile_size),
            max_gap: 8,
            persistence: 4,
            lag: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub x: f64,
    pub y: f64,
    pub w: u32,
    pub h: u32,
    pub signature: String,
}

impl TrackSample {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.x, self.y, f64::from(self.w), f64::from(self.h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTrack {
    pub track_id: usize,
    pub signatures: BTreeSet<String>,
    pub samples: BTreeMap<u64, TrackSample>,
    /// Half-open frame intervals inside the track with no observation.
    pub gaps: Vec<(u64, u64)>,
}

impl EntityTrack {
    pub fn first_frame(&self) -> u64 {
        *self.samples.keys().next().expect("tracks are non-empty")
    }

    pub fn last_frame(&self) -> u64 {
        *self.samples.keys().next_back().expect("tracks are non-empty")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

type PairKey = (String, String, i64, i64);

/// Offsets are compared on a 1/16 px lattice.
fn quantize(v: f64) -> i64 {
    (v * 16.0).round() as i64
}

/// Merges co-moving hardware sprites into composite observations. Keeps
/// co-occurrence history across frames, so feed frames in order.
#[derive(Debug, Clone)]
pub struct SpriteGrouper {
    tile_size: u32,
    persistence: u32,
    history: BTreeMap<PairKey, u32>,
}

impl SpriteGrouper {
    pub fn new(tile_size: u32, persistence: u32) -> Self {
        Self {
            tile_size,
            persistence,
            history: BTreeMap::new(),
        }
    }

    fn is_hardware_sprite(&self, o: &EntityObservation) -> bool {
        o.w <= self.tile_size && o.h <= 2 * self.tile_size
    }

    fn pair_key(a: &EntityObservation, b: &EntityObservation) -> PairKey {
        let (dx, dy) = (quantize(b.x - a.x), quantize(b.y - a.y));
        if (&a.signature, dx, dy) <= (&b.signature, -dx, -dy) {
            (a.signature.clone(), b.signature.clone(), dx, dy)
        } else {
            (b.signature.clone(), a.signature.clone(), -dx, -dy)
        }
    }

    pub fn group(&mut self, frame: &Frame) -> Vec<EntityObservation> {
        let obs = &frame.entities;
        let n = obs.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while p[r] != r {
                r = p[r];
            }
            let mut c = i;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }

        let boxes: Vec<Aabb> = obs
            .iter()
            .map(|o| Aabb::new(o.x, o.y, f64::from(o.w), f64::from(o.h)))
            .collect();
        let mut seen = Vec::new();
        for i in 0..n {
            if !self.is_hardware_sprite(&obs[i]) {
                continue;
            }
            for j in i + 1..n {
                if !self.is_hardware_sprite(&obs[j]) {
                    continue;
                }
                if !boxes[i].intersects(&boxes[j]) && boxes[i].contact(&boxes[j]).is_none() {
                    continue;
                }
                let key = Self::pair_key(&obs[i], &obs[j]);
                if self.history.get(&key).copied().unwrap_or(0) >= self.persistence {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
                seen.push(key);
            }
        }
        for key in seen {
            *self.history.entry(key).or_insert(0) += 1;
        }

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups
            .into_values()
            .map(|members| {
                if members.len() == 1 {
                    return obs[members[0]].clone();
                }
                let union = members
                    .iter()
                    .map(|&i| boxes[i])
                    .reduce(|a, b| a.union(&b))
                    .expect("non-empty group");
                let mut parts: Vec<(i64, i64, &str)> = members
                    .iter()
                    .map(|&i| (quantize(obs[i].y - union.y), quantize(obs[i].x - union.x), obs[i].signature.as_str()))
                    .collect();
                parts.sort();
                let signature = parts
                    .iter()
                    .map(|(dy, dx, s)| format!("{s}@{dx},{dy}"))
                    .collect::<Vec<_>>()
                    .join("+");
                EntityObservation {
                    signature,
                    x: union.x,
                    y: union.y,
                    w: union.w.ceil() as u32,
                    h: union.h.ceil() as u32,
                    hflip: obs[members[0]].hflip,
                    vflip: obs[members[0]].vflip,
                }
            })
            .collect()
    }
}

/// One-shot grouping of a single frame against the history in `grouper`.
pub fn group_sprites(grouper: &mut SpriteGrouper, frame: &Frame) -> Vec<EntityObservation> {
    grouper.group(frame)
}

struct Building {
    signatures: BTreeSet<String>,
    samples: BTreeMap<u64, TrackSample>,
    last_frame: u64,
    last: (f64, f64),
    size: (u32, u32),
    velocity: (f64, f64),
}

impl Building {
    fn start(frame: u64, o: EntityObservation) -> Self {
        let mut b = Building {
            signatures: BTreeSet::new(),
            samples: BTreeMap::new(),
            last_frame: frame,
            last: (o.x, o.y),
            size: (o.w, o.h),
            velocity: (0.0, 0.0),
        };
        b.push(frame, o);
        b
    }

    fn push(&mut self, frame: u64, o: EntityObservation) {
        if !self.samples.is_empty() {
            let dt = (frame - self.last_frame) as f64;
            self.velocity = ((o.x - self.last.0) / dt, (o.y - self.last.1) / dt);
        }
        self.last_frame = frame;
        self.last = (o.x, o.y);
        self.size = (o.w, o.h);
        self.signatures.insert(o.signature.clone());
        self.samples.insert(
            frame,
            TrackSample {
                x: o.x,
                y: o.y,
                w: o.w,
                h: o.h,
                signature: o.signature,
            },
        );
    }

    fn compatible(&self, o: &EntityObservation) -> bool {
        self.signatures.contains(&o.signature) || self.size == (o.w, o.h)
    }

    fn predict(&self, frame: u64) -> (f64, f64) {
        let dt = (frame - self.last_frame) as f64;
        (self.last.0 + self.velocity.0 * dt, self.last.1 + self.velocity.1 * dt)
    }

    fn finish(self) -> EntityTrack {
        let frames: Vec<u64> = self.samples.keys().copied().collect();
        let gaps = frames
            .windows(2)
            .filter(|w| w[1] > w[0] + 1)
            .map(|w| (w[0] + 1, w[1]))
            .collect();
        EntityTrack {
            track_id: 0,
            signatures: self.signatures,
            samples: self.samples,
            gaps,
        }
    }
}

/// Stitches every (grouped) observation of `trace` into exactly one track.
pub fn track(trace: &Trace, cfg: &TrackerConfig) -> Vec<EntityTrack> {
    let mut grouper = SpriteGrouper::new(cfg.tile_size, cfg.persistence);
    let mut active: Vec<Building> = Vec::new();
    let mut done: Vec<Building> = Vec::new();
    for frame in &trace.frames {
        let f = frame.index;
        let (keep, expired): (Vec<Building>, Vec<Building>) = active
            .into_iter()
            .partition(|b| f - b.last_frame - 1 <= cfg.max_gap);
        done.extend(expired);
        active = keep;

        let obs = grouper.group(frame);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, b) in active.iter().enumerate() {
            let (px, py) = b.predict(f);
            for (oi, o) in obs.iter().enumerate() {
                if !b.compatible(o) {
                    continue;
                }
                let d = (o.x - px).hypot(o.y - py);
                if d <= cfg.max_step {
                    pairs.push((d, ti, oi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; active.len()];
        let mut assigned: Vec<Option<usize>> = vec![None; obs.len()];
        for (_, ti, oi) in pairs {
            if track_used[ti] || assigned[oi].is_some() {
                continue;
            }
            track_used[ti] = true;
            assigned[oi] = Some(ti);
        }
        for (oi, o) in obs.into_iter().enumerate() {
            match assigned[oi] {
                Some(ti) => active[ti].push(f, o),
                None => active.push(Building::start(f, o)),
            }
        }
    }
    done.extend(active);
    let mut tracks: Vec<EntityTrack> = done.into_iter().map(Building::finish).collect();
    tracks.sort_by(|a, b| {
        let (sa, sb) = (&a.samples[&a.first_frame()], &b.samples[&b.first_frame()]);
        a.first_frame()
            .cmp(&b.first_frame())
            .then(sa.x.total_cmp(&sb.x))
            .then(sa.y.total_cmp(&sb.y))
    });
    for (i, t) in tracks.iter_mut().enumerate() {
        t.track_id = i;
    }
    tracks
}

const SIGN_EPS: f64 = 1e-9;

fn sign_bin(v: f64) -> usize {
    if v > SIGN_EPS {
        2
    } else if v < -SIGN_EPS {
        0
    } else {
        1
    }
}

/// Empirical mutual information (nats) of paired symbols in 0..3.
pub fn mutual_information(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut joint = [[0f64; 3]; 3];
    for &(a, b) in pairs {
        joint[a][b] += 1.0;
    }
    let n = pairs.len() as f64;
    let pa: Vec<f64> = (0..3).map(|a| joint[a].iter().sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..3).map(|b| (0..3).map(|a| joint[a][b]).sum::<f64>() / n).collect();
    let mut mi = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let p = joint[a][b] / n;
            if p > 0.0 {
                mi += p * (p / (pa[a] * pb[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Dependence between the horizontal input axis and a track's horizontal
/// velocity sign, maximised over lags `0..=lag`.
pub fn control_score(track: &EntityTrack, trace: &Trace, lag: u64) -> f64 {
    let first = trace.first_index();
    let axis_at = |f: u64| trace.frame(f).map(|fr| (fr.input.axis() + 1) as usize);
    let vsign: Vec<(u64, usize)> = track
        .samples
        .iter()
        .filter_map(|(&f, s)| {
            let prev = track.samples.get(&f.checked_sub(1)?)?;
            Some((f, sign_bin(s.x - prev.x)))
        })
        .collect();
    (0..=lag)
        .map(|l| {
            let pairs: Vec<(usize, usize)> = vsign
                .iter()
                .filter(|(f, _)| *f >= first + l)
                .filter_map(|&(f, v)| Some((axis_at(f - l)?, v)))
                .collect();
            if pairs.len() < 2 {
                0.0
            } else {
                mutual_information(&pairs)
            }
        })
        .fold(0.0, f64::max)
}

/// Track most dependent on the horizontal input. Ties go to the longest
/// track, then the lowest id.
pub fn identify_player(tracks: &[EntityTrack], trace: &Trace, lag: u64) -> Result<usize, TrackError> {
    let axes: BTreeSet<i8> = trace.frames.iter().map(|f| f.input.axis()).collect();
    if axes.len() < 2 {
        return Err(TrackError::InsufficientSignal(
            "horizontal input never varies".into(),
        ));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for t in tracks {
        let score = control_score(t, trace, lag);
        let better = match best {
            None => true,
            Some((s, len, _)) => {
                if (score - s).abs() > 1e-12 {
                    score > s
                } else {
                    t.len() > len
                }
            }
        };
        if better {
            best = Some((score, t.len(), t.track_id));
        }
    }
    best.map(|(_, _, id)| id)
        .ok_or_else(|| TrackError::InsufficientSignal("trace has no tracks".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Button, InputState, TraceHeader};

    fn frame(index: u64, entities: Vec<EntityObservation>) -> Frame {
        Frame {
            index,
            camera: (0.0, 0.0),
            input: InputState::NONE,
            entities,
            tilemap_sig: "r".into(),
            tile_patch: None,
        }
    }

    fn trace(frames: Vec<Frame>) -> Trace {
        Trace::new(TraceHeader::new("unit", 60, 8), frames).unwrap()
    }

    #[test]
    fn stacked_sprites_merge_after_persistence() {
        let mut g = SpriteGrouper::new(8, 4);
        for f in 0..4 {
            let fr = frame(
                f,
                vec![
                    EntityObservation::new("top", 10.0 + f as f64, 20.0, 8, 8),
                    EntityObservation::new("bot", 10.0 + f as f64, 28.0, 8, 8),
                ],
            );
            assert_eq!(g.group(&fr).len(), 2, "frame {f} precedes persistence");
        }
        let fr = frame(
            4,
            vec![
                EntityObservation::new("top", 14.0, 20.0, 8, 8),
                EntityObservation::new("bot", 14.0, 28.0, 8, 8),
            ],
        );
        let out = g.group(&fr);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].x, out[0].y, out[0].w, out[0].h), (14.0, 20.0, 8, 16));
        assert_eq!(out[0].signature, "top@0,0+bot@0,128");
    }

    #[test]
    fn distant_sprites_pass_through() {
        let mut g = SpriteGrouper::new(8, 4);
        for f in 0..10 {
            let fr = frame(
                f,
                vec![
                    EntityObservation::new("a", 0.0, 0.0, 8, 8),
                    EntityObservation::new("b", 48.0, 0.0, 8, 8),
                ],
            );
            assert_eq!(g.group(&fr).len(), 2);
        }
    }

    #[test]
    fn six_sprites_form_a_16x24_character() {
        let mut g = SpriteGrouper::new(8, 4);
        let mut last = vec![];
        for f in 0..6u64 {
            let mut ents = vec![];
            for r in 0..3 {
                for c in 0..2 {
                    ents.push(EntityObservation::new(
                        format!("t{r}{c}"),
                        30.0 + f as f64 * 1.5 + c as f64 * 8.0,
                        50.0 + r as f64 * 8.0,
                        8,
                        8,
                    ));
                }
            }
            last = g.group(&frame(f, ents));
        }
        assert_eq!(last.len(), 1);
        assert_eq!((last[0].w, last[0].h), (16, 24));
    }

    #[test]
    fn single_mover_one_track() {
        let frames = (0..100)
            .map(|f| frame(f, vec![EntityObservation::new("p", f as f64, 10.0, 16, 16)]))
            .collect();
        let tracks = track(&trace(frames), &TrackerConfig::for_tile_size(8));
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 100);
        assert!(tracks[0].gaps.is_empty());
    }

    #[test]
    fn long_gap_splits_track() {
        let cfg = TrackerConfig::for_tile_size(8);
        let mut frames: Vec<Frame> = (0..=50)
            .map(|f| frame(f, vec![EntityObservation::new("e", 100.0, 10.0, 16, 16)]))
            .collect();
        let respawn = 50 + cfg.max_gap + 1 + 1;
        for f in 51..respawn {
            frames.push(frame(f, vec![]));
        }
        for f in respawn..respawn + 20 {
            frames.push(frame(f, vec![EntityObservation::new("e", 104.0, 10.0, 16, 16)]));
        }
        let tracks = track(&trace(frames), &cfg);
        assert_eq!(tracks.len(), 2);
    }

    #[test]
    fn short_gap_is_bridged_and_recorded() {
        let mut frames: Vec<Frame> = Vec::new();
        for f in 0..30u64 {
            let ents = if (10..14).contains(&f) {
                vec![]
            } else {
                vec![EntityObservation::new("e", f as f64, 0.0, 8, 8)]
            };
            frames.push(frame(f, ents));
        }
        let tracks = track(&trace(frames), &TrackerConfig::for_tile_size(8));
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].gaps, vec![(10, 14)]);
    }

    /// Minimum total assignment cost over all bijections (2x2 brute force).
    fn optimal_cost(tracks: &[(f64, f64)], obs: &[(f64, f64)]) -> f64 {
        let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let straight = d(tracks[0], obs[0]) + d(tracks[1], obs[1]);
        let crossed = d(tracks[0], obs[1]) + d(tracks[1], obs[0]);
        straight.min(crossed)
    }

    #[test]
    fn crossing_identical_entities_keep_two_tracks() {
        // a moves right, b moves left along nearby rows; they cross at f = 20
        let pos = |f: u64| ((f as f64 * 2.0, 10.0), (80.0 - f as f64 * 2.0, 13.0));
        let frames: Vec<Frame> = (0..40)
            .map(|f| {
                let (a, b) = pos(f);
                frame(
                    f,
                    vec![
                        EntityObservation::new("twin", a.0, a.1, 8, 8),
                        EntityObservation::new("twin", b.0, b.1, 8, 8),
                    ],
                )
            })
            .collect();
        let tracks = track(&trace(frames), &TrackerConfig::for_tile_size(8));
        assert_eq!(tracks.len(), 2);
        // every frame-to-frame assignment matches the brute-force optimum
        for f in 2..40u64 {
            let predicted: Vec<(f64, f64)> = tracks
                .iter()
                .map(|t| {
                    let p1 = &t.samples[&(f - 1)];
                    let p2 = &t.samples[&(f - 2)];
                    (2.0 * p1.x - p2.x, 2.0 * p1.y - p2.y)
                })
                .collect();
            let chosen: Vec<(f64, f64)> = tracks.iter().map(|t| (t.samples[&f].x, t.samples[&f].y)).collect();
            let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
            let cost = d(predicted[0], chosen[0]) + d(predicted[1], chosen[1]);
            let (a, b) = pos(f);
            assert!((cost - optimal_cost(&predicted, &[a, b])).abs() < 1e-9, "frame {f}");
        }
    }

    #[test]
    fn mutual_information_extremes() {
        let dependent: Vec<(usize, usize)> = (0..300).map(|i| (i % 3, i % 3)).collect();
        assert!((mutual_information(&dependent) - 3f64.ln()).abs() < 1e-12);
        let independent: Vec<(usize, usize)> = (0..900).map(|i| (i % 3, (i / 3) % 3)).collect();
        assert!(mutual_information(&independent).abs() < 1e-12);
    }

    #[test]
    fn identify_requires_varying_input() {
        let frames = (0..50)
            .map(|f| frame(f, vec![EntityObservation::new("p", f as f64, 10.0, 16, 16)]))
            .collect();
        let t = trace(frames);
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        assert!(matches!(identify_player(&tracks, &t, 4), Err(TrackError::InsufficientSignal(_))));
    }

    #[test]
    fn identify_prefers_input_driven_track() {
        let mut frames = Vec::new();
        let mut px = 100.0;
        for f in 0..200u64 {
            let dir = if (f / 20) % 2 == 0 { Button::R } else { Button::L };
            let input = InputState::from_buttons([dir]);
            // player responds one frame late
            if f > 0 {
                let prev_axis = if ((f - 1) / 20) % 2 == 0 { 1.0 } else { -1.0 };
                px += prev_axis;
            }
            let ex = 50.0 + (f as f64 * 0.5) % 40.0;
            let mut fr = frame(
                f,
                vec![
                    EntityObservation::new("enemy", ex, 0.0, 16, 16),
                    EntityObservation::new("hero", px, 40.0, 16, 24),
                ],
            );
            fr.input = input;
            frames.push(fr);
        }
        let t = trace(frames);
        let tracks = track(&t, &TrackerConfig::for_tile_size(8));
        let id = identify_player(&tracks, &t, 4).unwrap();
        assert!(tracks[id].signatures.contains("hero"));
    }
}
