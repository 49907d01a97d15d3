use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CharacterState, ContactClass, FsmModel, Guard, Transition};
use crate::geom::{Axis, Direction};
use crate::trace::Trace;
use crate::tracker::EntityTrack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InduceConfig {
    /// Frames before a changepoint in which a cause may occur.
    pub window: u64,
    pub min_precision: f64,
    pub min_support: u32,
}

impl Default for InduceConfig {
    fn default() -> Self {
        Self {
            window: 3,
            min_precision: 0.9,
            min_support: 2,
        }
    }
}

/// Everything known about one tracked character: its trace, its track, the
/// labelled segments `(t0, t1, state)` in frame order and its contact
/// onsets `(frame, other, direction)`.
#[derive(Debug, Clone)]
pub struct CharacterTimeline<'a> {
    pub trace: &'a Trace,
    pub track: &'a EntityTrack,
    pub segments: Vec<(u64, u64, usize)>,
    pub contacts: Vec<(u64, ContactClass, Direction)>,
}

impl CharacterTimeline<'_> {
    /// Candidate conditions by frame.
    fn conditions(&self) -> BTreeMap<u64, BTreeSet<Guard>> {
        let mut out: BTreeMap<u64, BTreeSet<Guard>> = BTreeMap::new();
        for w in self.trace.frames.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            if !self.track.samples.contains_key(&cur.index) {
                continue;
            }
            for b in cur.input.pressed_since(prev.input).buttons() {
                out.entry(cur.index).or_default().insert(Guard::ButtonPressed { button: b });
            }
            for b in cur.input.released_since(prev.input).buttons() {
                out.entry(cur.index).or_default().insert(Guard::ButtonReleased { button: b });
            }
        }
        for (f, with, dir) in &self.contacts {
            out.entry(*f).or_default().insert(Guard::Collision {
                with: with.clone(),
                dir: *dir,
            });
        }
        let s = &self.track.samples;
        for (&f, cur) in s {
            let (Some(p1), Some(p2)) = (f.checked_sub(1).and_then(|g| s.get(&g)), f.checked_sub(2).and_then(|g| s.get(&g)))
            else {
                continue;
            };
            for (axis, before, after) in [
                (Axis::X, p1.x - p2.x, cur.x - p1.x),
                (Axis::Y, p1.y - p2.y, cur.y - p1.y),
            ] {
                if (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0) {
                    out.entry(f).or_default().insert(Guard::VelocityZero { axis });
                }
            }
        }
        out
    }

    fn labels(&self) -> BTreeMap<u64, usize> {
        let mut out = BTreeMap::new();
        for &(t0, t1, s) in &self.segments {
            for f in t0..t1 {
                out.insert(f, s);
            }
        }
        out
    }

    /// `(t, from, to)` for adjacent segments in different states.
    fn changepoints(&self, window: u64) -> Vec<(u64, usize, usize)> {
        self.segments
            .windows(2)
            .filter(|w| w[0].2 != w[1].2 && w[1].0 >= w[0].1 && w[1].0 - w[0].1 <= window)
            .map(|w| (w[1].0, w[0].2, w[1].2))
            .collect()
    }
}

/// Per-timeline data prepared once.
struct Prepared {
    conditions: BTreeMap<u64, BTreeSet<Guard>>,
    labels: BTreeMap<u64, usize>,
    changepoints: Vec<(u64, usize, usize)>,
}

impl Prepared {
    fn holds_in(&self, g: &Guard, lo: u64, hi: u64) -> bool {
        self.conditions.range(lo..=hi).any(|(_, set)| set.contains(g))
    }

    /// Frames at which the conjunction `gs` completes: some guard occurs at
    /// the frame and every guard occurs in the preceding window.
    fn instances(&self, gs: &[Guard], window: u64) -> Vec<u64> {
        self.conditions
            .iter()
            .filter(|(_, set)| gs.iter().any(|g| set.contains(g)))
            .map(|(&f, _)| f)
            .filter(|&f| gs.iter().all(|g| self.holds_in(g, f.saturating_sub(window), f)))
            .collect()
    }
}

/// Changepoint occurrence: timeline index and frame.
type Occurrence = (usize, u64);

fn precision(prep: &[Prepared], gs: &[Guard], from: usize, to: usize, window: u64) -> (f64, u32) {
    let mut total = 0u32;
    let mut hits = 0u32;
    for p in prep {
        for f in p.instances(gs, window) {
            let Some(prev) = f.checked_sub(1) else { continue };
            if p.labels.get(&prev) != Some(&from) {
                continue;
            }
            total += 1;
            if p
                .changepoints
                .iter()
                .any(|&(t, a, b)| a == from && b == to && t >= f && t - f <= window)
            {
                hits += 1;
            }
        }
    }
    if total == 0 {
        (0.0, 0)
    } else {
        (f64::from(hits) / f64::from(total), total)
    }
}

fn covers(prep: &[Prepared], o: &Occurrence, gs: &[Guard], window: u64) -> bool {
    let p = &prep[o.0];
    gs.iter().all(|g| p.holds_in(g, o.1.saturating_sub(window), o.1))
}

struct Choice {
    guards: Vec<Guard>,
    precision: f64,
    support: u32,
}

fn rank_key(c: &Choice) -> (std::cmp::Reverse<u64>, u8, std::cmp::Reverse<u32>, Vec<Guard>) {
    let pref = c.guards.iter().map(Guard::preference).max().unwrap_or(0);
    // precision compared on a fine lattice so float noise cannot reorder
    let p = (c.precision * 1e9).round() as u64;
    (std::cmp::Reverse(p), pref, std::cmp::Reverse(c.support), c.guards.clone())
}

/// Builds the transition table of one character class by greedy set cover
/// of the observed state changes with candidate conditions.
pub fn induce_transitions(
    states: &[CharacterState],
    timelines: &[CharacterTimeline<'_>],
    cfg: &InduceConfig,
) -> FsmModel {
    let w = cfg.window;
    let prep: Vec<Prepared> = timelines
        .iter()
        .map(|t| Prepared {
            conditions: t.conditions(),
            labels: t.labels(),
            changepoints: t.changepoints(w),
        })
        .collect();

    let mut by_pair: BTreeMap<(usize, usize), Vec<Occurrence>> = BTreeMap::new();
    let mut exits: BTreeMap<usize, u32> = BTreeMap::new();
    for (i, p) in prep.iter().enumerate() {
        for &(t, a, b) in &p.changepoints {
            by_pair.entry((a, b)).or_default().push((i, t));
            *exits.entry(a).or_default() += 1;
        }
    }

    let mut transitions = Vec::new();
    for (&(from, to), occurrences) in &by_pair {
        let mut uncovered: Vec<Occurrence> = occurrences.clone();
        loop {
            let mut candidates: BTreeSet<Guard> = BTreeSet::new();
            for &(i, t) in &uncovered {
                for (_, set) in prep[i].conditions.range(t.saturating_sub(w)..=t) {
                    candidates.extend(set.iter().cloned());
                }
            }
            let evaluate = |gs: Vec<Guard>| {
                let support = uncovered.iter().filter(|o| covers(&prep, o, &gs, w)).count() as u32;
                let (precision, _) = precision(&prep, &gs, from, to, w);
                Choice {
                    guards: gs,
                    precision,
                    support,
                }
            };
            let passes = |c: &Choice| c.precision >= cfg.min_precision && c.support >= cfg.min_support;
            let cands: Vec<Guard> = candidates.into_iter().collect();
            let mut best = cands
                .iter()
                .map(|g| evaluate(vec![g.clone()]))
                .filter(passes)
                .min_by_key(rank_key);
            if best.is_none() {
                let mut pairs = Vec::new();
                for (a, ga) in cands.iter().enumerate() {
                    for gb in &cands[a + 1..] {
                        pairs.push(vec![ga.clone(), gb.clone()]);
                    }
                }
                best = pairs.into_iter().map(evaluate).filter(passes).min_by_key(rank_key);
            }
            let Some(choice) = best else { break };
            uncovered.retain(|o| !covers(&prep, o, &choice.guards, w));
            transitions.push(Transition {
                from,
                to,
                guards: choice.guards,
                support: choice.support,
                precision: choice.precision,
                low_confidence: false,
            });
            if uncovered.is_empty() {
                break;
            }
        }
        if !uncovered.is_empty() {
            let leftover = uncovered.len() as u32;
            transitions.push(Transition {
                from,
                to,
                guards: vec![Guard::UnconditionalTimeout],
                support: leftover,
                precision: f64::from(leftover) / f64::from(exits[&from].max(1)),
                low_confidence: true,
            });
        }
    }
    transitions.sort_by(|a, b| (a.from, a.to, &a.guards).cmp(&(b.from, b.to, &b.guards)));

    let class_signatures = timelines
        .iter()
        .flat_map(|t| t.track.signatures.iter().cloned())
        .collect();
    FsmModel {
        class_signatures,
        states: states.to_vec(),
        transitions,
    }
}
