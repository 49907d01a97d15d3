use std::collections::BTreeSet;

use super::{CharacterState, SegmentRef};
use crate::physics::MotionSegment;

/// Raw clustering features of a segment: (|ax|, ay, sat_x, sat_y). The
/// horizontal acceleration is unsigned so mirrored motion shares a state.
pub fn segment_features(segments: &[MotionSegment]) -> Vec<[f64; 4]> {
    segments
        .iter()
        .map(|s| {
            [
                s.x.a.abs(),
                s.y.a,
                f64::from(u8::from(s.saturated[0])),
                f64::from(u8::from(s.saturated[1])),
            ]
        })
        .collect()
}

/// Scales each feature by its largest magnitude so all lie in [-1, 1].
fn normalize(features: &[[f64; 4]]) -> Vec<[f64; 4]> {
    let mut scale = [0.0f64; 4];
    for f in features {
        for k in 0..4 {
            scale[k] = scale[k].max(f[k].abs());
        }
    }
    features
        .iter()
        .map(|f| {
            let mut out = [0.0; 4];
            for k in 0..4 {
                out[k] = if scale[k] > 0.0 { f[k] / scale[k] } else { 0.0 };
            }
            out
        })
        .collect()
}

fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

struct Cluster {
    members: Vec<usize>,
    animations: BTreeSet<String>,
}

impl Cluster {
    fn can_merge(&self, o: &Cluster) -> bool {
        (self.animations.is_empty() && o.animations.is_empty())
            || !self.animations.is_disjoint(&o.animations)
    }
}

/// Horizontal acceleration below which a segment counts as constant-velocity.
const CENSOR_ACCEL: f64 = 0.02;
/// Smallest horizontal speed (px/frame) of a censored segment.
const CENSOR_SPEED: f64 = 0.1;

/// For each segment moving horizontally at constant speed, the first
/// velocity-capped segment with the same animation and vertical physics.
/// Such a segment shows a state already at its cap, so its acceleration is
/// unobservable and it inherits the capped segment's state.
fn censored_hosts(segments: &[MotionSegment], feats: &[[f64; 4]], eps: f64) -> Vec<Option<usize>> {
    segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.saturated[0] || s.x.a.abs() >= CENSOR_ACCEL || s.x.v.abs() <= CENSOR_SPEED {
                return None;
            }
            segments.iter().enumerate().position(|(j, o)| {
                o.saturated[0] && o.animation == s.animation && (feats[j][1] - feats[i][1]).abs() < eps
            })
        })
        .collect()
}

/// Complete-linkage agglomerative clustering of motion segments. Two
/// clusters merge only when their linkage distance is below `eps` and their
/// animation sets overlap (or are both empty). Constant-speed segments
/// that match a velocity-capped segment join its state without affecting
/// its parameters. States are numbered by their earliest member segment.
pub fn cluster_states(segments: &[MotionSegment], eps: f64) -> Vec<CharacterState> {
    if segments.is_empty() {
        return Vec::new();
    }
    let raw = segment_features(segments);
    let feats = normalize(&raw);
    let hosts = censored_hosts(segments, &feats, eps);

    // identical feature vectors with the same animation start out together
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut rep: Vec<usize> = Vec::new();
    for i in (0..segments.len()).filter(|&i| hosts[i].is_none()) {
        let anim = &segments[i].animation;
        let same = rep.iter().position(|&r| {
            segments[r].animation == *anim && distance(&feats[r], &feats[i]) <= 1e-12
        });
        match same {
            Some(c) => clusters[c].members.push(i),
            None => {
                rep.push(i);
                clusters.push(Cluster {
                    members: vec![i],
                    animations: BTreeSet::from([anim.clone()]),
                });
            }
        }
    }

    let n = clusters.len();
    let mut dist = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let d = distance(&feats[rep[a]], &feats[rep[b]]);
            dist[a][b] = d;
            dist[b][a] = d;
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if !alive[a] {
                continue;
            }
            for b in a + 1..n {
                if !alive[b] || dist[a][b] >= eps || !clusters[a].can_merge(&clusters[b]) {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| dist[a][b] < d) {
                    best = Some((dist[a][b], a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let moved = std::mem::take(&mut clusters[b].members);
        clusters[a].members.extend(moved);
        let anims = std::mem::take(&mut clusters[b].animations);
        clusters[a].animations.extend(anims);
        alive[b] = false;
        for c in 0..n {
            let d = dist[a][c].max(dist[b][c]);
            dist[a][c] = d;
            dist[c][a] = d;
        }
    }

    let seg_ref = |i: usize| SegmentRef {
        track_id: segments[i].track_id,
        t0: segments[i].t0,
        t1: segments[i].t1,
    };
    let mut groups: Vec<Vec<usize>> = clusters
        .into_iter()
        .zip(alive)
        .filter(|(_, a)| *a)
        .map(|(c, _)| c.members)
        .collect();
    for (i, host) in hosts.iter().enumerate() {
        if let Some(h) = host {
            let g = groups.iter().position(|m| m.contains(h)).expect("hosts are clustered");
            groups[g].push(i);
        }
    }
    for m in &mut groups {
        m.sort_by_key(|&i| (segments[i].t0, segments[i].track_id));
    }
    groups.sort_by_key(|m| (segments[m[0]].t0, segments[m[0]].track_id, m[0]));
    groups
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let observed: Vec<usize> = members.iter().copied().filter(|&i| hosts[i].is_none()).collect();
            let k = observed.len() as f64;
            let mean = |f: usize| observed.iter().map(|&i| raw[i][f]).sum::<f64>() / k;
            CharacterState {
                state_id: id,
                name: format!("s{id}"),
                ax: mean(0),
                ay: mean(1),
                saturation: [mean(2), mean(3)],
                animations: members.iter().map(|&i| segments[i].animation.clone()).collect(),
                members: members.iter().map(|&i| seg_ref(i)).collect(),
            }
        })
        .collect()
}

/// State index of each segment (parallel to `segments`), `None` for
/// segments no state claims.
pub fn label_segments(states: &[CharacterState], segments: &[MotionSegment]) -> Vec<Option<usize>> {
    let mut index = std::collections::BTreeMap::new();
    for s in states {
        for m in &s.members {
            index.insert(*m, s.state_id);
        }
    }
    segments
        .iter()
        .map(|s| {
            index
                .get(&SegmentRef {
                    track_id: s.track_id,
                    t0: s.t0,
                    t1: s.t1,
                })
                .copied()
        })
        .collect()
}
