//! Constant-acceleration motion segments.
//!
//! Every frame-consecutive, single-animation run of a track is split by an
//! exact penalised dynamic program into pieces that each fit a quadratic in
//! time on both axes. Fits use the discrete convention of frame-stepped
//! games: a recurrence `v += a; p += v` produces `p_t = p_0 + v_0 t +
//! a t(t+1)/2`, which the continuous fit reports as `v = v_0 + a/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Axis;
use crate::tracker::EntityTrack;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no jump found")]
    NoJump,
}

/// Quadratic fit `p(τ) = p0 + v·τ + ½·a·τ²` with τ measured from the first
/// sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub p0: f64,
    pub v: f64,
    pub a: f64,
    pub rmse: f64,
}

impl AxisFit {
    pub fn at(&self, tau: f64) -> f64 {
        self.p0 + self.v * tau + 0.5 * self.a * tau * tau
    }

    pub fn velocity_at(&self, tau: f64) -> f64 {
        self.v + self.a * tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub track_id: usize,
    pub t0: u64,
    /// Exclusive end frame.
    pub t1: u64,
    pub x: AxisFit,
    pub y: AxisFit,
    /// Velocity-cap detected, per axis (x, y).
    pub saturated: [bool; 2],
    /// Appearance signature shown throughout the segment.
    pub animation: String,
}

impl MotionSegment {
    pub fn len(&self) -> u64 {
        self.t1 - self.t0
    }

    pub fn is_empty(&self) -> bool {
        self.t1 == self.t0
    }

    pub fn axis(&self, axis: Axis) -> &AxisFit {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least-squares quadratic through `(t, p)` samples. With exactly three
/// samples the fit interpolates.
pub fn fit_quadratic(samples: &[(f64, f64)]) -> Result<AxisFit, PhysicsError> {
    if samples.len() < 3 {
        return Err(PhysicsError::InsufficientData(format!(
            "{} samples, need at least 3",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let t0 = samples[0].0;
    let tm = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let scale = samples
        .iter()
        .map(|s| (s.0 - tm).abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let pm = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut m = [[0.0; 4]; 3];
    for &(t, p) in samples {
        let u = (t - tm) / scale;
        let basis = [1.0, u, u * u];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            m[r][3] += basis[r] * (p - pm);
        }
    }
    let [c0, c1, c2] = solve3(m).ok_or_else(|| {
        PhysicsError::InsufficientData("sample times must contain at least 3 distinct values".into())
    })?;
    let sse: f64 = samples
        .iter()
        .map(|&(t, p)| {
            let u = (t - tm) / scale;
            let r = p - pm - (c0 + c1 * u + c2 * u * u);
            r * r
        })
        .sum();
    // re-express around the first sample time
    let d = t0 - tm;
    let s2 = scale * scale;
    let p0 = pm + c0 + c1 * d / scale + c2 * d * d / s2;
    let v = c1 / scale + 2.0 * c2 * d / s2;
    let a = 2.0 * c2 / s2;
    let rmse = if samples.len() == 3 { 0.0 } else { (sse / n).sqrt() };
    Ok(AxisFit { p0, v, a, rmse })
}

/// Quadratic-fit SSE of `p[0..m]` at consecutive integer times, from the
/// running sums `s0 = Σp`, `s1 = Σt·p`, `s2 = Σt²·p`, `q = Σp²` with
/// `t = 0..m`. Uses the discrete orthogonal (Gram) polynomials so no normal
/// equations are formed.
fn gram_sse(m: usize, s0: f64, s1: f64, s2: f64, q: f64) -> f64 {
    let mf = m as f64;
    let mut sse = q - s0 * s0 / mf;
    if m >= 2 {
        let c = (mf - 1.0) / 2.0;
        let n1 = mf * (mf * mf - 1.0) / 12.0;
        let a1 = s1 - c * s0;
        sse -= a1 * a1 / n1;
        if m >= 3 {
            let k = (mf * mf - 1.0) / 12.0;
            let n2 = mf * (mf * mf - 1.0) * (mf * mf - 4.0) / 180.0;
            let a2 = s2 - 2.0 * c * s1 + (c * c - k) * s0;
            sse -= a2 * a2 / n2;
        }
    }
    sse.max(0.0)
}

/// Segment costs `cost[j][i - j - min_len]` = joint x/y quadratic SSE over
/// samples `j..i`, for every admissible segment.
struct CostTable {
    rows: Vec<Vec<f64>>,
    min_len: usize,
}

impl CostTable {
    fn build(xs: &[f64], ys: &[f64], min_len: usize) -> Self {
        let n = xs.len();
        let (bx, by) = (xs.first().copied().unwrap_or(0.0), ys.first().copied().unwrap_or(0.0));
        let rows = (0..n)
            .map(|j| {
                let mut acc = [[0.0f64; 4]; 2];
                let mut row = Vec::with_capacity(n.saturating_sub(j + min_len - 1));
                for i in j..n {
                    let t = (i - j) as f64;
                    for (a, p) in acc.iter_mut().zip([xs[i] - bx, ys[i] - by]) {
                        a[0] += p;
                        a[1] += t * p;
                        a[2] += t * t * p;
                        a[3] += p * p;
                    }
                    let m = i - j + 1;
                    if m >= min_len {
                        row.push(acc.iter().map(|a| gram_sse(m, a[0], a[1], a[2], a[3])).sum());
                    }
                }
                row
            })
            .collect();
        Self { rows, min_len }
    }

    /// Cost of samples `j..i`.
    fn get(&self, j: usize, i: usize) -> f64 {
        self.rows[j][i - j - self.min_len]
    }
}

#[derive(Clone)]
struct Best {
    cost: f64,
    segments: usize,
    prev: usize,
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn changepoints(best: &[Option<Best>], mut i: usize) -> Vec<usize> {
    let mut out = Vec::new();
    while i > 0 {
        let b = best[i].as_ref().expect("reachable");
        if b.prev > 0 {
            out.push(b.prev);
        }
        i = b.prev;
    }
    out.reverse();
    out
}

/// Exact minimiser of `Σ SSE + β·k` over segmentations of the series into
/// pieces of at least `min_len` samples. Returns `[start, end)` index pairs;
/// ties prefer fewer segments, then earlier changepoints. Empty when the
/// series is shorter than `min_len`.
pub fn segment_series(xs: &[f64], ys: &[f64], beta: f64, min_len: usize) -> Vec<(usize, usize)> {
    assert_eq!(xs.len(), ys.len());
    let min_len = min_len.max(3);
    let n = xs.len();
    if n < min_len {
        return Vec::new();
    }
    let costs = CostTable::build(xs, ys, min_len);
    let mut best: Vec<Option<Best>> = vec![None; n + 1];
    best[0] = Some(Best { cost: 0.0, segments: 0, prev: 0 });
    for i in min_len..=n {
        let mut cur: Option<Best> = None;
        for j in 0..=i - min_len {
            let Some(prefix) = &best[j] else { continue };
            let cand = Best {
                cost: prefix.cost + costs.get(j, i) + beta,
                segments: prefix.segments + 1,
                prev: j,
            };
            let replace = match &cur {
                None => true,
                Some(c) if ties(cand.cost, c.cost) => {
                    cand.segments < c.segments
                        || (cand.segments == c.segments && {
                            let mut a = changepoints(&best, j);
                            a.push(j);
                            let mut b = changepoints(&best, c.prev);
                            b.push(c.prev);
                            a < b
                        })
                }
                Some(c) => cand.cost < c.cost,
            };
            if replace {
                cur = Some(cand);
            }
        }
        best[i] = cur;
    }
    let mut bounds = changepoints(&best, n);
    bounds.insert(0, 0);
    bounds.push(n);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Penalised objective of a given segmentation, computed with direct fits.
pub fn segmentation_objective(xs: &[f64], ys: &[f64], bounds: &[(usize, usize)], beta: f64) -> f64 {
    bounds
        .iter()
        .map(|&(a, b)| {
            let sse = |p: &[f64]| {
                let s: Vec<(f64, f64)> = p.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
                let f = fit_quadratic(&s).expect("segments have >= 3 samples");
                f.rmse * f.rmse * p.len() as f64
            };
            sse(&xs[a..b]) + sse(&ys[a..b]) + beta
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub min_len: usize,
    /// Changepoint penalty β; `None` estimates it from the track.
    pub penalty: Option<f64>,
    /// Relative SSE reduction that flags a velocity cap.
    pub saturation_gain: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            min_len: 5,
            penalty: None,
            saturation_gain: 0.5,
        }
    }
}

/// Smallest penalty used on noise-free data.
pub const PENALTY_FLOOR: f64 = 1e-2;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `max(2·σ̂²·ln n, PENALTY_FLOOR)` with σ̂ from the median absolute deviation
/// of second differences, which are insensitive to piecewise-constant
/// acceleration.
pub fn default_penalty(track: &EntityTrack) -> f64 {
    let mut d2 = Vec::new();
    let pts: Vec<(u64, f64, f64)> = track.samples.iter().map(|(&f, s)| (f, s.x, s.y)).collect();
    for w in pts.windows(3) {
        if w[1].0 == w[0].0 + 1 && w[2].0 == w[1].0 + 1 {
            d2.push(w[2].1 - 2.0 * w[1].1 + w[0].1);
            d2.push(w[2].2 - 2.0 * w[1].2 + w[0].2);
        }
    }
    if d2.is_empty() {
        return PENALTY_FLOOR;
    }
    let med = median(&mut d2.clone());
    let mut dev: Vec<f64> = d2.iter().map(|d| (d - med).abs()).collect();
    let sigma = 1.4826 * median(&mut dev) / 6f64.sqrt();
    let n = track.len().max(2) as f64;
    (2.0 * sigma * sigma * n.ln()).max(PENALTY_FLOOR)
}

/// Maximal runs of frame-consecutive samples with one signature.
pub fn animation_runs(track: &EntityTrack) -> Vec<Vec<u64>> {
    let mut runs: Vec<Vec<u64>> = Vec::new();
    let mut prev: Option<(u64, &str)> = None;
    for (&f, s) in &track.samples {
        let extend = matches!(prev, Some((pf, ps)) if pf + 1 == f && ps == s.signature);
        if !extend {
            runs.push(Vec::new());
        }
        runs.last_mut().expect("pushed").push(f);
        prev = Some((f, &s.signature));
    }
    runs
}

fn fit_axis(ts: &[u64], ps: &[f64]) -> AxisFit {
    let s: Vec<(f64, f64)> = ts.iter().zip(ps).map(|(&t, &p)| (t as f64, p)).collect();
    fit_quadratic(&s).expect("segments have >= 3 samples")
}

fn linear_sse(ps: &[f64]) -> f64 {
    let n = ps.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let pm = ps.iter().sum::<f64>() / n;
    let stt: f64 = (0..ps.len()).map(|i| (i as f64 - tm).powi(2)).sum();
    let stp: f64 = ps.iter().enumerate().map(|(i, p)| (i as f64 - tm) * (p - pm)).sum();
    let slope = if stt > 0.0 { stp / stt } else { 0.0 };
    ps.iter()
        .enumerate()
        .map(|(i, p)| (p - pm - slope * (i as f64 - tm)).powi(2))
        .sum()
}

fn quad_sse(ps: &[f64]) -> f64 {
    let s: Vec<(f64, f64)> = ps.iter().enumerate().map(|(i, &p)| (i as f64, p)).collect();
    let f = fit_quadratic(&s).expect(">= 3 samples");
    f.rmse * f.rmse * ps.len() as f64
}

/// Accelerations below this magnitude count as constant velocity.
const ACCEL_EPS: f64 = 0.02;

/// Best accelerate-then-coast split of one axis. Returns the split index
/// when it removes more than `gain` of the single-fit SSE.
fn saturation_split(ps: &[f64], min_len: usize, gain: f64, floor: f64) -> Option<usize> {
    let n = ps.len();
    if n < 2 * min_len {
        return None;
    }
    let single = quad_sse(ps);
    if single <= floor {
        return None;
    }
    let (k, two) = (min_len..=n - min_len)
        .map(|k| (k, quad_sse(&ps[..k]) + linear_sse(&ps[k..])))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    (two < (1.0 - gain) * single).then_some(k)
}

fn build_segment(
    track: &EntityTrack,
    frames: &[u64],
    saturated: [bool; 2],
    x_override: Option<AxisFit>,
    y_override: Option<AxisFit>,
) -> MotionSegment {
    let xs: Vec<f64> = frames.iter().map(|f| track.samples[f].x).collect();
    let ys: Vec<f64> = frames.iter().map(|f| track.samples[f].y).collect();
    MotionSegment {
        track_id: track.track_id,
        t0: frames[0],
        t1: frames[frames.len() - 1] + 1,
        x: x_override.unwrap_or_else(|| fit_axis(frames, &xs)),
        y: y_override.unwrap_or_else(|| fit_axis(frames, &ys)),
        saturated,
        animation: track.samples[&frames[0]].signature.clone(),
    }
}

/// The accelerating piece's fit, re-expressed over the whole segment, with
/// the joint RMSE of the accelerate-then-coast model.
fn saturated_fit(frames: &[u64], ps: &[f64], k: usize) -> AxisFit {
    let head = fit_axis(&frames[..k], &ps[..k]);
    let sse = quad_sse(&ps[..k]) + linear_sse(&ps[k..]);
    AxisFit {
        rmse: (sse / ps.len() as f64).sqrt(),
        ..head
    }
}

fn segment_run(track: &EntityTrack, frames: &[u64], beta: f64, cfg: &SegmentConfig) -> Vec<MotionSegment> {
    let xs: Vec<f64> = frames.iter().map(|f| track.samples[f].x).collect();
    let ys: Vec<f64> = frames.iter().map(|f| track.samples[f].y).collect();
    let bounds = segment_series(&xs, &ys, beta, cfg.min_len);
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    // merge an accelerating piece into a following coasting piece at the
    // velocity it reached: that is a capped velocity, not a new dynamic
    for (a, b) in bounds {
        if let Some(&(pa, pb)) = pieces.last() {
            if is_ramp_then_cap(&frames[pa..pb], &xs[pa..pb], &ys[pa..pb], &frames[a..b], &xs[a..b], &ys[a..b]) {
                *pieces.last_mut().expect("non-empty") = (pa, b);
                continue;
            }
        }
        pieces.push((a, b));
    }
    pieces
        .into_iter()
        .map(|(a, b)| {
            let fr = &frames[a..b];
            let mut sat = [false; 2];
            let mut fits = [None, None];
            for (axis, ps) in [&xs[a..b], &ys[a..b]].into_iter().enumerate() {
                if let Some(k) = saturation_split(ps, cfg.min_len, cfg.saturation_gain, beta) {
                    sat[axis] = true;
                    fits[axis] = Some(saturated_fit(fr, ps, k));
                }
            }
            build_segment(track, fr, sat, fits[0], fits[1])
        })
        .collect()
}

fn is_ramp_then_cap(f1: &[u64], x1: &[f64], y1: &[f64], f2: &[u64], x2: &[f64], y2: &[f64]) -> bool {
    let (ax1, ay1) = (fit_axis(f1, x1), fit_axis(f1, y1));
    let (ax2, ay2) = (fit_axis(f2, x2), fit_axis(f2, y2));
    let ramp_x = ax1.a.abs() > ACCEL_EPS && ay1.a.abs() <= ACCEL_EPS;
    let ramp_y = ay1.a.abs() > ACCEL_EPS && ax1.a.abs() <= ACCEL_EPS;
    let (r1, other1, r2, other2) = if ramp_x {
        (ax1, ay1, ax2, ay2)
    } else if ramp_y {
        (ay1, ax1, ay2, ax2)
    } else {
        return false;
    };
    let coasting = r2.a.abs() <= ACCEL_EPS && other2.a.abs() <= ACCEL_EPS;
    let end_v = r1.velocity_at((f1.len() - 1) as f64);
    let toward_cap = r2.v.abs() > 1e-6 && r2.v.signum() == r1.a.signum();
    let reached = (end_v - r2.v).abs() <= 2.0 * r1.a.abs() + 0.05 * r2.v.abs();
    let other_same = (other1.v - other2.v).abs() <= 0.05 + 0.05 * other2.v.abs();
    coasting && toward_cap && reached && other_same
}

/// Segments every sufficiently long animation run of `track`.
pub fn segment_track(track: &EntityTrack, cfg: &SegmentConfig) -> Vec<MotionSegment> {
    let beta = cfg.penalty.unwrap_or_else(|| default_penalty(track));
    animation_runs(track)
        .iter()
        .filter(|r| r.len() >= cfg.min_len.max(3))
        .flat_map(|r| segment_run(track, r, beta, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpArc {
    pub track_id: usize,
    /// Last frame before the ascent.
    pub launch_frame: u64,
    /// First frame after the descent.
    pub land_frame: u64,
    pub height: f64,
    pub hang_frames: u64,
    pub hang_time: f64,
    pub ascent_accel: f64,
    pub descent_accel: f64,
    pub asymmetry: f64,
}

/// Medians over all arcs, plus the arcs themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMetrics {
    pub height: f64,
    pub hang_frames: f64,
    pub hang_time: f64,
    pub ascent_accel: f64,
    pub descent_accel: f64,
    pub asymmetry: f64,
    pub arcs: Vec<JumpArc>,
}

/// Vertical accelerations below this are not gravity.
const GRAVITY_MIN: f64 = 0.05;

/// Finds rising arcs (upward velocity, downward acceleration) directly
/// followed by a falling segment of the same track. Up is negative y.
pub fn jump_metrics(segments: &[MotionSegment], fps: u32) -> Result<JumpMetrics, PhysicsError> {
    let mut arcs = Vec::new();
    for (asc, desc) in segments.iter().zip(segments.iter().skip(1)) {
        if asc.track_id != desc.track_id || desc.t0 > asc.t1 + 1 {
            continue;
        }
        let (ya, yd) = (&asc.y, &desc.y);
        if ya.a <= GRAVITY_MIN || yd.a <= GRAVITY_MIN || ya.v >= 0.0 {
            continue;
        }
        if yd.velocity_at((desc.len() - 1) as f64) <= 0.0 {
            continue;
        }
        let launch = ya.at(-1.0);
        let apex_tau = (-ya.v / ya.a).clamp(0.0, asc.len() as f64);
        let height = launch - ya.at(apex_tau);
        let launch_frame = asc.t0 - 1;
        let hang_frames = desc.t1 - launch_frame;
        arcs.push(JumpArc {
            track_id: asc.track_id,
            launch_frame,
            land_frame: desc.t1,
            height,
            hang_frames,
            hang_time: hang_frames as f64 / f64::from(fps.max(1)),
            ascent_accel: ya.a,
            descent_accel: yd.a,
            asymmetry: yd.a / ya.a,
        });
    }
    if arcs.is_empty() {
        return Err(PhysicsError::NoJump);
    }
    let med = |f: fn(&JumpArc) -> f64| median(&mut arcs.iter().map(f).collect::<Vec<_>>());
    Ok(JumpMetrics {
        height: med(|a| a.height),
        hang_frames: med(|a| a.hang_frames as f64),
        hang_time: med(|a| a.hang_time),
        ascent_accel: med(|a| a.ascent_accel),
        descent_accel: med(|a| a.descent_accel),
        asymmetry: med(|a| a.asymmetry),
        arcs,
    })
}
