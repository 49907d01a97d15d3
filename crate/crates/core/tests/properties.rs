use std::collections::BTreeSet;

use agdl_core::fsm::cluster_states;
use agdl_core::physics::{segment_series, segmentation_objective, AxisFit, MotionSegment};
use agdl_core::pipeline::{learn, LearnerConfig};
use agdl_core::toysim::{random_walk_inputs, simulate, GroundTruthDesign};
use agdl_core::trace::{EntityObservation, Frame, InputState, TileCell, Trace, TraceHeader};
use agdl_core::tracker::{track, TrackerConfig};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.1 + 0.2),
        Just(-0.0),
    ]
}

fn observation() -> impl Strategy<Value = EntityObservation> {
    ("[a-z0-9_]{1,8}", finite(), finite(), 1u32..64, 1u32..64, any::<bool>(), any::<bool>()).prop_map(
        |(sig, x, y, w, h, hf, vf)| {
            let mut o = EntityObservation::new(sig, x, y, w, h);
            o.hflip = hf;
            o.vflip = vf;
            o
        },
    )
}

fn frames() -> impl Strategy<Value = Vec<Frame>> {
    prop::collection::vec(
        (
            (finite(), finite()),
            0u8..128,
            prop::collection::vec(observation(), 0..4),
            "[0-9a-f]{0,6}",
            prop::option::of(prop::collection::vec((0u32..40, 0u32..30, 0u32..9), 0..6)),
        ),
        1..12,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (camera, bits, entities, sig, tiles))| {
                let mut input = InputState::NONE;
                for b in agdl_core::trace::Button::ALL {
                    if bits & (1 << (b as u8)) != 0 {
                        input.press(b);
                    }
                }
                Frame {
                    index: i as u64 + 7,
                    camera,
                    input,
                    entities,
                    tilemap_sig: sig,
                    tile_patch: tiles.map(|t| t.into_iter().map(|(col, row, id)| TileCell { col, row, id }).collect()),
                }
            })
            .collect()
    })
}

/// Minimum objective over every segmentation into pieces of at least
/// `min_len` samples, by enumeration.
fn brute_force(xs: &[f64], ys: &[f64], beta: f64, min_len: usize) -> f64 {
    fn rec(xs: &[f64], ys: &[f64], beta: f64, min_len: usize, start: usize, acc: &mut Vec<(usize, usize)>) -> f64 {
        let n = xs.len();
        if start == n {
            return segmentation_objective(xs, ys, acc, beta);
        }
        let mut best = f64::INFINITY;
        for end in start + min_len..=n {
            if end != n && n - end < min_len {
                continue;
            }
            acc.push((start, end));
            best = best.min(rec(xs, ys, beta, min_len, end, acc));
            acc.pop();
        }
        best
    }
    rec(xs, ys, beta, min_len, 0, &mut Vec::new())
}

fn segment(id: usize, ax: f64, ay: f64, vx: f64, sat: bool, anim: &str) -> MotionSegment {
    MotionSegment {
        track_id: id,
        t0: id as u64 * 20,
        t1: id as u64 * 20 + 10,
        x: AxisFit { p0: 0.0, v: vx, a: ax, rmse: 0.0 },
        y: AxisFit { p0: 0.0, v: 0.0, a: ay, rmse: 0.0 },
        saturated: [sat, false],
        animation: anim.into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn trace_jsonl_round_trip(frames in frames(), fps in 1u32..240, ts in 1u32..32) {
        let mut header = TraceHeader::new("prop", fps, ts);
        header.meta.insert("game".into(), "g".into());
        let trace = Trace::new(header, frames).unwrap();
        let text = trace.to_jsonl();
        let back = Trace::from_jsonl(&text).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn dp_matches_brute_force(
        xs in prop::collection::vec(-20.0f64..20.0, 6..15),
        noise in prop::collection::vec(-1.0f64..1.0, 15),
        beta in 0.01f64..30.0,
        min_len in 3usize..5,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.3 * x * x + e).collect();
        let bounds = segment_series(&xs, &ys, beta, min_len);
        prop_assert_eq!(bounds.first().map(|b| b.0), Some(0));
        prop_assert_eq!(bounds.last().map(|b| b.1), Some(xs.len()));
        prop_assert!(bounds.iter().all(|&(a, b)| b - a >= min_len));
        let dp = segmentation_objective(&xs, &ys, &bounds, beta);
        let opt = brute_force(&xs, &ys, beta, min_len);
        prop_assert!(dp <= opt + 1e-7 * (1.0 + opt.abs()), "dp {} > brute force {}", dp, opt);
    }

    #[test]
    fn segment_count_is_monotone_in_penalty(
        xs in prop::collection::vec(-20.0f64..20.0, 10..60),
        b1 in 0.001f64..50.0,
        b2 in 0.001f64..50.0,
    ) {
        let ys = vec![0.0; xs.len()];
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let k_lo = segment_series(&xs, &ys, lo, 3).len();
        let k_hi = segment_series(&xs, &ys, hi, 3).len();
        prop_assert!(k_hi <= k_lo, "beta {} -> {} segments, beta {} -> {}", lo, k_lo, hi, k_hi);
    }

    #[test]
    fn fewer_states_at_larger_eps(
        specs in prop::collection::vec((0usize..4, 0usize..4, any::<bool>(), 0usize..2), 1..14),
        e1 in 0.0f64..0.6,
        e2 in 0.0f64..0.6,
    ) {
        let accels = [0.0, 0.1, 0.2, 0.5];
        let segs: Vec<MotionSegment> = specs
            .iter()
            .enumerate()
            .map(|(i, &(ax, ay, sat, anim))| {
                segment(i, accels[ax], accels[ay], 0.0, sat, ["a", "b"][anim])
            })
            .collect();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let n_lo = cluster_states(&segs, lo).len();
        let n_hi = cluster_states(&segs, hi).len();
        prop_assert!(n_hi <= n_lo);
        // every segment belongs to exactly one state
        let mut members: Vec<_> = cluster_states(&segs, hi).into_iter().flat_map(|s| s.members).collect();
        members.sort();
        members.dedup();
        prop_assert_eq!(members.len(), segs.len());
    }

    #[test]
    fn tracks_partition_observations(
        paths in prop::collection::vec((0.0f64..200.0, prop::collection::vec(-1.5f64..1.5, 40)), 1..4),
    ) {
        let frames: Vec<Frame> = (0..40)
            .map(|t| {
                let entities = paths
                    .iter()
                    .enumerate()
                    .map(|(k, (x0, steps))| {
                        let x = x0 + steps[..t].iter().sum::<f64>();
                        EntityObservation::new(format!("e{k}"), x, 40.0 * k as f64, 16, 24)
                    })
                    .collect();
                Frame {
                    index: t as u64,
                    camera: (0.0, 0.0),
                    input: InputState::NONE,
                    entities,
                    tilemap_sig: "r".into(),
                    tile_patch: None,
                }
            })
            .collect();
        let trace = Trace::new(TraceHeader::new("prop", 60, 8), frames).unwrap();
        let tracks = track(&trace, &TrackerConfig::for_tile_size(8));
        let mut seen = BTreeSet::new();
        for tr in &tracks {
            for (&f, s) in &tr.samples {
                prop_assert!(seen.insert((f, s.signature.clone())), "observation in two tracks");
            }
        }
        prop_assert_eq!(seen.len(), 40 * paths.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(4) })]

    #[test]
    fn mined_rules_meet_thresholds(seed in 0u64..1000) {
        let design = GroundTruthDesign::default_platformer();
        let trace = simulate(&design, &random_walk_inputs(seed, 600), seed).unwrap();
        let cfg = LearnerConfig::default();
        let model = learn(std::slice::from_ref(&trace), &cfg).unwrap();
        for r in &model.collision_rules {
            prop_assert!(r.precision >= cfg.min_precision && r.precision <= 1.0, "{}", r);
            prop_assert!(r.support >= cfg.min_support, "{}", r);
        }
        for fsm in model.characters.values() {
            prop_assert!(fsm.check().is_ok());
            for t in &fsm.transitions {
                prop_assert!(t.low_confidence || t.precision >= cfg.min_precision);
            }
        }
    }

    #[test]
    fn learn_is_deterministic(seed in 0u64..1000) {
        let design = GroundTruthDesign::default_platformer();
        let traces: Vec<Trace> = (0..2)
            .map(|k| simulate(&design, &random_walk_inputs(seed + k, 400), seed).unwrap())
            .collect();
        let cfg = LearnerConfig::default();
        let a = learn(&traces, &cfg).unwrap().to_json();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| learn(&traces, &cfg)).unwrap().to_json();
        prop_assert_eq!(a, b);
    }
}
