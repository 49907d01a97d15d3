use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FsmModel, Guard};

/// Largest model (in states) compared by exhaustive mapping search.
pub const MAX_EXHAUSTIVE_STATES: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("model has {0} states, more than {MAX_EXHAUSTIVE_STATES} for exhaustive matching")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmMatch {
    /// Truth state for each learned state, if mapped.
    pub mapping: Vec<Option<usize>>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

type Edge = (usize, Vec<Guard>, usize);

fn edges(m: &FsmModel) -> BTreeSet<Edge> {
    m.transitions
        .iter()
        .map(|t| {
            let mut g = t.guards.clone();
            g.sort();
            g.dedup();
            (t.from, g, t.to)
        })
        .collect()
}

fn score(learned: &BTreeSet<Edge>, truth: &BTreeSet<Edge>, mapping: &[Option<usize>]) -> (f64, f64, f64) {
    let mapped: BTreeSet<Edge> = learned
        .iter()
        .filter_map(|(a, g, b)| Some((mapping[*a]?, g.clone(), mapping[*b]?)))
        .collect();
    let tp = mapped.intersection(truth).count() as f64;
    let p = if learned.is_empty() { 0.0 } else { tp / learned.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Visits every injective map from `0..k` into `0..n`.
fn for_each_injection(k: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(k: usize, n: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, n, cur, used, f);
                cur.pop();
                used[j] = false;
            }
        }
    }
    rec(k, n, &mut Vec::with_capacity(k), &mut vec![false; n], f);
}

/// Mapped pairs whose animation sets intersect.
fn shared_animations(learned: &FsmModel, truth: &FsmModel, mapping: &[Option<usize>]) -> usize {
    mapping
        .iter()
        .enumerate()
        .filter(|(l, t)| {
            t.is_some_and(|t| !learned.states[*l].animations.is_disjoint(&truth.states[t].animations))
        })
        .count()
}

/// Finds the injective state correspondence maximising transition F1.
/// Transitions match when endpoints map and guard sets are equal. Among
/// equal F1, mappings pairing more states with a shared animation win, then
/// the first in lexicographic order.
pub fn match_fsm(learned: &FsmModel, truth: &FsmModel) -> Result<FsmMatch, MatchError> {
    let (nl, nt) = (learned.states.len(), truth.states.len());
    for n in [nl, nt] {
        if n > MAX_EXHAUSTIVE_STATES {
            return Err(MatchError::TooLarge(n));
        }
    }
    let (le, te) = (edges(learned), edges(truth));
    let mut best: Option<(f64, f64, f64, usize, Vec<Option<usize>>)> = None;
    let mut consider = |mapping: Vec<Option<usize>>| {
        let (p, r, f1) = score(&le, &te, &mapping);
        let shared = shared_animations(learned, truth, &mapping);
        let better = match &best {
            None => true,
            Some(b) => f1 > b.2 + 1e-12 || (f1 > b.2 - 1e-12 && shared > b.3),
        };
        if better {
            best = Some((p, r, f1, shared, mapping));
        }
    };
    if nl <= nt {
        for_each_injection(nl, nt, &mut |m| consider(m.iter().map(|&j| Some(j)).collect()));
    } else {
        for_each_injection(nt, nl, &mut |m| {
            let mut mapping = vec![None; nl];
            for (t, &l) in m.iter().enumerate() {
                mapping[l] = Some(t);
            }
            consider(mapping);
        });
    }
    let (precision, recall, f1, _, mapping) = best.expect("at least the empty injection is visited");
    Ok(FsmMatch {
        mapping,
        precision,
        recall,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::{CharacterState, Transition};
    use crate::geom::Axis;
    use crate::trace::Button;

    fn model(n: usize, edges: &[(usize, Guard, usize)]) -> FsmModel {
        FsmModel {
            class_signatures: BTreeSet::new(),
            states: (0..n)
                .map(|i| CharacterState {
                    state_id: i,
                    name: format!("s{i}"),
                    ax: 0.0,
                    ay: 0.0,
                    saturation: [0.0; 2],
                    animations: BTreeSet::new(),
                    members: vec![],
                })
                .collect(),
            transitions: edges
                .iter()
                .map(|(a, g, b)| Transition {
                    from: *a,
                    to: *b,
                    guards: vec![g.clone()],
                    support: 1,
                    precision: 1.0,
                    low_confidence: false,
                })
                .collect(),
        }
    }

    fn press(b: Button) -> Guard {
        Guard::ButtonPressed { button: b }
    }

    fn six_edges() -> Vec<(usize, Guard, usize)> {
        vec![
            (0, press(Button::A), 2),
            (1, press(Button::A), 2),
            (0, press(Button::R), 1),
            (1, Guard::ButtonReleased { button: Button::R }, 0),
            (2, Guard::VelocityZero { axis: Axis::Y }, 3),
            (3, press(Button::B), 0),
        ]
    }

    #[test]
    fn identical_models_score_one() {
        let m = model(4, &six_edges());
        let r = match_fsm(&m, &m).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.mapping, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn missing_transition_f1() {
        let truth = model(4, &six_edges());
        let learned = model(4, &six_edges()[..5]);
        let r = match_fsm(&learned, &truth).unwrap();
        assert!((r.f1 - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn permuted_states_are_recovered() {
        let perm = [2, 0, 3, 1];
        let truth = model(4, &six_edges());
        let learned = model(
            4,
            &six_edges()
                .into_iter()
                .map(|(a, g, b)| (perm[a], g, perm[b]))
                .collect::<Vec<_>>(),
        );
        let r = match_fsm(&learned, &truth).unwrap();
        assert_eq!(r.f1, 1.0);
        for (t, &l) in perm.iter().enumerate() {
            assert_eq!(r.mapping[l], Some(t));
        }
    }

    #[test]
    fn extra_learned_state_is_unmapped() {
        let truth = model(2, &[(0, press(Button::A), 1)]);
        let learned = model(3, &[(0, press(Button::A), 1), (1, press(Button::B), 2)]);
        let r = match_fsm(&learned, &truth).unwrap();
        assert!((r.precision - 0.5).abs() < 1e-12);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn animation_breaks_f1_ties() {
        let truth = model(2, &[]);
        let mut learned = model(1, &[]);
        learned.states[0].animations.insert("fall".into());
        let mut truth2 = truth.clone();
        truth2.states[1].animations.insert("fall".into());
        assert_eq!(match_fsm(&learned, &truth).unwrap().mapping, vec![Some(0)]);
        assert_eq!(match_fsm(&learned, &truth2).unwrap().mapping, vec![Some(1)]);
    }

    #[test]
    fn too_large() {
        let m = model(9, &[]);
        assert_eq!(match_fsm(&m, &m), Err(MatchError::TooLarge(9)));
    }
}
