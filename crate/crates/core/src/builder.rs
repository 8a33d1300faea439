//! Construction of the initial relaxed diagram.
//!
//! 1. Structure: `n` nodes per inner layer, arcs between differently labelled
//!    nodes of consecutive layers.
//! 2. Phase one: exact root legs; one relaxed bound per ordered asteroid pair
//!    over a window covering every layer.
//! 3. A nearest-neighbour tour provides the first incumbent.
//! 4. Phase two: a single top-down sweep re-bounding every inner arc over the
//!    departure window that can still lead to an improving tour.

use std::time::Instant;

use thiserror::Error;

use crate::diagram::{ArcId, Diagram, ExactLeg, NodeId, TERMINAL_LABEL};
use crate::instance::Tour;
use crate::memo::{BoundMemo, TRIE_ROOT};
use crate::orbital;
use crate::transfer::{TransferModel, MIN_TRAVEL};
use crate::{BodyId, EARTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("the diagram needs at least two asteroids (got {0})")]
    TooSmall(usize),
    #[error("at most {max} asteroids are supported (got {got})")]
    TooLarge { got: usize, max: usize },
}

/// How phase two picks the departure window of an inner arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseTwoMode {
    /// Windows derived from the incumbent; hopeless arcs are pruned unevaluated.
    #[default]
    Incumbent,
    /// Horizon-only windows; every arc is evaluated.
    Naive,
    /// Phase two is not run.
    Skip,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BuildReport {
    /// Exact root legs (full black box through the trie).
    pub root_calls: u64,
    /// Relaxed pair bounds of phase one.
    pub phase1_relaxed_calls: u64,
    /// `root_calls + phase1_relaxed_calls`.
    pub phase1_calls: u64,
    pub phase2_calls: u64,
    /// Inner arcs of phase two dropped without evaluation.
    pub phase2_pruned: u64,
    /// Full black-box calls spent on the nearest-neighbour tour.
    pub nn_calls: u64,
    pub phase_one_lb: f64,
    pub initial_lb: f64,
    pub initial_ub: f64,
    pub nn_tour: Tour,
    pub wall_seconds: f64,
}

/// Unweighted structure: root, `n` inner layers of `n` nodes, terminal.
pub fn build_structure(n: usize, tau_max: f64, t_max: f64) -> Result<Diagram, BuildError> {
    if n < 2 {
        return Err(BuildError::TooSmall(n));
    }
    if n > crate::diagram::MAX_ASTEROIDS {
        return Err(BuildError::TooLarge { got: n, max: crate::diagram::MAX_ASTEROIDS });
    }
    let mut d = Diagram::new(n, tau_max, t_max);
    let mut prev = vec![d.root()];
    for layer in 1..=n {
        let cur: Vec<NodeId> = (1..=n).map(|l| d.add_node(layer, l)).collect();
        for &p in &prev {
            for &c in &cur {
                if d.node(p).label != d.node(c).label {
                    d.add_arc(p, c, 0.0, (0.0, f64::INFINITY));
                }
            }
        }
        prev = cur;
    }
    let t = d.terminal();
    for p in prev {
        d.add_arc(p, t, 0.0, (0.0, f64::INFINITY));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseOneReport {
    pub root_calls: u64,
    pub relaxed_calls: u64,
}

/// Exact root legs, then one relaxed bound per ordered pair.
///
/// The pair window starts at the earliest epoch any node with that label can
/// be reached: the exact layer-1 arrival, or one day after some other
/// layer-1 arrival.
pub fn weight_phase_one(d: &mut Diagram, model: &TransferModel, memo: &mut BoundMemo) -> PhaseOneReport {
    let n = d.n();
    let mut report = PhaseOneReport::default();
    let root = d.root();
    let mut est1 = vec![f64::INFINITY; n + 1];
    for a in d.node(root).out_arcs.clone() {
        let label = d.arc(a).label;
        let (key, called) = memo.trie.child(model, TRIE_ROOT, label);
        report.root_calls += u64::from(called);
        let cost = memo.trie.leg(key).z;
        if cost.is_finite() {
            let arrival = memo.trie.est(key);
            est1[label] = arrival;
            d.set_leg(a, ExactLeg { cost, arrival, key });
        } else {
            d.remove_arc(a);
        }
    }

    let span = n as f64 * (d.tau_max() + d.t_max()) - d.t_max();
    let mut table = vec![vec![None::<(f64, (f64, f64))>; n + 1]; n + 1];
    for a in 1..=n {
        let others = (1..=n).filter(|&b| b != a).map(|b| est1[b] + MIN_TRAVEL);
        let eta = others.fold(est1[a], f64::min);
        if !eta.is_finite() {
            continue;
        }
        for b in (1..=n).filter(|&b| b != a) {
            let q = model.query(a, b, eta).relaxed(span).multi(memo.trie.multi());
            let r = model.black_box_relaxed(&q).expect("valid relaxed query");
            report.relaxed_calls += 1;
            if r.feasible {
                memo.bounds_insert((a, b), eta, eta + span, r.z);
                table[a][b] = Some((r.z, (eta, eta + span)));
            }
        }
    }

    let arcs: Vec<ArcId> = d.arc_ids().collect();
    for a in arcs {
        let arc = d.arc(a);
        if arc.from == root || arc.label == TERMINAL_LABEL {
            continue;
        }
        let from = d.node(arc.from).label;
        match table[from][arc.label] {
            Some((z, window)) => d.set_bound(a, z, window),
            None => d.remove_arc(a),
        }
    }
    d.filter(f64::INFINITY);
    report
}

/// Greedy tour: from the current body, go to the unvisited body that is
/// closest in space at the current arrival epoch (ties to the lower index).
/// Returns the tour, its exact cost and the number of new black-box calls.
pub fn nearest_neighbor_tour(model: &TransferModel, memo: &mut BoundMemo) -> (Tour, f64, u64) {
    let n = model.asteroid_count();
    let bodies = model.bodies();
    let mut seq = vec![EARTH];
    let mut visited = vec![false; n + 1];
    visited[EARTH] = true;
    let mut key = TRIE_ROOT;
    let mut epoch = 0.0;
    let mut calls = 0;
    for _ in 0..n {
        let cur = *seq.last().unwrap();
        let here = orbital::propagate(&bodies[cur], epoch).map(|s| s.position);
        let mut best: Option<(f64, BodyId)> = None;
        for b in (1..=n).filter(|&b| !visited[b]) {
            let dist = match (&here, orbital::propagate(&bodies[b], epoch)) {
                (Ok(p), Ok(s)) => orbital::norm(&orbital::sub(&s.position, p)),
                _ => f64::INFINITY,
            };
            if best.map_or(true, |(bd, _)| dist < bd) {
                best = Some((dist, b));
            }
        }
        let (_, next) = best.expect("an unvisited body remains");
        visited[next] = true;
        seq.push(next);
        let (child, called) = memo.trie.child(model, key, next);
        calls += u64::from(called);
        key = child;
        if memo.trie.est(key).is_finite() {
            epoch = memo.trie.est(key);
        }
    }
    let cost = memo.trie.path_cost(key);
    (Tour(seq), cost, calls)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTwoReport {
    pub calls: u64,
    pub pruned: u64,
}

/// One top-down sweep over layers `1..n`, re-bounding every arc into the
/// next inner layer. `z_down` of each layer is refreshed before its arcs are
/// processed; `z_up` keeps its phase-one values until the sweep ends.
///
/// Must run on the unsplit structure (one node per label per layer).
pub fn weight_phase_two(
    d: &mut Diagram,
    model: &TransferModel,
    memo: &mut BoundMemo,
    incumbent: f64,
    mode: PhaseTwoMode,
) -> PhaseTwoReport {
    let n = d.n();
    let mut report = PhaseTwoReport::default();
    if mode == PhaseTwoMode::Skip {
        return report;
    }
    let horizon = d.tau_max() + d.t_max();
    for i in 1..n {
        d.purge();
        d.recompute_down_to(i).expect("purged diagram is connected");
        let by_label = |d: &Diagram, layer: usize| {
            let mut v = vec![None; n + 1];
            for &u in d.layer(layer) {
                v[d.node(u).label] = Some(u);
            }
            v
        };
        let here = by_label(d, i);
        for a_label in 1..=n {
            for b_label in (1..=n).filter(|&b| b != a_label) {
                let arc = here[a_label].and_then(|u| {
                    d.node(u).out_arcs.iter().copied().find(|&a| d.arc(a).label == b_label)
                });
                let Some(arc) = arc else {
                    report.pruned += 1;
                    continue;
                };
                let window = match mode {
                    PhaseTwoMode::Naive => {
                        let lo = d.node(d.arc(arc).from).est;
                        Some((lo, lo + i as f64 * horizon + d.tau_max()))
                    }
                    _ => d.departure_window(arc, incumbent),
                };
                let Some((lo, hi)) = window else {
                    d.remove_arc(arc);
                    report.pruned += 1;
                    continue;
                };
                let q = model.query(a_label, b_label, lo).relaxed(hi - lo).multi(memo.trie.multi());
                let r = model.black_box_relaxed(&q).expect("valid relaxed query");
                report.calls += 1;
                if r.feasible {
                    memo.bounds_insert((a_label, b_label), lo, hi, r.z);
                    let old = d.arc(arc).bound;
                    d.set_bound(arc, old.max(r.z), (lo, hi));
                } else {
                    d.remove_arc(arc);
                }
            }
        }
    }
    d.filter(incumbent);
    report
}

/// Structure, phase one, nearest-neighbour incumbent and phase two.
pub fn build_initial(
    model: &TransferModel,
    memo: &mut BoundMemo,
    mode: PhaseTwoMode,
) -> Result<(Diagram, BuildReport), BuildError> {
    let start = Instant::now();
    let n = model.asteroid_count();
    let mut d = build_structure(n, model.tau_max(), model.t_max())?;
    let p1 = weight_phase_one(&mut d, model, memo);
    let phase_one_lb = d.v_star();
    let (nn_tour, ub, nn_calls) = nearest_neighbor_tour(model, memo);
    let p2 = weight_phase_two(&mut d, model, memo, ub, mode);
    d.filter(ub);
    let lb = if d.is_empty() { ub } else { d.v_star().min(ub) };
    let report = BuildReport {
        root_calls: p1.root_calls,
        phase1_relaxed_calls: p1.relaxed_calls,
        phase1_calls: p1.root_calls + p1.relaxed_calls,
        phase2_calls: p2.calls,
        phase2_pruned: p2.pruned,
        nn_calls,
        phase_one_lb: phase_one_lb.min(ub),
        initial_lb: lb,
        initial_ub: ub,
        nn_tour,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "construction: phase1={} phase2={} pruned={} lb={} ub={} in {:.2}s",
        report.phase1_calls,
        report.phase2_calls,
        report.phase2_pruned,
        report.initial_lb,
        report.initial_ub,
        report.wall_seconds
    );
    Ok((d, report))
}

/// Largest `x` in `[lo, hi]` (to within `tol`) with `f(x) > target`, for a
/// non-increasing `f`. `None` when already `f(lo) <= target`.
pub fn bisect_threshold<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    target: f64,
    tol: f64,
    max_steps: usize,
) -> Option<f64> {
    if f(lo) <= target {
        return None;
    }
    if f(hi) > target {
        return Some(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..max_steps {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if f(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(a)
}

pub const EST_TOLERANCE: f64 = 1e-3;
pub const EST_MAX_STEPS: usize = 40;

/// Raises the earliest-start floor of inexact nodes that hang off a single
/// exact parent: any arrival sooner than the returned threshold would make
/// the leg alone too expensive to beat `incumbent`. Returns the number of
/// nodes whose floor moved.
pub fn est_eat_refine(d: &mut Diagram, model: &TransferModel, memo: &BoundMemo, incumbent: f64) -> usize {
    if !incumbent.is_finite() {
        return 0;
    }
    let mut updated = 0;
    let full = model.tau_max() + model.t_max();
    let candidates: Vec<NodeId> = (1..=d.n()).flat_map(|l| d.layer(l).to_vec()).collect();
    for v in candidates {
        let node = d.node(v);
        if node.exact || node.in_arcs.len() != 1 {
            continue;
        }
        let arc = d.arc(node.in_arcs[0]);
        let p = d.node(arc.from);
        if !p.exact {
            continue;
        }
        let target = incumbent - p.z_down - node.z_up;
        let (from, to, eta) = (p.label, node.label, p.est);
        let multi = memo.trie.multi();
        let theta = bisect_threshold(
            |theta| {
                let q = model.query(from, to, eta).capped(theta).multi(multi);
                model.black_box_capped(&q).map_or(f64::INFINITY, |r| r.z)
            },
            MIN_TRAVEL,
            full,
            target,
            EST_TOLERANCE,
            EST_MAX_STEPS,
        );
        if let Some(theta) = theta {
            let floor = eta + theta;
            if floor > d.node(v).est {
                d.set_est_hint(v, floor);
                updated += 1;
            }
        }
    }
    if updated > 0 {
        d.recompute_bounds().expect("connected diagram");
    }
    updated
}
