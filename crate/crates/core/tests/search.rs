mod common;

use pnb_core::search::embedded_search;
use pnb_core::{evaluate_tour, generate, BoundMemo, Diagram, PhaseTwoMode, SolutionTrie, TransferModel};

fn peeled(n: usize, seed: u64, pick: usize) -> (TransferModel, BoundMemo, Diagram, Diagram) {
    let model = generate(n, seed).unwrap().model();
    let mut memo = BoundMemo::new(1);
    let (d, rep) = pnb_core::builder::build_initial(&model, &mut memo, PhaseTwoMode::Incumbent).unwrap();
    let layer1 = d.layer(1).to_vec();
    let u = layer1[pick % layer1.len()];
    let (p, _) = d.peel(u, rep.initial_ub.max(1e9)).unwrap();
    (model, memo, d, p)
}

fn best_encoded(model: &TransferModel, d: &Diagram) -> Option<f64> {
    let mut trie = SolutionTrie::new(1);
    d.encoded_permutations()
        .iter()
        .map(|p| evaluate_tour(model, &common::with_earth(p), &mut trie).unwrap())
        .min_by(f64::total_cmp)
}

#[test]
fn width_one_is_greedy_within_budget() {
    for seed in 1..4 {
        let (model, mut memo, _, p) = peeled(5, seed, seed as usize);
        let out = embedded_search(&p, 1, &model, &mut memo);
        assert!(out.evaluations <= 4);
        if let Some((tour, cost)) = out.best {
            tour.validate(5).unwrap();
            let mut trie = SolutionTrie::new(1);
            assert_eq!(cost.to_bits(), evaluate_tour(&model, &tour, &mut trie).unwrap().to_bits());
        }
    }
}

#[test]
fn full_width_is_exhaustive_within_diagram() {
    for (n, seed) in [(4, 2), (5, 3)] {
        let (model, mut memo, _, p) = peeled(n, seed, 0);
        let out = embedded_search(&p, 1000, &model, &mut memo);
        assert!(out.exhaustive);
        assert!(out.evaluations <= 1000 * (n as u64 - 1));
        let found = out.best.map(|b| b.1);
        assert_eq!(found, best_encoded(&model, &p));
    }
}

#[test]
fn wider_exhaustive_beam_is_never_worse() {
    let (model, mut memo, _, p) = peeled(5, 9, 2);
    let full = embedded_search(&p, 1000, &model, &mut memo).best.unwrap().1;
    for w in [1, 2, 3, 5, 8] {
        let out = embedded_search(&p, w, &model, &mut memo);
        if let Some((_, c)) = out.best {
            assert!(full <= c);
        }
        assert!(out.evaluations <= w as u64 * 4);
    }
}

#[test]
fn single_exact_path_returns_its_cost() {
    let model = generate(3, 4).unwrap().model();
    let mut memo = BoundMemo::new(1);
    let mut d = pnb_core::builder::build_structure(3, model.tau_max(), model.t_max()).unwrap();
    pnb_core::builder::weight_phase_one(&mut d, &model, &mut memo);
    // peel down to the single sequence 2, 3, 1
    let target = [2usize, 3, 1];
    let mut cur = d;
    for (i, &label) in target.iter().enumerate() {
        let u = cur.layer(i + 1).iter().copied().find(|&u| cur.node(u).label == label).unwrap();
        if !cur.node(u).exact {
            // make the frontier arc exact through the trie
            let a = cur.node(u).in_arcs[0];
            let parent = cur.arc(a).from;
            let (key, _) = memo.trie.child(&model, cur.node(parent).prefix.unwrap(), label);
            let leg = pnb_core::diagram::ExactLeg { cost: memo.trie.leg(key).z, arrival: memo.trie.est(key), key };
            cur.set_leg(a, leg);
            cur.recompute_bounds().unwrap();
        }
        cur = cur.peel(u, f64::INFINITY).unwrap().0;
    }
    assert_eq!(cur.path_sequences(), vec![target.to_vec()]);
    let out = embedded_search(&cur, 5, &model, &mut memo);
    let mut trie = SolutionTrie::new(1);
    let expect = evaluate_tour(&model, &common::with_earth(&target), &mut trie).unwrap();
    assert_eq!(out.best.unwrap().1, expect);
    assert_eq!(out.evaluations, 0);
}

#[test]
fn empty_diagram_yields_nothing() {
    let model = generate(3, 4).unwrap().model();
    let mut memo = BoundMemo::new(1);
    let mut d = pnb_core::builder::build_structure(3, model.tau_max(), model.t_max()).unwrap();
    d.filter(-1.0);
    let out = embedded_search(&d, 10, &model, &mut memo);
    assert!(out.best.is_none());
}
