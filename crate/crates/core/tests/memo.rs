mod common;

use std::collections::HashSet;

use pnb_core::diagram::ArcOracle;
use pnb_core::instance::SplitMix64;
use pnb_core::memo::{SnapshotError, TRIE_ROOT};
use pnb_core::{evaluate_tour, generate, BoundIntervalTree, BoundMemo, SolutionTrie, Tour};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(f64, f64, f64),
    Query(f64, f64),
}

fn op() -> impl Strategy<Value = Op> {
    // small integer grid so ties and shared endpoints are common
    let v = || (0..40i32).prop_map(|x| x as f64 * 0.5);
    prop_oneof![
        (v(), v(), 0..20i32).prop_map(|(a, b, z)| Op::Insert(a.min(b), a.max(b), z as f64)),
        (v(), v()).prop_map(|(a, b)| Op::Query(a.min(b), a.max(b))),
    ]
}

fn brute(stored: &[(f64, f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    stored.iter().filter(|e| e.0 <= lo && e.1 >= hi).map(|e| e.2).fold(None, |m, z| Some(m.map_or(z, |m: f64| m.max(z))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn containment_query_matches_scan(ops in prop::collection::vec(op(), 1..300)) {
        let mut tree = BoundIntervalTree::new();
        let mut stored = Vec::new();
        for o in ops {
            match o {
                Op::Insert(lo, hi, z) => {
                    prop_assert!(tree.insert(lo, hi, z));
                    stored.push((lo, hi, z));
                    prop_assert!(tree.check_invariants());
                }
                Op::Query(lo, hi) => prop_assert_eq!(tree.query(lo, hi), brute(&stored, lo, hi)),
            }
        }
        prop_assert_eq!(tree.entries().collect::<Vec<_>>(), stored);
    }
}

#[test]
fn tree_rejects_degenerate_entries() {
    let mut t = BoundIntervalTree::new();
    assert!(!t.insert(2.0, 1.0, 3.0));
    assert!(!t.insert(0.0, 1.0, f64::INFINITY));
    assert!(!t.insert(f64::NAN, 1.0, 1.0));
    assert!(t.is_empty());
    assert!(t.insert(1.0, 1.0, 3.0));
    assert_eq!(t.query(1.0, 1.0), Some(3.0));
    assert_eq!(t.query(0.5, 1.0), None);
}

fn shuffled(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (1..=n).collect();
    for i in (1..p.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        p.swap(i, j);
    }
    p
}

#[test]
fn one_call_per_distinct_prefix() {
    let model = generate(5, 3).unwrap().model();
    let mut trie = SolutionTrie::new(1);
    let mut rng = SplitMix64::new(99);
    let mut prefixes = HashSet::new();
    for _ in 0..300 {
        let p = shuffled(&mut rng, 5);
        for k in 1..=p.len() {
            prefixes.insert(p[..k].to_vec());
        }
        evaluate_tour(&model, &common::with_earth(&p), &mut trie).unwrap();
        assert_eq!(model.counts().b as usize, prefixes.len());
        assert_eq!(trie.evaluations() as usize, prefixes.len());
    }
    assert_eq!(trie.len(), prefixes.len() + 1);
}

#[test]
fn trie_matches_manual_leg_chain() {
    let model = generate(4, 11).unwrap().model();
    let seq = [0, 3, 1, 4, 2];
    let mut eta = 0.0;
    let mut cost = 0.0;
    for w in seq.windows(2) {
        let r = model.black_box(&model.query(w[0], w[1], eta)).unwrap();
        cost += r.z;
        eta += r.tau + r.t;
    }
    let mut trie = SolutionTrie::new(1);
    assert_eq!(trie.evaluate(&model, &seq), (cost, eta));
    let key = trie.lookup(&seq).unwrap();
    assert_eq!(trie.sequence(key), seq.to_vec());
    assert_eq!(trie.parent(TRIE_ROOT), None);
}

#[test]
fn warm_and_cold_evaluations_agree() {
    let model = generate(5, 8).unwrap().model();
    let mut warm = SolutionTrie::new(1);
    for p in common::permutations(5).into_iter().step_by(7) {
        evaluate_tour(&model, &common::with_earth(&p), &mut warm).unwrap();
    }
    for p in common::permutations(5).into_iter().step_by(5) {
        let t = common::with_earth(&p);
        let mut cold = SolutionTrie::new(1);
        let a = evaluate_tour(&model, &t, &mut cold).unwrap();
        let b = evaluate_tour(&model, &t, &mut warm).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // re-evaluating seen tours is free
    let before = model.counts().b;
    evaluate_tour(&model, &Tour(vec![0, 1, 2, 3, 4, 5]), &mut warm).unwrap();
    evaluate_tour(&model, &Tour(vec![0, 1, 2, 3, 4, 5]), &mut warm).unwrap();
    assert!(model.counts().b - before <= 5);
    let mid = model.counts().b;
    evaluate_tour(&model, &Tour(vec![0, 1, 2, 3, 4, 5]), &mut warm).unwrap();
    assert_eq!(model.counts().b, mid);
}

#[test]
fn snapshot_round_trip() {
    let model = generate(4, 2).unwrap().model();
    let mut memo = BoundMemo::new(2);
    memo.trie.evaluate(&model, &[0, 1, 2, 3, 4]);
    memo.trie.evaluate(&model, &[0, 2, 1]);
    memo.bounds_insert((1, 2), 0.0, 100.0, 12.5);
    memo.bounds_insert((1, 2), 10.0, 20.0, 14.0);
    memo.bounds_insert((3, 1), 5.0, 6.0, 1.0);
    let mut buf = Vec::new();
    memo.save(&mut buf).unwrap();
    let back = BoundMemo::load(buf.as_slice()).unwrap();
    assert_eq!(back.trie.multi(), 2);
    assert_eq!(back.trie.len(), memo.trie.len());
    assert_eq!(back.bound_entries(), 3);
    assert_eq!(back.bounds_query((1, 2), 12.0, 15.0), Some(14.0));
    assert_eq!(back.stored_bound(1, 2, 12.0, 15.0), Some(14.0));
    assert_eq!(back.bounds_query((2, 1), 12.0, 15.0), None);
    let key = memo.trie.lookup(&[0, 1, 2, 3, 4]).unwrap();
    let bkey = back.trie.lookup(&[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(back.trie.path_cost(bkey).to_bits(), memo.trie.path_cost(key).to_bits());
    // the parent prefix is known as an exact leg
    let parent = back.trie.lookup(&[0, 1, 2, 3]).unwrap();
    let leg = back.known_leg(parent, 4).unwrap();
    assert_eq!(leg.key, bkey);

    let mut t = buf.clone();
    t[0] = b'X';
    assert!(matches!(BoundMemo::load(t.as_slice()), Err(SnapshotError::BadMagic)));
    let short = &buf[..buf.len() - 3];
    assert!(BoundMemo::load(short).is_err());
}
