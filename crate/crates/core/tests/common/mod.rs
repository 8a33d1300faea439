#![allow(dead_code)]

use pnb_core::{evaluate_tour, SolutionTrie, Tour, TransferModel};

/// All orderings of `1..=n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut (1..=n).collect(), &mut Vec::new(), &mut out);
    out
}

pub fn with_earth(p: &[usize]) -> Tour {
    let mut s = vec![0];
    s.extend_from_slice(p);
    Tour(s)
}

/// Exhaustive optimum on a private trie. Ties keep the first permutation.
pub fn brute_force(model: &TransferModel, multi: u32) -> (Tour, f64) {
    let mut trie = SolutionTrie::new(multi);
    let mut best = (Tour(vec![]), f64::INFINITY);
    for p in permutations(model.asteroid_count()) {
        let tour = with_earth(&p);
        let c = evaluate_tour(model, &tour, &mut trie).unwrap();
        if c < best.1 {
            best = (tour, c);
        }
    }
    best
}

/// Cost of every permutation, on a private trie.
pub fn all_costs(model: &TransferModel, multi: u32) -> Vec<(Vec<usize>, f64)> {
    let mut trie = SolutionTrie::new(multi);
    permutations(model.asteroid_count())
        .into_iter()
        .map(|p| {
            let c = evaluate_tour(model, &with_earth(&p), &mut trie).unwrap();
            (p, c)
        })
        .collect()
}
