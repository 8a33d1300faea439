//! Restricted beam search embedded in a relaxed diagram.
//!
//! Partial tours grow layer by layer from the diagram's fixed prefix. Each
//! partial tour tracks the relaxed node it maps to ("mirror"); its children
//! are the mirror's out-arcs whose label is still unvisited. Candidates are
//! ranked by `exact prefix cost + arc bound + z_up(head)`, only the best
//! `width` survive, and only survivors are evaluated exactly.

use crate::diagram::{Diagram, Label, NodeId, TERMINAL_LABEL};
use crate::instance::Tour;
use crate::memo::{BoundMemo, TrieKey};
use crate::transfer::TransferModel;
use crate::EARTH;

/// A partial tour of the restricted diagram.
#[derive(Debug, Clone)]
pub struct RestrictedNode {
    pub label: Label,
    /// Exact cost of the partial tour.
    pub z_down: f64,
    pub est: f64,
    pub parent: Option<usize>,
    pub mirror: NodeId,
    key: TrieKey,
    visited: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SearchOutcome {
    pub best: Option<(Tour, f64)>,
    /// No candidate was ever dropped by the width limit.
    pub exhaustive: bool,
    /// New black-box calls made by this search.
    pub evaluations: u64,
}

struct Candidate {
    bound: f64,
    label: Label,
    parent_z: f64,
    parent: usize,
    child: NodeId,
}

/// Beam search of width `width` inside `d`, evaluating legs through the trie.
pub fn embedded_search(d: &Diagram, width: usize, model: &TransferModel, memo: &mut BoundMemo) -> SearchOutcome {
    let width = width.max(1);
    let mut out = SearchOutcome { best: None, exhaustive: true, evaluations: 0 };
    if d.is_empty() {
        return out;
    }
    let chain = d.prefix_chain();
    let start = *chain.last().unwrap();
    let snode = d.node(start);
    let Some(key) = snode.prefix.filter(|_| snode.exact) else {
        // the fixed prefix must be exact
        out.exhaustive = false;
        return out;
    };
    let visited = chain.iter().fold(0u64, |m, &u| {
        let l = d.node(u).label;
        if l == EARTH {
            m
        } else {
            m | (1 << l)
        }
    });
    let mut arena = vec![RestrictedNode {
        label: snode.label,
        z_down: memo.trie.path_cost(key),
        est: memo.trie.est(key),
        parent: None,
        mirror: start,
        key,
        visited,
    }];
    let mut frontier = vec![0usize];

    for _layer in snode.layer..d.n() {
        let mut cands = Vec::new();
        for &r in &frontier {
            let rn = &arena[r];
            for &a in &d.node(rn.mirror).out_arcs {
                let arc = d.arc(a);
                if arc.label == TERMINAL_LABEL || rn.visited & (1 << arc.label) != 0 {
                    continue;
                }
                cands.push(Candidate {
                    bound: rn.z_down + arc.weight() + d.node(arc.to).z_up,
                    label: arc.label,
                    parent_z: rn.z_down,
                    parent: r,
                    child: arc.to,
                });
            }
        }
        cands.sort_by(|a, b| {
            a.bound
                .total_cmp(&b.bound)
                .then(a.label.cmp(&b.label))
                .then(a.parent_z.total_cmp(&b.parent_z))
                .then(a.parent.cmp(&b.parent))
        });
        if cands.len() > width {
            out.exhaustive = false;
            cands.truncate(width);
        }
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &arena[c.parent];
            let (pkey, pvisited) = (parent.key, parent.visited);
            let (child, called) = memo.trie.child(model, pkey, c.label);
            out.evaluations += u64::from(called);
            let z = memo.trie.path_cost(child);
            if !z.is_finite() {
                continue;
            }
            arena.push(RestrictedNode {
                label: c.label,
                z_down: z,
                est: memo.trie.est(child),
                parent: Some(c.parent),
                mirror: c.child,
                key: child,
                visited: pvisited | (1 << c.label),
            });
            next.push(arena.len() - 1);
        }
        frontier = next;
        if frontier.is_empty() {
            return out;
        }
    }

    // surviving partial tours are complete; keep those the diagram can close
    let terminal = d.terminal();
    let mut best: Option<usize> = None;
    for &r in &frontier {
        let closes = d.node(arena[r].mirror).out_arcs.iter().any(|&a| d.arc(a).to == terminal);
        if closes && best.map_or(true, |b| arena[r].z_down < arena[b].z_down) {
            best = Some(r);
        }
    }
    if let Some(b) = best {
        let seq = memo.trie.sequence(arena[b].key);
        out.best = Some((Tour(seq), arena[b].z_down));
    }
    out
}
