//! Layered relaxed decision diagram over asteroid sequences.
//!
//! Layer 0 holds the root (Earth), layers `1..=n` hold asteroid nodes and
//! layer `n + 1` the terminal. Every root-to-terminal path spells a label
//! sequence; the diagram over-approximates the set of feasible tours that
//! extend its fixed root prefix. Arc weights are lower bounds on leg costs,
//! so the shortest path length `v*` bounds every encoded tour from below.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::memo::{TrieKey, TRIE_ROOT};
use crate::orbital::Constants;
use crate::transfer::MIN_TRAVEL;
use crate::{BodyId, EARTH};

pub type Label = BodyId;
/// Label of the terminal node and of arcs into it.
pub const TERMINAL_LABEL: Label = usize::MAX;
/// Slack used by every cost comparison against the incumbent.
pub const TOLERANCE: f64 = 1e-9;
/// Label sets are 64-bit masks with Earth as bit 0.
pub const MAX_ASTEROIDS: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArcId(pub u32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagramError {
    #[error("node {0:?} has no in-arc or no out-arc")]
    Disconnected(NodeId),
    #[error("node {0:?} is not exact")]
    NotExact(NodeId),
    #[error("node {0:?} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0:?} is the root or the terminal")]
    Boundary(NodeId),
    #[error("diagram text, line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Set of body labels as a bit mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LabelSet(pub u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    const ASTEROIDS: u64 = !1;

    pub fn single(l: Label) -> Self {
        if l == TERMINAL_LABEL {
            Self::EMPTY
        } else {
            LabelSet(1 << l)
        }
    }

    /// `{1, ..., n}`.
    pub fn asteroids(n: usize) -> Self {
        LabelSet(((1u128 << (n + 1)) - 1) as u64 & Self::ASTEROIDS)
    }

    pub fn contains(self, l: Label) -> bool {
        l != TERMINAL_LABEL && self.0 & (1 << l) != 0
    }

    pub fn with(self, l: Label) -> Self {
        LabelSet(self.0 | Self::single(l).0)
    }

    pub fn union(self, o: Self) -> Self {
        LabelSet(self.0 | o.0)
    }

    pub fn intersect(self, o: Self) -> Self {
        LabelSet(self.0 & o.0)
    }

    pub fn is_subset(self, o: Self) -> bool {
        self.0 & !o.0 == 0
    }

    /// Number of asteroid labels (Earth excluded).
    pub fn asteroid_len(self) -> usize {
        (self.0 & Self::ASTEROIDS).count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Label> {
        (0..64).filter(move |&b| self.0 & (1 << b) != 0)
    }
}

/// Exact cost of a leg leaving an exact node, as recorded in the trie.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactLeg {
    pub cost: f64,
    /// Arrival epoch at the arc's head, days.
    pub arrival: f64,
    /// Trie prefix ending at the arc's head.
    pub key: TrieKey,
}

/// Read access to cached black-box results.
pub trait ArcOracle {
    /// Exact leg from the prefix `prefix` to body `next`, if already evaluated.
    fn known_leg(&self, prefix: TrieKey, next: BodyId) -> Option<ExactLeg>;
    /// Strongest stored relaxed bound whose window contains `[lo, hi]`.
    fn stored_bound(&self, from: BodyId, to: BodyId, lo: f64, hi: f64) -> Option<f64>;
}

#[derive(Debug, Clone)]
pub struct DdNode {
    pub layer: usize,
    pub label: Label,
    pub z_down: f64,
    pub z_up: f64,
    /// Earliest arrival epoch, days. Exact for exact nodes, a floor otherwise.
    pub est: f64,
    /// Externally proven floor on `est`.
    pub est_hint: f64,
    pub all_down: LabelSet,
    pub some_down: LabelSet,
    /// Labels strictly below this node on every / some path to the terminal.
    pub all_up: LabelSet,
    pub some_up: LabelSet,
    pub exact: bool,
    /// Trie prefix of an exact node.
    pub prefix: Option<TrieKey>,
    pub in_arcs: Vec<ArcId>,
    pub out_arcs: Vec<ArcId>,
}

#[derive(Debug, Clone)]
pub struct DdArc {
    pub from: NodeId,
    pub to: NodeId,
    pub label: Label,
    /// Lower bound on the leg cost for departures inside `window`.
    pub bound: f64,
    pub window: (f64, f64),
    pub leg: Option<ExactLeg>,
}

impl DdArc {
    pub fn weight(&self) -> f64 {
        self.leg.map_or(self.bound, |l| l.cost)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RefineOutcome {
    pub splits: usize,
    /// Labels and cost of a fully exact shortest path, when one surfaced.
    pub tour: Option<(Vec<Label>, f64)>,
    pub timed_out: bool,
}

#[derive(Debug, Clone)]
pub struct Diagram {
    n: usize,
    tau_max: f64,
    t_max: f64,
    nodes: Vec<Option<DdNode>>,
    free_nodes: Vec<u32>,
    arcs: Vec<Option<DdArc>>,
    free_arcs: Vec<u32>,
    layers: Vec<Vec<NodeId>>,
    root: NodeId,
    terminal: NodeId,
    depth: usize,
}

impl Diagram {
    /// Root and terminal only.
    pub fn new(n: usize, tau_max: f64, t_max: f64) -> Self {
        assert!(n <= MAX_ASTEROIDS, "at most {MAX_ASTEROIDS} asteroids");
        let mut d = Self {
            n,
            tau_max,
            t_max,
            nodes: Vec::new(),
            free_nodes: Vec::new(),
            arcs: Vec::new(),
            free_arcs: Vec::new(),
            layers: vec![Vec::new(); n + 2],
            root: NodeId(0),
            terminal: NodeId(0),
            depth: 0,
        };
        d.root = d.add_node(0, EARTH);
        d.terminal = d.add_node(n + 1, TERMINAL_LABEL);
        d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn terminal(&self) -> NodeId {
        self.terminal
    }

    /// Layer of the deepest node of the fixed root prefix.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn node(&self, id: NodeId) -> &DdNode {
        self.nodes[id.0 as usize].as_ref().expect("live node")
    }

    pub fn arc(&self, id: ArcId) -> &DdArc {
        self.arcs[id.0 as usize].as_ref().expect("live arc")
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.get(id.0 as usize).is_some_and(Option::is_some)
    }

    pub fn layer(&self, i: usize) -> &[NodeId] {
        &self.layers[i]
    }

    pub fn width(&self, i: usize) -> usize {
        self.layers[i].len()
    }

    pub fn max_width(&self) -> usize {
        self.layers.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len() - self.free_arcs.len()
    }

    pub fn arc_ids(&self) -> impl Iterator<Item = ArcId> + '_ {
        self.arcs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_some())
            .map(|(i, _)| ArcId(i as u32))
    }

    /// Shortest root-to-terminal path length (the dual bound).
    pub fn v_star(&self) -> f64 {
        self.node(self.terminal).z_down
    }

    /// No root-to-terminal path left.
    pub fn is_empty(&self) -> bool {
        self.node(self.root).out_arcs.is_empty()
    }

    pub fn add_node(&mut self, layer: usize, label: Label) -> NodeId {
        let node = DdNode {
            layer,
            label,
            z_down: f64::INFINITY,
            z_up: f64::INFINITY,
            est: 0.0,
            est_hint: 0.0,
            all_down: LabelSet::EMPTY,
            some_down: LabelSet::EMPTY,
            all_up: LabelSet::EMPTY,
            some_up: LabelSet::EMPTY,
            exact: false,
            prefix: None,
            in_arcs: Vec::new(),
            out_arcs: Vec::new(),
        };
        let id = match self.free_nodes.pop() {
            Some(i) => {
                self.nodes[i as usize] = Some(node);
                NodeId(i)
            }
            None => {
                self.nodes.push(Some(node));
                NodeId(self.nodes.len() as u32 - 1)
            }
        };
        self.layers[layer].push(id);
        id
    }

    pub fn add_arc(&mut self, from: NodeId, to: NodeId, bound: f64, window: (f64, f64)) -> ArcId {
        let label = self.node(to).label;
        debug_assert_eq!(self.node(from).layer + 1, self.node(to).layer);
        let arc = DdArc { from, to, label, bound, window, leg: None };
        let id = match self.free_arcs.pop() {
            Some(i) => {
                self.arcs[i as usize] = Some(arc);
                ArcId(i)
            }
            None => {
                self.arcs.push(Some(arc));
                ArcId(self.arcs.len() as u32 - 1)
            }
        };
        self.node_mut(from).out_arcs.push(id);
        self.node_mut(to).in_arcs.push(id);
        id
    }

    fn node_mut(&mut self, id: NodeId) -> &mut DdNode {
        self.nodes[id.0 as usize].as_mut().expect("live node")
    }

    fn arc_mut(&mut self, id: ArcId) -> &mut DdArc {
        self.arcs[id.0 as usize].as_mut().expect("live arc")
    }

    pub fn set_bound(&mut self, a: ArcId, bound: f64, window: (f64, f64)) {
        let arc = self.arc_mut(a);
        arc.bound = bound;
        arc.window = window;
    }

    /// Records the exact cost of an arc leaving an exact node.
    pub fn set_leg(&mut self, a: ArcId, leg: ExactLeg) {
        self.arc_mut(a).leg = Some(leg);
    }

    pub fn set_est_hint(&mut self, u: NodeId, est: f64) {
        let node = self.node_mut(u);
        node.est_hint = node.est_hint.max(est);
    }

    pub fn remove_arc(&mut self, a: ArcId) {
        let Some(arc) = self.arcs[a.0 as usize].take() else { return };
        self.free_arcs.push(a.0);
        if let Some(Some(f)) = self.nodes.get_mut(arc.from.0 as usize) {
            f.out_arcs.retain(|&x| x != a);
        }
        if let Some(Some(t)) = self.nodes.get_mut(arc.to.0 as usize) {
            t.in_arcs.retain(|&x| x != a);
        }
    }

    pub fn remove_node(&mut self, u: NodeId) {
        let Some(node) = self.nodes[u.0 as usize].as_ref() else { return };
        let arcs: Vec<ArcId> = node.in_arcs.iter().chain(node.out_arcs.iter()).copied().collect();
        let layer = node.layer;
        for a in arcs {
            self.remove_arc(a);
        }
        self.nodes[u.0 as usize] = None;
        self.free_nodes.push(u.0);
        self.layers[layer].retain(|&x| x != u);
    }

    /// Removes nodes that lost every in-arc or every out-arc, cascading.
    pub fn purge(&mut self) -> usize {
        let mut removed = 0;
        let mut work: Vec<NodeId> = self.layers.iter().flatten().copied().collect();
        while let Some(u) = work.pop() {
            if u == self.root || u == self.terminal || !self.contains_node(u) {
                continue;
            }
            let node = self.node(u);
            if node.in_arcs.is_empty() || node.out_arcs.is_empty() {
                let neighbours: Vec<NodeId> = node
                    .in_arcs
                    .iter()
                    .map(|&a| self.arc(a).from)
                    .chain(node.out_arcs.iter().map(|&a| self.arc(a).to))
                    .collect();
                self.remove_node(u);
                removed += 1;
                work.extend(neighbours);
            }
        }
        removed
    }

    /// Recomputes `z_down`, `z_up`, `est`, exactness and the four label sets.
    /// Returns `v*`.
    pub fn recompute_bounds(&mut self) -> Result<f64, DiagramError> {
        for i in 0..self.layers.len() {
            for k in 0..self.layers[i].len() {
                let u = self.layers[i][k];
                self.update_down(u)?;
            }
        }
        for i in (0..self.layers.len()).rev() {
            for k in 0..self.layers[i].len() {
                let u = self.layers[i][k];
                self.update_up(u)?;
            }
        }
        Ok(self.v_star())
    }

    /// Forward pass only, up to and including layer `last`.
    pub fn recompute_down_to(&mut self, last: usize) -> Result<(), DiagramError> {
        for i in 0..=last.min(self.layers.len() - 1) {
            for k in 0..self.layers[i].len() {
                let u = self.layers[i][k];
                self.update_down(u)?;
            }
        }
        Ok(())
    }

    fn update_down(&mut self, u: NodeId) -> Result<(), DiagramError> {
        if u == self.root {
            let r = self.node_mut(u);
            r.z_down = 0.0;
            r.est = 0.0;
            r.all_down = LabelSet::single(EARTH);
            r.some_down = LabelSet::single(EARTH);
            r.exact = true;
            r.prefix = Some(TRIE_ROOT);
            return Ok(());
        }
        let node = self.node(u);
        if node.in_arcs.is_empty() {
            if u == self.terminal {
                // every path was filtered away
                let t = self.node_mut(u);
                t.z_down = f64::INFINITY;
                t.est = f64::INFINITY;
                t.all_down = LabelSet::EMPTY;
                t.some_down = LabelSet::EMPTY;
                t.exact = false;
                t.prefix = None;
                return Ok(());
            }
            return Err(DiagramError::Disconnected(u));
        }
        let label = node.label;
        let mut z_down = f64::INFINITY;
        let mut est = f64::INFINITY;
        let mut all = None::<LabelSet>;
        let mut some = LabelSet::EMPTY;
        for &a in &node.in_arcs {
            let arc = self.arc(a);
            let p = self.node(arc.from);
            z_down = z_down.min(p.z_down + arc.weight());
            est = est.min(p.est + MIN_TRAVEL);
            all = Some(all.map_or(p.all_down, |s| s.intersect(p.all_down)));
            some = some.union(p.some_down);
        }
        let mut exact = false;
        let mut prefix = None;
        if node.in_arcs.len() == 1 {
            let arc = self.arc(node.in_arcs[0]);
            let p = self.node(arc.from);
            if let (true, Some(leg)) = (p.exact, arc.leg) {
                exact = true;
                prefix = Some(leg.key);
                est = leg.arrival;
                z_down = p.z_down + leg.cost;
            }
        }
        let hint = node.est_hint;
        let n = self.node_mut(u);
        n.z_down = z_down;
        n.est = if exact { est } else { est.max(hint) };
        n.all_down = all.unwrap_or_default().with(label);
        n.some_down = some.with(label);
        n.exact = exact;
        n.prefix = prefix;
        Ok(())
    }

    fn update_up(&mut self, u: NodeId) -> Result<(), DiagramError> {
        if u == self.terminal {
            let t = self.node_mut(u);
            t.z_up = 0.0;
            t.all_up = LabelSet::EMPTY;
            t.some_up = LabelSet::EMPTY;
            return Ok(());
        }
        let node = self.node(u);
        if node.out_arcs.is_empty() {
            if u == self.root {
                let r = self.node_mut(u);
                r.z_up = f64::INFINITY;
                r.all_up = LabelSet::EMPTY;
                r.some_up = LabelSet::EMPTY;
                return Ok(());
            }
            return Err(DiagramError::Disconnected(u));
        }
        let mut z_up = f64::INFINITY;
        let mut all = None::<LabelSet>;
        let mut some = LabelSet::EMPTY;
        for &a in &node.out_arcs {
            let arc = self.arc(a);
            let c = self.node(arc.to);
            z_up = z_up.min(arc.weight() + c.z_up);
            let below = c.all_up.with(c.label);
            all = Some(all.map_or(below, |s| s.intersect(below)));
            some = some.union(c.some_up.with(c.label));
        }
        let n = self.node_mut(u);
        n.z_up = z_up;
        n.all_up = all.unwrap_or_default();
        n.some_up = some;
        Ok(())
    }

    fn label_infeasible(&self, arc: &DdArc) -> bool {
        let u = self.node(arc.from);
        let v = self.node(arc.to);
        let x = arc.label;
        if x == TERMINAL_LABEL {
            return u.some_down.asteroid_len() < self.n;
        }
        if u.all_down.contains(x) || v.all_up.contains(x) {
            return true;
        }
        if u.some_down.asteroid_len() == u.layer && u.some_down.contains(x) {
            return true;
        }
        if v.some_up.asteroid_len() == self.n - v.layer && v.some_up.contains(x) {
            return true;
        }
        u.some_down.union(v.some_up).with(x).asteroid_len() < self.n
    }

    /// Removes label-infeasible arcs, arcs and nodes whose best path through
    /// them exceeds `incumbent`, and dangling nodes, until nothing changes.
    pub fn filter(&mut self, incumbent: f64) -> usize {
        let limit = incumbent + TOLERANCE;
        let mut removed = 0;
        loop {
            removed += self.purge();
            self.recompute_bounds().expect("purged diagram is connected");
            let mut dead_arcs = Vec::new();
            for a in self.arc_ids() {
                let arc = self.arc(a);
                let w = arc.weight();
                let through = self.node(arc.from).z_down + w + self.node(arc.to).z_up;
                if !w.is_finite() || through > limit || self.label_infeasible(arc) {
                    dead_arcs.push(a);
                }
            }
            let mut dead_nodes = Vec::new();
            for &u in self.layers.iter().flatten() {
                if u == self.root || u == self.terminal {
                    continue;
                }
                let node = self.node(u);
                if node.z_down + node.z_up > limit {
                    dead_nodes.push(u);
                }
            }
            if dead_arcs.is_empty() && dead_nodes.is_empty() {
                return removed;
            }
            removed += dead_arcs.len() + dead_nodes.len();
            for a in dead_arcs {
                self.remove_arc(a);
            }
            for u in dead_nodes {
                self.remove_node(u);
            }
        }
    }

    /// Would splitting `u` on `phi` separate its in-arcs?
    pub fn split_partition(&self, u: NodeId, phi: Label) -> Option<(Vec<ArcId>, Vec<ArcId>)> {
        if u == self.root || u == self.terminal || !self.contains_node(u) {
            return None;
        }
        let (moved, kept): (Vec<ArcId>, Vec<ArcId>) = self.node(u).in_arcs.iter().partition(|&&a| {
            let arc = self.arc(a);
            phi == arc.label || self.node(arc.from).all_down.contains(phi)
        });
        (!moved.is_empty() && !kept.is_empty()).then_some((moved, kept))
    }

    /// Splits `u`: in-arcs whose tail has `phi` on every root path move to a
    /// new copy of `u`, which receives duplicates of all of `u`'s out-arcs.
    /// Filters afterwards. `None` when the split would be vacuous.
    pub fn split_node(&mut self, u: NodeId, phi: Label, incumbent: f64) -> Option<NodeId> {
        let (moved, _) = self.split_partition(u, phi)?;
        let (layer, label, hint) = {
            let node = self.node(u);
            (node.layer, node.label, node.est_hint)
        };
        let copy = self.add_node(layer, label);
        self.node_mut(copy).est_hint = hint;
        for a in moved {
            self.node_mut(u).in_arcs.retain(|&x| x != a);
            self.arc_mut(a).to = copy;
            self.node_mut(copy).in_arcs.push(a);
        }
        let outs = self.node(u).out_arcs.clone();
        for a in outs {
            let arc = self.arc(a).clone();
            let dup = self.add_arc(copy, arc.to, arc.bound, arc.window);
            if let Some(leg) = arc.leg {
                self.set_leg(dup, leg);
            }
        }
        self.filter(incumbent);
        Some(copy)
    }

    /// Splits the diagram at exact node `u` into the paths through `u` and the rest.
    pub fn peel(&self, u: NodeId, incumbent: f64) -> Result<(Diagram, Diagram), DiagramError> {
        if !self.contains_node(u) {
            return Err(DiagramError::UnknownNode(u));
        }
        if u == self.root || u == self.terminal {
            return Err(DiagramError::Boundary(u));
        }
        let node = self.node(u);
        if !node.exact {
            return Err(DiagramError::NotExact(u));
        }
        let layer = node.layer;
        let mut peeled = self.clone();
        let others: Vec<NodeId> = peeled.layers[layer].iter().copied().filter(|&x| x != u).collect();
        for x in others {
            peeled.remove_node(x);
        }
        peeled.depth = layer;
        peeled.filter(incumbent);

        let mut rest = self.clone();
        rest.remove_node(u);
        rest.filter(incumbent);
        Ok((peeled, rest))
    }

    /// Nodes of a shortest root-to-terminal path.
    pub fn shortest_path(&self) -> Option<Vec<NodeId>> {
        if self.is_empty() || !self.v_star().is_finite() {
            return None;
        }
        let mut path = vec![self.terminal];
        let mut cur = self.terminal;
        while cur != self.root {
            let node = self.node(cur);
            let best = node.in_arcs.iter().copied().min_by(|&a, &b| {
                let ka = self.node(self.arc(a).from).z_down + self.arc(a).weight();
                let kb = self.node(self.arc(b).from).z_down + self.arc(b).weight();
                ka.total_cmp(&kb).then(a.cmp(&b))
            })?;
            cur = self.arc(best).from;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    /// The chain of the fixed root prefix, root to layer `depth`.
    pub fn prefix_chain(&self) -> Vec<NodeId> {
        let mut chain = vec![self.root];
        let mut cur = self.root;
        for _ in 0..self.depth {
            match self.node(cur).out_arcs.first() {
                Some(&a) => {
                    cur = self.arc(a).to;
                    chain.push(cur);
                }
                None => break,
            }
        }
        chain
    }

    /// Every root-to-terminal path as its asteroid label sequence (a multiset,
    /// sorted). Exponential; meant for small diagrams.
    pub fn path_sequences(&self) -> Vec<Vec<Label>> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut stack = Vec::new();
        self.collect_paths(self.root, &mut stack, &mut out);
        out.sort();
        out
    }

    fn collect_paths(&self, u: NodeId, stack: &mut Vec<Label>, out: &mut Vec<Vec<Label>>) {
        if u == self.terminal {
            out.push(stack.clone());
            return;
        }
        for &a in &self.node(u).out_arcs {
            let v = self.arc(a).to;
            let pushed = v != self.terminal;
            if pushed {
                stack.push(self.node(v).label);
            }
            self.collect_paths(v, stack, out);
            if pushed {
                stack.pop();
            }
        }
    }

    /// Distinct full permutations encoded by the diagram.
    pub fn encoded_permutations(&self) -> BTreeSet<Vec<Label>> {
        let full = LabelSet::asteroids(self.n);
        self.path_sequences()
            .into_iter()
            .filter(|s| s.iter().fold(LabelSet::EMPTY, |acc, &l| acc.with(l)) == full)
            .collect()
    }

    /// Departure window `[lo, hi]` an improving path could use on arc `a`,
    /// or `None` when no departure can beat `incumbent`.
    pub fn departure_window(&self, a: ArcId, incumbent: f64) -> Option<(f64, f64)> {
        let arc = self.arc(a);
        let u = self.node(arc.from);
        let v = self.node(arc.to);
        let lo = u.est;
        let hi = if u.exact {
            let slack = Constants::days_for_cost(incumbent - u.z_down - v.z_up);
            lo + self.tau_max.min(slack)
        } else {
            let layer_cap = u.layer as f64 * (self.tau_max + self.t_max) + self.tau_max;
            let by_suffix = Constants::days_for_cost(incumbent - v.z_up);
            let by_arrival = Constants::days_for_cost(incumbent - u.z_up) + self.tau_max;
            layer_cap.min(by_suffix).min(by_arrival)
        };
        (hi >= lo).then_some((lo, hi))
    }

    /// Upgrades weights from cached results without new evaluations: arcs
    /// leaving exact nodes pick up known exact legs, the rest pick up the
    /// strongest stored bound for their current window. Arcs with an empty
    /// window are removed. Returns whether anything changed.
    pub fn tighten<O: ArcOracle + ?Sized>(&mut self, oracle: &O, incumbent: f64) -> bool {
        let mut changed = false;
        let ids: Vec<ArcId> = self.arc_ids().collect();
        let mut dead = Vec::new();
        for a in ids {
            let arc = self.arc(a);
            if arc.label == TERMINAL_LABEL || arc.leg.is_some() {
                continue;
            }
            let u = self.node(arc.from);
            if let (true, Some(prefix)) = (u.exact, u.prefix) {
                if let Some(leg) = oracle.known_leg(prefix, arc.label) {
                    self.set_leg(a, leg);
                    changed = true;
                    continue;
                }
            }
            let Some((lo, hi)) = self.departure_window(a, incumbent) else {
                dead.push(a);
                continue;
            };
            if let Some(z) = oracle.stored_bound(u.label, arc.label, lo, hi) {
                if z > arc.bound {
                    self.set_bound(a, z, (lo, hi));
                    changed = true;
                }
            }
        }
        changed |= !dead.is_empty();
        for a in dead {
            self.remove_arc(a);
        }
        changed
    }

    fn choose_split(&self, path: &[NodeId], width_cap: usize) -> Option<(NodeId, Label)> {
        let labels: Vec<Label> = path.iter().map(|&u| self.node(u).label).collect();
        // a repeated label: push it into All-down along the path until the
        // offending arc becomes label-infeasible
        for j in 1..path.len() - 1 {
            let x = labels[j];
            if let Some(i) = (1..j).find(|&i| labels[i] == x) {
                let k = (i + 1..j).find(|&k| !self.node(path[k]).all_down.contains(x))?;
                let u = path[k];
                return (self.width(k) < width_cap && self.split_partition(u, x).is_some()).then_some((u, x));
            }
        }
        // a feasible sequence: isolate the first inexact node behind its path parent
        let k = (1..path.len() - 1).find(|&k| !self.node(path[k]).exact)?;
        let u = path[k];
        if self.node(u).in_arcs.len() < 2 || self.width(k) >= width_cap {
            return None;
        }
        let parent = self.node(path[k - 1]);
        let nearest = (1..k).rev().map(|i| labels[i]);
        let rest = parent.all_down.iter().filter(|&l| l != EARTH);
        nearest
            .chain(rest)
            .find(|&phi| parent.all_down.contains(phi) && self.split_partition(u, phi).is_some())
            .map(|phi| (u, phi))
    }

    /// Strengthens the relaxation by splitting nodes on the shortest path,
    /// one split per round, until the bound reaches `incumbent`, no useful
    /// split exists, a layer hits `width_cap`, or `deadline` passes.
    pub fn refine<O: ArcOracle + ?Sized>(
        &mut self,
        oracle: &O,
        incumbent: f64,
        width_cap: usize,
        deadline: Option<Instant>,
    ) -> RefineOutcome {
        let mut out = RefineOutcome::default();
        let max_rounds = width_cap.saturating_mul(self.n + 2);
        loop {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                out.timed_out = true;
                break;
            }
            if self.tighten(oracle, incumbent) {
                self.filter(incumbent);
            }
            if self.is_empty() || self.v_star() >= incumbent - TOLERANCE {
                break;
            }
            let Some(path) = self.shortest_path() else { break };
            let last = path[path.len() - 2];
            if self.node(last).exact {
                let labels = path[1..path.len() - 1].iter().map(|&u| self.node(u).label).collect();
                out.tour = Some((labels, self.v_star()));
                break;
            }
            if out.splits >= max_rounds {
                break;
            }
            let Some((u, phi)) = self.choose_split(&path, width_cap) else { break };
            if self.split_node(u, phi, incumbent).is_none() {
                break;
            }
            out.splits += 1;
        }
        out
    }

    /// One node or arc per line; see [`Diagram::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "diagram n={} depth={} tau_max={} t_max={} root={} terminal={}",
            self.n, self.depth, self.tau_max, self.t_max, self.root.0, self.terminal.0
        );
        for &u in self.layers.iter().flatten() {
            let nd = self.node(u);
            let label = if nd.label == TERMINAL_LABEL { "T".to_string() } else { nd.label.to_string() };
            let _ = writeln!(
                s,
                "node {} layer={} label={} est_hint={} exact={} z_down={} z_up={} est={}",
                u.0, nd.layer, label, nd.est_hint, u8::from(nd.exact), nd.z_down, nd.z_up, nd.est
            );
        }
        for a in self.arc_ids() {
            let arc = self.arc(a);
            let _ = write!(
                s,
                "arc {} {} {} bound={} lo={} hi={}",
                a.0, arc.from.0, arc.to.0, arc.bound, arc.window.0, arc.window.1
            );
            if let Some(l) = arc.leg {
                let _ = write!(s, " leg_cost={} leg_arrival={} leg_key={}", l.cost, l.arrival, l.key);
            }
            s.push('\n');
        }
        s
    }

    /// Rebuilds a diagram from [`Diagram::to_text`] output, keeping ids.
    pub fn from_text(text: &str) -> Result<Diagram, DiagramError> {
        let err = |line: usize, message: &str| DiagramError::Parse { line: line + 1, message: message.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| err(0, "empty input"))?;
        let kv = |line: usize, fields: &[&str], key: &str| -> Result<String, DiagramError> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| err(line, &format!("missing `{key}`")))
        };
        fn num<T: std::str::FromStr>(s: String, line: usize) -> Result<T, DiagramError> {
            s.parse().map_err(|_| DiagramError::Parse { line: line + 1, message: format!("bad number `{s}`") })
        }
        let hf: Vec<&str> = header.split_whitespace().collect();
        if hf.first() != Some(&"diagram") {
            return Err(err(hl, "expected `diagram` header"));
        }
        let n: usize = num(kv(hl, &hf, "n")?, hl)?;
        let depth: usize = num(kv(hl, &hf, "depth")?, hl)?;
        let tau_max: f64 = num(kv(hl, &hf, "tau_max")?, hl)?;
        let t_max: f64 = num(kv(hl, &hf, "t_max")?, hl)?;
        let root: u32 = num(kv(hl, &hf, "root")?, hl)?;
        let terminal: u32 = num(kv(hl, &hf, "terminal")?, hl)?;
        if n > MAX_ASTEROIDS {
            return Err(err(hl, "too many asteroids"));
        }
        let mut d = Diagram {
            n,
            tau_max,
            t_max,
            nodes: Vec::new(),
            free_nodes: Vec::new(),
            arcs: Vec::new(),
            free_arcs: Vec::new(),
            layers: vec![Vec::new(); n + 2],
            root: NodeId(root),
            terminal: NodeId(terminal),
            depth,
        };
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("node") => {
                    let id: u32 = num(f.get(1).ok_or_else(|| err(ln, "missing id"))?.to_string(), ln)?;
                    let layer: usize = num(kv(ln, &f, "layer")?, ln)?;
                    let label_s = kv(ln, &f, "label")?;
                    let label = if label_s == "T" { TERMINAL_LABEL } else { num(label_s, ln)? };
                    let est_hint: f64 = num(kv(ln, &f, "est_hint")?, ln)?;
                    if layer > n + 1 {
                        return Err(err(ln, "layer out of range"));
                    }
                    let idx = id as usize;
                    if d.nodes.len() <= idx {
                        d.nodes.resize(idx + 1, None);
                    }
                    if d.nodes[idx].is_some() {
                        return Err(err(ln, "duplicate node id"));
                    }
                    d.nodes[idx] = Some(DdNode {
                        layer,
                        label,
                        z_down: f64::INFINITY,
                        z_up: f64::INFINITY,
                        est: 0.0,
                        est_hint,
                        all_down: LabelSet::EMPTY,
                        some_down: LabelSet::EMPTY,
                        all_up: LabelSet::EMPTY,
                        some_up: LabelSet::EMPTY,
                        exact: false,
                        prefix: None,
                        in_arcs: Vec::new(),
                        out_arcs: Vec::new(),
                    });
                    d.layers[layer].push(NodeId(id));
                }
                Some("arc") => {
                    let get = |i: usize| -> Result<u32, DiagramError> {
                        num(f.get(i).ok_or_else(|| err(ln, "short arc line"))?.to_string(), ln)
                    };
                    let (id, from, to) = (get(1)?, NodeId(get(2)?), NodeId(get(3)?));
                    if !d.contains_node(from) || !d.contains_node(to) {
                        return Err(err(ln, "arc references unknown node"));
                    }
                    if d.node(from).layer + 1 != d.node(to).layer {
                        return Err(err(ln, "arc skips a layer"));
                    }
                    let bound: f64 = num(kv(ln, &f, "bound")?, ln)?;
                    let lo: f64 = num(kv(ln, &f, "lo")?, ln)?;
                    let hi: f64 = num(kv(ln, &f, "hi")?, ln)?;
                    let leg = match kv(ln, &f, "leg_cost") {
                        Ok(c) => Some(ExactLeg {
                            cost: num(c, ln)?,
                            arrival: num(kv(ln, &f, "leg_arrival")?, ln)?,
                            key: num(kv(ln, &f, "leg_key")?, ln)?,
                        }),
                        Err(_) => None,
                    };
                    let idx = id as usize;
                    if d.arcs.len() <= idx {
                        d.arcs.resize(idx + 1, None);
                    }
                    if d.arcs[idx].is_some() {
                        return Err(err(ln, "duplicate arc id"));
                    }
                    let label = d.node(to).label;
                    d.arcs[idx] = Some(DdArc { from, to, label, bound, window: (lo, hi), leg });
                    d.node_mut(from).out_arcs.push(ArcId(id));
                    d.node_mut(to).in_arcs.push(ArcId(id));
                }
                _ => return Err(err(ln, "expected `node` or `arc`")),
            }
        }
        if !d.contains_node(d.root) || !d.contains_node(d.terminal) {
            return Err(err(hl, "root or terminal missing"));
        }
        d.free_nodes = (0..d.nodes.len() as u32).filter(|&i| d.nodes[i as usize].is_none()).rev().collect();
        d.free_arcs = (0..d.arcs.len() as u32).filter(|&i| d.arcs[i as usize].is_none()).rev().collect();
        d.recompute_bounds()?;
        Ok(d)
    }
}
