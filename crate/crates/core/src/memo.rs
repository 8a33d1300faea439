//! The two caches that keep black-box work to a minimum.
//!
//! [`SolutionTrie`] remembers the exact cost and arrival epoch of every
//! evaluated tour prefix. [`BoundIntervalTree`] remembers relaxed bounds per
//! ordered body pair, keyed by the departure window they were computed for.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::diagram::{ArcOracle, ExactLeg};
use crate::transfer::{TransferModel, TransferResult};
use crate::{BodyId, EARTH};

pub type TrieKey = u32;
pub const TRIE_ROOT: TrieKey = 0;
const NO_PARENT: u32 = u32::MAX;

/// Optimal wait, travel and cost of one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub tau: f64,
    pub t: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
struct TrieNode {
    label: BodyId,
    parent: u32,
    leg: Leg,
    path_cost: f64,
    est: f64,
    children: BTreeMap<BodyId, TrieKey>,
}

/// Prefix tree over evaluated tours. Each node is one prefix; its cost and
/// arrival epoch are exact, so a prefix is evaluated at most once.
#[derive(Debug, Clone)]
pub struct SolutionTrie {
    nodes: Vec<TrieNode>,
    multi: u32,
    evaluations: u64,
}

impl SolutionTrie {
    pub fn new(multi: u32) -> Self {
        let root = TrieNode {
            label: EARTH,
            parent: NO_PARENT,
            leg: Leg { tau: 0.0, t: 0.0, z: 0.0 },
            path_cost: 0.0,
            est: 0.0,
            children: BTreeMap::new(),
        };
        Self { nodes: vec![root], multi: multi.max(1), evaluations: 0 }
    }

    pub fn multi(&self) -> u32 {
        self.multi
    }

    /// Number of stored prefixes, the Earth-only root included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Black-box calls issued by this trie so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn label(&self, key: TrieKey) -> BodyId {
        self.nodes[key as usize].label
    }

    pub fn parent(&self, key: TrieKey) -> Option<TrieKey> {
        let p = self.nodes[key as usize].parent;
        (p != NO_PARENT).then_some(p)
    }

    pub fn leg(&self, key: TrieKey) -> Leg {
        self.nodes[key as usize].leg
    }

    /// Exact cost of the prefix ending at `key`.
    pub fn path_cost(&self, key: TrieKey) -> f64 {
        self.nodes[key as usize].path_cost
    }

    /// Arrival epoch at the last body of the prefix, days.
    pub fn est(&self, key: TrieKey) -> f64 {
        self.nodes[key as usize].est
    }

    pub fn find_child(&self, key: TrieKey, next: BodyId) -> Option<TrieKey> {
        self.nodes[key as usize].children.get(&next).copied()
    }

    /// The body sequence of a prefix, Earth first.
    pub fn sequence(&self, key: TrieKey) -> Vec<BodyId> {
        let mut seq = Vec::new();
        let mut k = key;
        loop {
            seq.push(self.label(k));
            match self.parent(k) {
                Some(p) => k = p,
                None => break,
            }
        }
        seq.reverse();
        seq
    }

    pub fn lookup(&self, sequence: &[BodyId]) -> Option<TrieKey> {
        if sequence.first() != Some(&EARTH) {
            return None;
        }
        sequence[1..].iter().try_fold(TRIE_ROOT, |k, &b| self.find_child(k, b))
    }

    /// Extends `key` by `next`, calling the black box only if the prefix is new.
    /// Returns the child key and whether a call was made.
    pub fn child(&mut self, model: &TransferModel, key: TrieKey, next: BodyId) -> (TrieKey, bool) {
        if let Some(c) = self.find_child(key, next) {
            return (c, false);
        }
        let parent = &self.nodes[key as usize];
        let (leg, called) = if parent.path_cost.is_finite() {
            let q = model.query(parent.label, next, parent.est).multi(self.multi);
            let r = model.black_box(&q).unwrap_or(TransferResult::INFEASIBLE);
            self.evaluations += 1;
            (Leg { tau: r.tau, t: r.t, z: r.z }, true)
        } else {
            (Leg { tau: 0.0, t: 0.0, z: f64::INFINITY }, false)
        };
        let path_cost = parent.path_cost + leg.z;
        let est = if path_cost.is_finite() { parent.est + leg.tau + leg.t } else { f64::INFINITY };
        let id = self.nodes.len() as TrieKey;
        self.nodes.push(TrieNode { label: next, parent: key, leg, path_cost, est, children: BTreeMap::new() });
        self.nodes[key as usize].children.insert(next, id);
        (id, called)
    }

    /// Exact cost and arrival epoch of an Earth-first sequence, extending the
    /// trie where needed.
    pub fn evaluate(&mut self, model: &TransferModel, sequence: &[BodyId]) -> (f64, f64) {
        assert_eq!(sequence.first(), Some(&EARTH), "sequences start at Earth");
        let mut key = TRIE_ROOT;
        for &b in &sequence[1..] {
            key = self.child(model, key, b).0;
            if !self.path_cost(key).is_finite() {
                return (f64::INFINITY, f64::INFINITY);
            }
        }
        (self.path_cost(key), self.est(key))
    }
}

#[derive(Debug, Clone)]
struct ItNode {
    lo: f64,
    hi: f64,
    z: f64,
    left: u32,
    right: u32,
    height: u32,
    min_lo: f64,
    max_hi: f64,
    max_z: f64,
}

const NIL: u32 = u32::MAX;

/// AVL tree of `[lo, hi] -> z` entries ordered by `lo`, answering "largest `z`
/// among stored intervals that contain the query".
///
/// Every node carries the minimum start, maximum end and maximum value of its
/// subtree, which lets a query skip whole subtrees.
#[derive(Debug, Clone)]
pub struct BoundIntervalTree {
    nodes: Vec<ItNode>,
    root: u32,
}

impl Default for BoundIntervalTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BoundIntervalTree {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), root: NIL }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.nodes.iter().map(|n| (n.lo, n.hi, n.z))
    }

    fn height(&self, i: u32) -> u32 {
        if i == NIL {
            0
        } else {
            self.nodes[i as usize].height
        }
    }

    fn pull(&mut self, i: u32) {
        let (l, r) = (self.nodes[i as usize].left, self.nodes[i as usize].right);
        let mut h = 0;
        let n = &self.nodes[i as usize];
        let (mut min_lo, mut max_hi, mut max_z) = (n.lo, n.hi, n.z);
        for c in [l, r] {
            if c != NIL {
                let cn = &self.nodes[c as usize];
                h = h.max(cn.height);
                min_lo = min_lo.min(cn.min_lo);
                max_hi = max_hi.max(cn.max_hi);
                max_z = max_z.max(cn.max_z);
            }
        }
        let n = &mut self.nodes[i as usize];
        n.height = h + 1;
        n.min_lo = min_lo;
        n.max_hi = max_hi;
        n.max_z = max_z;
    }

    fn rotate_right(&mut self, i: u32) -> u32 {
        let l = self.nodes[i as usize].left;
        self.nodes[i as usize].left = self.nodes[l as usize].right;
        self.nodes[l as usize].right = i;
        self.pull(i);
        self.pull(l);
        l
    }

    fn rotate_left(&mut self, i: u32) -> u32 {
        let r = self.nodes[i as usize].right;
        self.nodes[i as usize].right = self.nodes[r as usize].left;
        self.nodes[r as usize].left = i;
        self.pull(i);
        self.pull(r);
        r
    }

    fn balance(&mut self, i: u32) -> u32 {
        self.pull(i);
        let (l, r) = (self.nodes[i as usize].left, self.nodes[i as usize].right);
        let bf = self.height(l) as i64 - self.height(r) as i64;
        if bf > 1 {
            let ll = self.nodes[l as usize].left;
            let lr = self.nodes[l as usize].right;
            if self.height(lr) > self.height(ll) {
                let nl = self.rotate_left(l);
                self.nodes[i as usize].left = nl;
            }
            return self.rotate_right(i);
        }
        if bf < -1 {
            let rl = self.nodes[r as usize].left;
            let rr = self.nodes[r as usize].right;
            if self.height(rl) > self.height(rr) {
                let nr = self.rotate_right(r);
                self.nodes[i as usize].right = nr;
            }
            return self.rotate_left(i);
        }
        i
    }

    fn insert_at(&mut self, at: u32, new: u32) -> u32 {
        if at == NIL {
            return new;
        }
        let key_new = (self.nodes[new as usize].lo, self.nodes[new as usize].hi);
        let key_at = (self.nodes[at as usize].lo, self.nodes[at as usize].hi);
        // ties go right so equal keys keep insertion order
        if key_new < key_at {
            let l = self.insert_at(self.nodes[at as usize].left, new);
            self.nodes[at as usize].left = l;
        } else {
            let r = self.insert_at(self.nodes[at as usize].right, new);
            self.nodes[at as usize].right = r;
        }
        self.balance(at)
    }

    /// Stores `z` as a bound valid for departures in `[lo, hi]`.
    /// Empty intervals and non-finite values are ignored.
    pub fn insert(&mut self, lo: f64, hi: f64, z: f64) -> bool {
        if !(lo <= hi && z.is_finite() && lo.is_finite() && hi.is_finite()) {
            return false;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(ItNode {
            lo,
            hi,
            z,
            left: NIL,
            right: NIL,
            height: 1,
            min_lo: lo,
            max_hi: hi,
            max_z: z,
        });
        self.root = self.insert_at(self.root, id);
        true
    }

    /// Largest stored `z` whose interval contains `[lo, hi]`.
    pub fn query(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut best = None;
        self.query_at(self.root, lo, hi, &mut best);
        best
    }

    fn query_at(&self, at: u32, lo: f64, hi: f64, best: &mut Option<f64>) {
        if at == NIL {
            return;
        }
        let n = &self.nodes[at as usize];
        if n.min_lo > lo || n.max_hi < hi || best.is_some_and(|b| n.max_z <= b) {
            return;
        }
        if n.lo <= lo && n.hi >= hi && best.map_or(true, |b| n.z > b) {
            *best = Some(n.z);
        }
        self.query_at(n.left, lo, hi, best);
        if n.lo <= lo {
            self.query_at(n.right, lo, hi, best);
        }
    }

    /// Verifies ordering, balance and the subtree summaries.
    pub fn check_invariants(&self) -> bool {
        self.check_at(self.root).is_some()
    }

    fn check_at(&self, at: u32) -> Option<(u32, f64, f64, f64)> {
        if at == NIL {
            return Some((0, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY));
        }
        let n = &self.nodes[at as usize];
        let (hl, minl, maxl, zl) = self.check_at(n.left)?;
        let (hr, minr, maxr, zr) = self.check_at(n.right)?;
        if hl.abs_diff(hr) > 1 || n.height != hl.max(hr) + 1 {
            return None;
        }
        if n.left != NIL && (self.nodes[n.left as usize].lo, self.nodes[n.left as usize].hi) > (n.lo, n.hi) {
            return None;
        }
        if n.right != NIL && (self.nodes[n.right as usize].lo, self.nodes[n.right as usize].hi) < (n.lo, n.hi) {
            return None;
        }
        let min_lo = n.lo.min(minl).min(minr);
        let max_hi = n.hi.max(maxl).max(maxr);
        let max_z = n.z.max(zl).max(zr);
        if min_lo != n.min_lo || max_hi != n.max_hi || max_z != n.max_z {
            return None;
        }
        Some((n.height, min_lo, max_hi, max_z))
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a memo snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(&'static str),
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"PNBMEMO\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Both caches of a run.
#[derive(Debug, Clone)]
pub struct BoundMemo {
    pub trie: SolutionTrie,
    bounds: BTreeMap<(BodyId, BodyId), BoundIntervalTree>,
}

impl BoundMemo {
    pub fn new(multi: u32) -> Self {
        Self { trie: SolutionTrie::new(multi), bounds: BTreeMap::new() }
    }

    pub fn bounds_insert(&mut self, pair: (BodyId, BodyId), lo: f64, hi: f64, z: f64) -> bool {
        self.bounds.entry(pair).or_default().insert(lo, hi, z)
    }

    pub fn bounds_query(&self, pair: (BodyId, BodyId), lo: f64, hi: f64) -> Option<f64> {
        self.bounds.get(&pair)?.query(lo, hi)
    }

    pub fn bound_entries(&self) -> usize {
        self.bounds.values().map(BoundIntervalTree::len).sum()
    }

    /// Writes both caches as a versioned, length-prefixed little-endian record stream.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), SnapshotError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.trie.multi.to_le_bytes())?;
        w.write_all(&(self.trie.nodes.len() as u64).to_le_bytes())?;
        for n in &self.trie.nodes {
            let mut rec = Vec::with_capacity(48);
            rec.extend_from_slice(&(n.label as u32).to_le_bytes());
            rec.extend_from_slice(&n.parent.to_le_bytes());
            for v in [n.leg.tau, n.leg.t, n.leg.z, n.path_cost, n.est] {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            write_record(&mut w, &rec)?;
        }
        w.write_all(&(self.bounds.len() as u64).to_le_bytes())?;
        for (&(a, b), tree) in &self.bounds {
            w.write_all(&(a as u32).to_le_bytes())?;
            w.write_all(&(b as u32).to_le_bytes())?;
            w.write_all(&(tree.len() as u64).to_le_bytes())?;
            for (lo, hi, z) in tree.entries() {
                let mut rec = Vec::with_capacity(24);
                for v in [lo, hi, z] {
                    rec.extend_from_slice(&v.to_le_bytes());
                }
                write_record(&mut w, &rec)?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, SnapshotError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version(version));
        }
        let multi = read_u32(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut nodes: Vec<TrieNode> = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let rec = read_record(&mut r)?;
            if rec.len() != 48 {
                return Err(SnapshotError::Corrupt("trie record length"));
            }
            let u = |o: usize| u32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
            let label = u(0) as BodyId;
            let parent = u(4);
            if (i == 0) != (parent == NO_PARENT) || (parent != NO_PARENT && parent as usize >= i) {
                return Err(SnapshotError::Corrupt("trie parent link"));
            }
            nodes.push(TrieNode {
                label,
                parent,
                leg: Leg { tau: f(8), t: f(16), z: f(24) },
                path_cost: f(32),
                est: f(40),
                children: BTreeMap::new(),
            });
            if parent != NO_PARENT {
                nodes[parent as usize].children.insert(label, i as TrieKey);
            }
        }
        if nodes.is_empty() {
            return Err(SnapshotError::Corrupt("missing trie root"));
        }
        let pairs = read_u64(&mut r)?;
        let mut bounds = BTreeMap::new();
        for _ in 0..pairs {
            let a = read_u32(&mut r)? as BodyId;
            let b = read_u32(&mut r)? as BodyId;
            let entries = read_u64(&mut r)?;
            let mut tree = BoundIntervalTree::new();
            for _ in 0..entries {
                let rec = read_record(&mut r)?;
                if rec.len() != 24 {
                    return Err(SnapshotError::Corrupt("interval record length"));
                }
                let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
                tree.insert(f(0), f(8), f(16));
            }
            bounds.insert((a, b), tree);
        }
        Ok(Self { trie: SolutionTrie { nodes, multi, evaluations: 0 }, bounds })
    }
}

fn write_record<W: Write>(w: &mut W, rec: &[u8]) -> io::Result<()> {
    w.write_all(&(rec.len() as u32).to_le_bytes())?;
    w.write_all(rec)
}

fn read_record<R: Read>(r: &mut R) -> Result<Vec<u8>, SnapshotError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(SnapshotError::Corrupt("record too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl ArcOracle for BoundMemo {
    fn known_leg(&self, prefix: TrieKey, next: BodyId) -> Option<ExactLeg> {
        let k = self.trie.find_child(prefix, next)?;
        Some(ExactLeg { cost: self.trie.leg(k).z, arrival: self.trie.est(k), key: k })
    }

    fn stored_bound(&self, from: BodyId, to: BodyId, lo: f64, hi: f64) -> Option<f64> {
        self.bounds_query((from, to), lo, hi)
    }
}
