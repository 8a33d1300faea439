//! The Peel-and-Bound outer loop.
//!
//! A queue holds relaxed diagrams that partition the unexplored tours. Each
//! iteration takes one diagram, peels off the paths through an exact node on
//! its shortest path, re-queues the remainder if it can still beat the
//! incumbent, searches the peeled part for better tours, and, unless that
//! search was exhaustive, refines the peeled part and re-queues it too.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::{self, BuildError, BuildReport, PhaseTwoMode};
use crate::diagram::{Diagram, NodeId, TERMINAL_LABEL, TOLERANCE};
use crate::instance::Tour;
use crate::memo::BoundMemo;
use crate::search::{self, SearchOutcome};
use crate::transfer::{CallCounts, TransferModel};
use crate::EARTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PeelStrategy {
    /// First node below the fixed prefix on the shortest path.
    #[default]
    Maximal,
    /// Deepest exact node on the shortest path.
    LastExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QueueOrder {
    /// Smallest dual bound first, oldest on ties.
    #[default]
    WorstBound,
    /// Longest fixed prefix first, smallest bound on ties.
    Dfs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dd_width: usize,
    pub search_width: usize,
    pub multi: u32,
    pub peel: PeelStrategy,
    pub queue: QueueOrder,
    pub time_limit: Option<f64>,
    pub enable_est_eat: bool,
    pub tolerance: f64,
    pub phase_two: PhaseTwoMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dd_width: 2048,
            search_width: 400,
            multi: 1,
            peel: PeelStrategy::Maximal,
            queue: QueueOrder::WorstBound,
            time_limit: None,
            enable_est_eat: false,
            tolerance: TOLERANCE,
            phase_two: PhaseTwoMode::Incumbent,
        }
    }
}

impl Serialize for PhaseTwoMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            PhaseTwoMode::Incumbent => "incumbent",
            PhaseTwoMode::Naive => "naive",
            PhaseTwoMode::Skip => "skip",
        })
    }
}

impl<'de> Deserialize<'de> for PhaseTwoMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "incumbent" => Ok(PhaseTwoMode::Incumbent),
            "naive" => Ok(PhaseTwoMode::Naive),
            "skip" => Ok(PhaseTwoMode::Skip),
            other => Err(serde::de::Error::custom(format!("unknown phase-two mode `{other}`"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// One bound-trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_wall: f64,
    pub iteration: u64,
    pub lb: f64,
    pub ub: f64,
    pub queue_len: usize,
    pub b_calls: u64,
    pub bprime_calls: u64,
    pub btilde_calls: u64,
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub diagram: Diagram,
    pub v_star: f64,
    pub depth: usize,
    order: u64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub tour: Tour,
    pub cost: f64,
    pub lb: f64,
    pub proven_optimal: bool,
    pub timed_out: bool,
    pub iterations: u64,
    pub queue_remaining: usize,
    pub trace: Vec<TraceEvent>,
    pub build: Option<BuildReport>,
    pub counts: CallCounts,
    /// Relaxed calls made after construction finished.
    pub post_build_relaxed_calls: u64,
    pub searches: u64,
    /// Largest number of new black-box calls made by a single search.
    pub max_search_evaluations: u64,
    pub wall_seconds: f64,
}

/// What one loop iteration did; useful to observe the queue from tests.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub peeled: Option<NodeId>,
    pub search: Option<SearchOutcome>,
    pub requeued_rest: bool,
    pub requeued_peeled: bool,
    pub improved: bool,
}

pub struct PeelAndBound<'m> {
    model: &'m TransferModel,
    config: SolverConfig,
    memo: BoundMemo,
    queue: Vec<QueueEntry>,
    next_order: u64,
    tour: Tour,
    ub: f64,
    lb: f64,
    trace: Vec<TraceEvent>,
    start: Instant,
    iterations: u64,
    build: Option<BuildReport>,
    relaxed_after_build: u64,
    searches: u64,
    max_search_evaluations: u64,
    timed_out: bool,
}

impl<'m> PeelAndBound<'m> {
    /// Builds the initial diagram and incumbent.
    pub fn new(model: &'m TransferModel, config: SolverConfig) -> Result<Self, SolveError> {
        if config.dd_width == 0 || config.search_width == 0 {
            return Err(SolveError::Config("widths must be at least 1"));
        }
        if config.multi == 0 {
            return Err(SolveError::Config("multi must be at least 1"));
        }
        let start = Instant::now();
        let mut memo = BoundMemo::new(config.multi);
        let n = model.asteroid_count();
        let mut pnb = Self {
            model,
            config,
            memo: BoundMemo::new(1),
            queue: Vec::new(),
            next_order: 0,
            tour: Tour(vec![EARTH]),
            ub: f64::INFINITY,
            lb: f64::NEG_INFINITY,
            trace: Vec::new(),
            start,
            iterations: 0,
            build: None,
            relaxed_after_build: 0,
            searches: 0,
            max_search_evaluations: 0,
            timed_out: false,
        };
        if n == 0 {
            return Err(SolveError::Build(BuildError::TooSmall(0)));
        }
        if n == 1 {
            let (cost, _) = memo.trie.evaluate(model, &[EARTH, 1]);
            pnb.tour = Tour(vec![EARTH, 1]);
            pnb.ub = cost;
        } else {
            let (d, report) = builder::build_initial(model, &mut memo, pnb.config.phase_two)?;
            pnb.tour = report.nn_tour.clone();
            pnb.ub = report.initial_ub;
            pnb.build = Some(report);
            pnb.push(d);
        }
        pnb.relaxed_after_build = model.counts().b_relaxed;
        pnb.memo = memo;
        pnb.record(true);
        Ok(pnb)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn queue(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn memo(&self) -> &BoundMemo {
        &self.memo
    }

    pub fn incumbent(&self) -> (&Tour, f64) {
        (&self.tour, self.ub)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lb
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn build_report(&self) -> Option<&BuildReport> {
        self.build.as_ref()
    }

    fn push(&mut self, d: Diagram) -> bool {
        if d.is_empty() || d.v_star() >= self.ub - self.config.tolerance {
            return false;
        }
        let entry = QueueEntry { v_star: d.v_star(), depth: d.depth(), diagram: d, order: self.next_order };
        self.next_order += 1;
        self.queue.push(entry);
        true
    }

    fn offer(&mut self, tour: Tour, cost: f64) -> bool {
        if cost < self.ub - self.config.tolerance {
            log::debug!("incumbent {} -> {} ({})", self.ub, cost, tour);
            self.ub = cost;
            self.tour = tour;
            true
        } else {
            false
        }
    }

    fn deadline(&self) -> Option<Instant> {
        self.config.time_limit.map(|s| self.start + Duration::from_secs_f64(s.max(0.0)))
    }

    fn record(&mut self, force: bool) {
        let tol = self.config.tolerance;
        self.queue.retain(|e| e.v_star < self.ub - tol);
        let raw = self.queue.iter().map(|e| e.v_star).fold(self.ub, f64::min);
        if raw < self.lb - tol {
            log::debug!("raw lower bound fell from {} to {}", self.lb, raw);
        }
        let lb = self.lb.max(raw).min(self.ub);
        let changed = self.trace.last().map_or(true, |t| t.lb != lb || t.ub != self.ub);
        self.lb = lb;
        if force || changed {
            let c = self.model.counts();
            self.trace.push(TraceEvent {
                t_wall: self.start.elapsed().as_secs_f64(),
                iteration: self.iterations,
                lb,
                ub: self.ub,
                queue_len: self.queue.len(),
                b_calls: c.b,
                bprime_calls: c.b_relaxed,
                btilde_calls: c.b_capped,
            });
        }
    }

    fn select(&self) -> Option<usize> {
        let key = |e: &QueueEntry| (e.v_star, e.order);
        match self.config.queue {
            QueueOrder::WorstBound => (0..self.queue.len()).min_by(|&a, &b| {
                let (ka, kb) = (key(&self.queue[a]), key(&self.queue[b]));
                ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1))
            }),
            QueueOrder::Dfs => (0..self.queue.len()).min_by(|&a, &b| {
                let (ea, eb) = (&self.queue[a], &self.queue[b]);
                eb.depth
                    .cmp(&ea.depth)
                    .then(ea.v_star.total_cmp(&eb.v_star))
                    .then(ea.order.cmp(&eb.order))
            }),
        }
    }

    /// Makes every arc out of the prefix end exact (full black box via the trie).
    fn exactify_frontier(&mut self, d: &mut Diagram) {
        let chain = d.prefix_chain();
        let end = *chain.last().unwrap();
        let Some(prefix) = d.node(end).prefix else { return };
        let mut changed = false;
        for a in d.node(end).out_arcs.clone() {
            let arc = d.arc(a);
            if arc.leg.is_some() || arc.label == TERMINAL_LABEL {
                continue;
            }
            let (key, _) = self.memo.trie.child(self.model, prefix, arc.label);
            d.set_leg(
                a,
                crate::diagram::ExactLeg {
                    cost: self.memo.trie.leg(key).z,
                    arrival: self.memo.trie.est(key),
                    key,
                },
            );
            changed = true;
        }
        if changed {
            d.filter(self.ub);
        }
    }

    /// Runs one iteration. Returns `None` when the queue is empty or time is up.
    pub fn step(&mut self) -> Option<StepReport> {
        if self.deadline().is_some_and(|d| Instant::now() >= d) {
            self.timed_out = !self.queue.is_empty();
            return None;
        }
        self.queue.retain(|e| e.v_star < self.ub - self.config.tolerance);
        let idx = self.select()?;
        let entry = self.queue.swap_remove(idx);
        self.iterations += 1;
        let mut report = StepReport::default();
        let d = entry.diagram;

        let Some(u) = select_exact_node(&d, self.config.peel) else {
            log::warn!("queued diagram without an exact node on its shortest path; dropping it");
            self.record(false);
            return Some(report);
        };
        let (mut peeled, rest) = d.peel(u, self.ub).expect("selected node is exact");
        report.peeled = Some(u);
        report.requeued_rest = self.push(rest);

        self.exactify_frontier(&mut peeled);
        if self.config.enable_est_eat {
            builder::est_eat_refine(&mut peeled, self.model, &self.memo, self.ub);
            peeled.filter(self.ub);
        }
        let found = search::embedded_search(&peeled, self.config.search_width, self.model, &mut self.memo);
        self.searches += 1;
        self.max_search_evaluations = self.max_search_evaluations.max(found.evaluations);
        if let Some((tour, cost)) = found.best.clone() {
            report.improved |= self.offer(tour, cost);
        }
        let exhaustive = found.exhaustive;
        report.search = Some(found);
        if !exhaustive {
            peeled.filter(self.ub);
            let out = peeled.refine(&self.memo, self.ub, self.config.dd_width, self.deadline());
            if let Some((labels, _)) = out.tour {
                let mut seq = vec![EARTH];
                seq.extend(labels);
                if let Some(key) = self.memo.trie.lookup(&seq) {
                    let cost = self.memo.trie.path_cost(key);
                    report.improved |= self.offer(Tour(seq), cost);
                }
                peeled.filter(self.ub);
            }
            report.requeued_peeled = self.push(peeled);
        }
        self.record(false);
        Some(report)
    }

    /// Iterates until the queue is empty or the time limit passes.
    pub fn run(mut self) -> SolveOutcome {
        while self.step().is_some() {}
        self.finish()
    }

    pub fn finish(mut self) -> SolveOutcome {
        self.record(false);
        let counts = self.model.counts();
        let proven = self.queue.is_empty();
        if proven && self.lb < self.ub {
            self.lb = self.ub;
            self.record(false);
        }
        if !proven && self.trace.last().map_or(true, |t| t.queue_len != self.queue.len()) {
            self.record(true);
        }
        SolveOutcome {
            tour: self.tour,
            cost: self.ub,
            lb: self.lb,
            proven_optimal: proven,
            timed_out: self.timed_out,
            iterations: self.iterations,
            queue_remaining: self.queue.len(),
            trace: self.trace,
            build: self.build,
            counts,
            post_build_relaxed_calls: counts.b_relaxed - self.relaxed_after_build,
            searches: self.searches,
            max_search_evaluations: self.max_search_evaluations,
            wall_seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// Picks the peel node on the shortest path: the first node below the fixed
/// prefix (`Maximal`) or the deepest exact one (`LastExact`). Only exact nodes
/// are returned.
pub fn select_exact_node(d: &Diagram, strategy: PeelStrategy) -> Option<NodeId> {
    let path = d.shortest_path()?;
    let inner = &path[1..path.len() - 1];
    let pick = match strategy {
        PeelStrategy::Maximal => inner.get(d.depth()).copied(),
        PeelStrategy::LastExact => inner.iter().rev().copied().find(|&u| d.node(u).exact),
    }?;
    (d.node(pick).exact && d.node(pick).layer > d.depth()).then_some(pick)
}

/// Convenience wrapper: build, loop, return.
pub fn peel_and_bound(model: &TransferModel, config: SolverConfig) -> Result<SolveOutcome, SolveError> {
    Ok(PeelAndBound::new(model, config)?.run())
}

