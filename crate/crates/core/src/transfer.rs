//! The inner trajectory problem and its three black-box optimizers.
//!
//! * `B`: minimize `dv + rate * (tau + t)` over the full (wait, travel) box.
//! * `B'`: the wait-free relaxation `dv + rate * t` over a caller-chosen wait range.
//! * `B~`: `B` with the extra constraint `tau + t <= theta`.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::optimizer::{self, Region};
use crate::orbital::{self, BodyState, Constants, OrbitalElements};
use crate::BodyId;

/// Wait and travel bounds used when an instance does not override them (days).
pub const DEFAULT_TAU_MAX: f64 = 730.0;
pub const DEFAULT_T_MAX: f64 = 730.0;
/// Shortest admissible transfer (days).
pub const MIN_TRAVEL: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("body id {0} out of range")]
    UnknownBody(BodyId),
    #[error("a transfer needs two distinct bodies (got {0} twice)")]
    SameBody(BodyId),
    #[error("invalid transfer query: {0}")]
    InvalidQuery(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferQuery {
    pub from: BodyId,
    pub to: BodyId,
    /// Earliest departure epoch, days.
    pub eta: f64,
    pub tau_max: f64,
    pub t_max: f64,
    /// Wait bound of the wait-free relaxation, days.
    pub tau_f: Option<f64>,
    /// Cap on wait plus travel, days.
    pub theta: Option<f64>,
    pub multi: u32,
}

impl TransferQuery {
    pub fn new(from: BodyId, to: BodyId, eta: f64) -> Self {
        Self {
            from,
            to,
            eta,
            tau_max: DEFAULT_TAU_MAX,
            t_max: DEFAULT_T_MAX,
            tau_f: None,
            theta: None,
            multi: 1,
        }
    }

    pub fn with_bounds(mut self, tau_max: f64, t_max: f64) -> Self {
        self.tau_max = tau_max;
        self.t_max = t_max;
        self
    }

    pub fn relaxed(mut self, tau_f: f64) -> Self {
        self.tau_f = Some(tau_f);
        self
    }

    pub fn capped(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn multi(mut self, multi: u32) -> Self {
        self.multi = multi;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferResult {
    pub tau: f64,
    pub t: f64,
    pub z: f64,
    pub delta_v: f64,
    pub feasible: bool,
}

impl TransferResult {
    pub const INFEASIBLE: TransferResult = TransferResult {
        tau: 0.0,
        t: MIN_TRAVEL,
        z: f64::INFINITY,
        delta_v: f64::INFINITY,
        feasible: false,
    };
}

/// Snapshot of how often each black box ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CallCounts {
    pub b: u64,
    pub b_relaxed: u64,
    pub b_capped: u64,
}

/// The bodies of an instance plus evaluation counters.
///
/// All `black_box*` methods take `&self`; the counters are atomic so one
/// model can be shared across threads.
#[derive(Debug)]
pub struct TransferModel {
    bodies: Vec<OrbitalElements>,
    tau_max: f64,
    t_max: f64,
    calls_b: AtomicU64,
    calls_relaxed: AtomicU64,
    calls_capped: AtomicU64,
}

impl Clone for TransferModel {
    fn clone(&self) -> Self {
        Self {
            bodies: self.bodies.clone(),
            tau_max: self.tau_max,
            t_max: self.t_max,
            calls_b: AtomicU64::new(self.calls_b.load(Ordering::Relaxed)),
            calls_relaxed: AtomicU64::new(self.calls_relaxed.load(Ordering::Relaxed)),
            calls_capped: AtomicU64::new(self.calls_capped.load(Ordering::Relaxed)),
        }
    }
}

impl TransferModel {
    /// `bodies[0]` must be Earth.
    pub fn new(bodies: Vec<OrbitalElements>, tau_max: f64, t_max: f64) -> Self {
        Self {
            bodies,
            tau_max,
            t_max,
            calls_b: AtomicU64::new(0),
            calls_relaxed: AtomicU64::new(0),
            calls_capped: AtomicU64::new(0),
        }
    }

    /// Number of asteroids (bodies other than Earth).
    pub fn asteroid_count(&self) -> usize {
        self.bodies.len().saturating_sub(1)
    }

    pub fn bodies(&self) -> &[OrbitalElements] {
        &self.bodies
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// A query between two bodies using this model's wait and travel bounds.
    pub fn query(&self, from: BodyId, to: BodyId, eta: f64) -> TransferQuery {
        TransferQuery::new(from, to, eta).with_bounds(self.tau_max, self.t_max)
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            b: self.calls_b.load(Ordering::Relaxed),
            b_relaxed: self.calls_relaxed.load(Ordering::Relaxed),
            b_capped: self.calls_capped.load(Ordering::Relaxed),
        }
    }

    /// Impulse total and cost of one candidate (wait, travel) pair.
    ///
    /// Returns `(inf, inf)` when the Lambert problem has no solution.
    pub fn inner_cost(
        &self,
        from: BodyId,
        to: BodyId,
        eta: f64,
        tau: f64,
        t: f64,
        waiting_free: bool,
    ) -> (f64, f64) {
        let dv = self.delta_v(from, to, eta + tau, t);
        if !dv.is_finite() {
            return (f64::INFINITY, f64::INFINITY);
        }
        let z = if waiting_free {
            dv + Constants::time_cost(t)
        } else {
            dv + Constants::time_cost(tau + t)
        };
        (z, dv)
    }

    fn delta_v(&self, from: BodyId, to: BodyId, depart: f64, t: f64) -> f64 {
        match self.bodies.get(from).map(|a| orbital::propagate(a, depart)) {
            Some(Ok(s1)) => self.delta_v_from(&s1, to, depart, t),
            _ => f64::INFINITY,
        }
    }

    /// As `delta_v`, with the departure state already propagated.
    fn delta_v_from(&self, s1: &BodyState, to: BodyId, depart: f64, t: f64) -> f64 {
        let Some(Ok(s2)) = self.bodies.get(to).map(|b| orbital::propagate(b, depart + t)) else {
            return f64::INFINITY;
        };
        match orbital::lambert(&s1.position, &s2.position, t * Constants::DAY_SECONDS, true) {
            Ok(sol) => {
                let dv = orbital::norm(&orbital::sub(&sol.v_depart, &s1.velocity))
                    + orbital::norm(&orbital::sub(&s2.velocity, &sol.v_arrive));
                if dv.is_finite() {
                    dv
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn check(&self, q: &TransferQuery) -> Result<(), TransferError> {
        let n = self.bodies.len();
        if q.from >= n {
            return Err(TransferError::UnknownBody(q.from));
        }
        if q.to >= n {
            return Err(TransferError::UnknownBody(q.to));
        }
        if q.from == q.to {
            return Err(TransferError::SameBody(q.from));
        }
        if !(q.eta.is_finite() && q.eta >= 0.0) {
            return Err(TransferError::InvalidQuery("eta must be finite and non-negative"));
        }
        if !(q.tau_max > 0.0 && q.t_max >= MIN_TRAVEL) {
            return Err(TransferError::InvalidQuery("tau_max must be positive and t_max at least one day"));
        }
        if q.multi == 0 {
            return Err(TransferError::InvalidQuery("multi must be at least 1"));
        }
        Ok(())
    }

    fn solve(&self, q: &TransferQuery, region: Region, waiting_free: bool) -> TransferResult {
        // the grid sweeps t for each wait, so one cached departure state suffices
        let mut cached: Option<(f64, Option<BodyState>)> = None;
        let departure = &self.bodies[q.from];
        let best = optimizer::minimize(
            |tau, t| {
                let depart = q.eta + tau;
                if cached.as_ref().map_or(true, |c| c.0.to_bits() != depart.to_bits()) {
                    cached = Some((depart, orbital::propagate(departure, depart).ok()));
                }
                let Some((_, Some(s1))) = &cached else {
                    return f64::INFINITY;
                };
                let dv = self.delta_v_from(s1, q.to, depart, t);
                let time = if waiting_free { t } else { tau + t };
                if dv.is_finite() {
                    dv + Constants::time_cost(time)
                } else {
                    f64::INFINITY
                }
            },
            &region,
            q.multi,
        );
        match best {
            Some(m) => {
                let (z, delta_v) = self.inner_cost(q.from, q.to, q.eta, m.tau, m.t, waiting_free);
                TransferResult { tau: m.tau, t: m.t, z, delta_v, feasible: z.is_finite() }
            }
            None => TransferResult::INFEASIBLE,
        }
    }

    /// `B`: full cost over `tau in [0, tau_max]`, `t in [1, t_max]`.
    pub fn black_box(&self, q: &TransferQuery) -> Result<TransferResult, TransferError> {
        self.check(q)?;
        if q.tau_f.is_some() || q.theta.is_some() {
            return Err(TransferError::InvalidQuery("plain black box takes neither tau_f nor theta"));
        }
        self.calls_b.fetch_add(1, Ordering::Relaxed);
        let region = Region { tau_hi: q.tau_max, t_lo: MIN_TRAVEL, t_hi: q.t_max, cap: None };
        Ok(self.solve(q, region, false))
    }

    /// `B'`: wait-free cost over `tau in [0, tau_f]`, `t in [1, t_max]`.
    pub fn black_box_relaxed(&self, q: &TransferQuery) -> Result<TransferResult, TransferError> {
        self.check(q)?;
        let Some(tau_f) = q.tau_f else {
            return Err(TransferError::InvalidQuery("relaxed black box needs tau_f"));
        };
        if !(tau_f.is_finite() && tau_f >= 0.0) {
            return Err(TransferError::InvalidQuery("tau_f must be finite and non-negative"));
        }
        self.calls_relaxed.fetch_add(1, Ordering::Relaxed);
        let region = Region { tau_hi: tau_f, t_lo: MIN_TRAVEL, t_hi: q.t_max, cap: None };
        Ok(self.solve(q, region, true))
    }

    /// `B~`: full cost subject to `tau + t <= theta`.
    pub fn black_box_capped(&self, q: &TransferQuery) -> Result<TransferResult, TransferError> {
        self.check(q)?;
        let Some(theta) = q.theta else {
            return Err(TransferError::InvalidQuery("capped black box needs theta"));
        };
        if !theta.is_finite() {
            return Err(TransferError::InvalidQuery("theta must be finite"));
        }
        self.calls_capped.fetch_add(1, Ordering::Relaxed);
        if theta < MIN_TRAVEL {
            return Ok(TransferResult::INFEASIBLE);
        }
        let region = Region {
            tau_hi: q.tau_max.min(theta - MIN_TRAVEL),
            t_lo: MIN_TRAVEL,
            t_hi: q.t_max.min(theta),
            cap: Some(theta),
        };
        Ok(self.solve(q, region, false))
    }
}
