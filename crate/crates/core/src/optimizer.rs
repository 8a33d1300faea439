//! Deterministic grid-seeded multistart minimizer over the (wait, travel) plane.
//!
//! A dense uniform grid is scanned first; its best point seeds the first
//! descent. Further starts are anchored on the wait axis at van der Corput
//! points. Each start runs a projected BFGS descent with central-difference
//! gradients. Because the start list for `multi = k` is a prefix of the list
//! for `multi = k + 1`, the best value found can never get worse as `multi` grows.

/// Reference wait span of one grid block; longer wait ranges get proportionally
/// more wait samples so the spacing never exceeds `GRID_SPAN / (GRID_POINTS - 1)`.
const GRID_SPAN: f64 = 730.0;
pub(crate) const GRID_POINTS: usize = 50;
const GRAD_STEP: f64 = 1e-3;
const CONVERGENCE: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MAX_BACKTRACK: usize = 40;
const ARMIJO: f64 = 1e-4;
const FIRST_STEP_DAYS: f64 = 10.0;

/// The feasible set: `tau in [0, tau_hi]`, `t in [t_lo, t_hi]`, optionally `tau + t <= cap`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Region {
    pub tau_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Minimum {
    pub tau: f64,
    pub t: f64,
    pub z: f64,
}

/// Point `j` of a uniform `count`-point grid over `[lo, hi]`.
#[inline]
pub(crate) fn grid_point(lo: f64, hi: f64, j: usize, count: usize) -> f64 {
    if count <= 1 {
        lo
    } else {
        lo + (hi - lo) * (j as f64 / (count - 1) as f64)
    }
}

/// Base-2 radical inverse of `k`.
pub(crate) fn van_der_corput(mut k: u64) -> f64 {
    let mut value = 0.0;
    let mut base = 0.5;
    while k > 0 {
        if k & 1 == 1 {
            value += base;
        }
        k >>= 1;
        base *= 0.5;
    }
    value
}

impl Region {
    fn clip(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(0.0, self.tau_hi), x[1].clamp(self.t_lo, self.t_hi)]
    }

    pub(crate) fn project(&self, x: [f64; 2]) -> [f64; 2] {
        let mut p = self.clip(x);
        if let Some(cap) = self.cap {
            let excess = p[0] + p[1] - cap;
            if excess > 0.0 {
                p = self.clip([p[0] - 0.5 * excess, p[1] - 0.5 * excess]);
                if p[0] + p[1] > cap {
                    if p[0] <= 0.0 {
                        p[1] = (cap - p[0]).clamp(self.t_lo, self.t_hi);
                    } else {
                        p[0] = (cap - p[1]).clamp(0.0, self.tau_hi);
                    }
                }
            }
        }
        p
    }

    fn admits(&self, tau: f64, t: f64) -> bool {
        self.cap.map_or(true, |cap| tau + t <= cap)
    }

    /// Samples on the wait axis.
    pub(crate) fn tau_axis(&self) -> Vec<f64> {
        if self.tau_hi <= 0.0 {
            return vec![0.0];
        }
        let blocks = ((self.tau_hi / GRID_SPAN).ceil() as usize).max(1);
        let count = (GRID_POINTS - 1) * blocks + 1;
        (0..count)
            .map(|k| {
                if k % blocks == 0 {
                    // coincide bit-for-bit with the coarse 50-point grid
                    grid_point(0.0, self.tau_hi, k / blocks, GRID_POINTS)
                } else {
                    grid_point(0.0, self.tau_hi, k, count)
                }
            })
            .collect()
    }

    pub(crate) fn t_axis(&self) -> Vec<f64> {
        if self.t_hi <= self.t_lo {
            return vec![self.t_lo];
        }
        (0..GRID_POINTS)
            .map(|j| grid_point(self.t_lo, self.t_hi, j, GRID_POINTS))
            .collect()
    }
}

fn finite_or_inf(z: f64) -> f64 {
    if z.is_finite() {
        z
    } else {
        f64::INFINITY
    }
}

fn better(a: &Minimum, b: &Minimum) -> bool {
    (a.z, a.tau, a.t) < (b.z, b.tau, b.t)
}

/// Minimizes `f` over `region` with `multi` starts. `None` when every
/// candidate point is infeasible.
pub(crate) fn minimize<F>(mut f: F, region: &Region, multi: u32) -> Option<Minimum>
where
    F: FnMut(f64, f64) -> f64,
{
    let mut eval = |x: [f64; 2]| finite_or_inf(f(x[0], x[1]));
    let taus = region.tau_axis();
    let ts = region.t_axis();

    // best t per wait column, plus the global best grid point
    let mut columns: Vec<Option<Minimum>> = Vec::with_capacity(taus.len());
    let mut best_grid: Option<Minimum> = None;
    for &tau in &taus {
        let mut col: Option<Minimum> = None;
        for &t in &ts {
            if !region.admits(tau, t) {
                continue;
            }
            let z = eval([tau, t]);
            if z.is_finite() && col.map_or(true, |c| z < c.z) {
                col = Some(Minimum { tau, t, z });
            }
        }
        if let Some(c) = col {
            if best_grid.map_or(true, |b| c.z < b.z) {
                best_grid = Some(c);
            }
        }
        columns.push(col);
    }

    let mut best: Option<Minimum> = None;
    for k in 0..multi.max(1) {
        let start = if k == 0 {
            best_grid
        } else {
            let anchor = van_der_corput(u64::from(k)) * region.tau_hi;
            nearest_column(&taus, &columns, anchor).and_then(|c| {
                let x = region.project([anchor, c.t]);
                let z = eval(x);
                z.is_finite().then_some(Minimum { tau: x[0], t: x[1], z })
            })
        };
        let Some(start) = start else { continue };
        let local = descend(&mut eval, region, start);
        if best.as_ref().map_or(true, |b| better(&local, b)) {
            best = Some(local);
        }
    }
    best
}

fn nearest_column(taus: &[f64], columns: &[Option<Minimum>], anchor: f64) -> Option<Minimum> {
    let idx = taus
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - anchor).abs().total_cmp(&(b.1 - anchor).abs()))
        .map(|(i, _)| i)?;
    columns[idx]
}

fn gradient<F: FnMut([f64; 2]) -> f64>(eval: &mut F, x: [f64; 2], fx: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for i in 0..2 {
        let mut hi = x;
        let mut lo = x;
        hi[i] += GRAD_STEP;
        lo[i] -= GRAD_STEP;
        let (fh, fl) = (eval(hi), eval(lo));
        g[i] = match (fh.is_finite(), fl.is_finite()) {
            (true, true) => (fh - fl) / (2.0 * GRAD_STEP),
            (true, false) => (fh - fx) / GRAD_STEP,
            (false, true) => (fx - fl) / GRAD_STEP,
            (false, false) => 0.0,
        };
    }
    g
}

fn descend<F: FnMut([f64; 2]) -> f64>(eval: &mut F, region: &Region, start: Minimum) -> Minimum {
    let mut x = [start.tau, start.t];
    let mut fx = start.z;
    let mut g = gradient(eval, x, fx);
    let gnorm = g[0].hypot(g[1]);
    let mut h = if gnorm > 0.0 {
        let s = FIRST_STEP_DAYS / gnorm;
        [[s, 0.0], [0.0, s]]
    } else {
        return start;
    };

    for _ in 0..MAX_ITER {
        let lower = [0.0, region.t_lo];
        let upper = [region.tau_hi, region.t_hi];
        let mut fixed = [false; 2];
        for i in 0..2 {
            fixed[i] = (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0);
        }
        let mut d = [
            -(h[0][0] * g[0] + h[0][1] * g[1]),
            -(h[1][0] * g[0] + h[1][1] * g[1]),
        ];
        for i in 0..2 {
            if fixed[i] {
                d[i] = 0.0;
            }
        }
        if d[0] * g[0] + d[1] * g[1] >= 0.0 {
            d = [if fixed[0] { 0.0 } else { -g[0] }, if fixed[1] { 0.0 } else { -g[1] }];
        }
        if d == [0.0, 0.0] {
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let xn = region.project([x[0] + alpha * d[0], x[1] + alpha * d[1]]);
            if xn == x {
                break;
            }
            let fxn = eval(xn);
            let decrease = g[0] * (xn[0] - x[0]) + g[1] * (xn[1] - x[1]);
            if fxn.is_finite() && fxn <= fx && fxn <= fx + ARMIJO * decrease {
                accepted = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else { break };

        let s = [xn[0] - x[0], xn[1] - x[1]];
        let change = fx - fxn;
        let gn = gradient(eval, xn, fxn);
        let y = [gn[0] - g[0], gn[1] - g[1]];
        x = xn;
        fx = fxn;
        g = gn;
        if s[0].hypot(s[1]) < CONVERGENCE && change < CONVERGENCE {
            break;
        }
        let sy = s[0] * y[0] + s[1] * y[1];
        if sy > 1e-12 * s[0].hypot(s[1]) * y[0].hypot(y[1]) {
            h = bfgs_update(h, s, y, sy);
        }
    }
    Minimum { tau: x[0], t: x[1], z: fx }
}

fn bfgs_update(h: [[f64; 2]; 2], s: [f64; 2], y: [f64; 2], sy: f64) -> [[f64; 2]; 2] {
    let rho = 1.0 / sy;
    // H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let a = [
        [1.0 - rho * s[0] * y[0], -rho * s[0] * y[1]],
        [-rho * s[1] * y[0], 1.0 - rho * s[1] * y[1]],
    ];
    let mut ah = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            ah[i][j] = a[i][0] * h[0][j] + a[i][1] * h[1][j];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            // right factor is a^T
            out[i][j] = ah[i][0] * a[j][0] + ah[i][1] * a[j][1] + rho * s[i] * s[j];
        }
    }
    out
}
