//! Two-body Keplerian dynamics around the Sun.
//!
//! Everything inside this module works in kilometres, seconds and radians.
//! Epochs cross the module boundary in days and are converted with
//! [`Constants::DAY_SECONDS`].

use std::f64::consts::{PI, TAU};

use thiserror::Error;

/// Physical constants shared by the dynamics and the transfer cost.
#[derive(Debug, Clone, Copy)]
pub struct Constants;

impl Constants {
    /// Heliocentric gravitational parameter, km^3/s^2.
    pub const MU_SUN: f64 = 1.327_124_400_18e11;
    pub const DAY_SECONDS: f64 = 86_400.0;
    /// One astronomical unit in km.
    pub const AU_KM: f64 = 149_597_870.7;
    /// Numerator and denominator of the km/s-per-day price of mission time (2 km/s per 30 days).
    pub const TIME_COST_KMS: f64 = 2.0;
    pub const TIME_COST_DAYS: f64 = 30.0;

    /// Cost of `days` of mission time, in km/s-equivalent units.
    #[inline]
    pub fn time_cost(days: f64) -> f64 {
        Self::TIME_COST_KMS * days / Self::TIME_COST_DAYS
    }

    /// Inverse of [`Constants::time_cost`]: days of mission time purchasable with `cost`.
    #[inline]
    pub fn days_for_cost(cost: f64) -> f64 {
        Self::TIME_COST_DAYS * cost / Self::TIME_COST_KMS
    }
}

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn scale(a: &Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitalError {
    #[error("Kepler iteration did not converge (residual {residual:e})")]
    KeplerNotConverged { residual: f64 },
    #[error("Lambert iteration did not converge (last step {step:e})")]
    LambertNotConverged { step: f64 },
    #[error("transfer plane undefined: position vectors are parallel or antiparallel")]
    DegenerateGeometry,
    #[error("invalid orbital input: {0}")]
    InvalidInput(&'static str),
}

/// Classical elements of a closed heliocentric orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalElements {
    /// km
    pub semi_major_axis: f64,
    pub eccentricity: f64,
    pub inclination: f64,
    pub raan: f64,
    pub arg_periapsis: f64,
    pub mean_anomaly_at_epoch: f64,
    /// days
    pub epoch: f64,
}

impl OrbitalElements {
    pub fn validate(&self) -> Result<(), OrbitalError> {
        if !(self.semi_major_axis.is_finite() && self.semi_major_axis > 0.0) {
            return Err(OrbitalError::InvalidInput("semi-major axis must be positive"));
        }
        if !(0.0..1.0).contains(&self.eccentricity) {
            return Err(OrbitalError::InvalidInput("eccentricity must lie in [0, 1)"));
        }
        let angles = [
            self.inclination,
            self.raan,
            self.arg_periapsis,
            self.mean_anomaly_at_epoch,
            self.epoch,
        ];
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(OrbitalError::InvalidInput("angles and epoch must be finite"));
        }
        Ok(())
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (Constants::MU_SUN / self.semi_major_axis.powi(3)).sqrt()
    }

    /// Orbital period in days.
    pub fn period_days(&self) -> f64 {
        TAU / self.mean_motion() / Constants::DAY_SECONDS
    }

    /// Specific orbital energy, km^2/s^2.
    pub fn specific_energy(&self) -> f64 {
        -Constants::MU_SUN / (2.0 * self.semi_major_axis)
    }

    /// Magnitude of the specific angular momentum, km^2/s.
    pub fn angular_momentum(&self) -> f64 {
        (Constants::MU_SUN * self.semi_major_axis * (1.0 - self.eccentricity.powi(2))).sqrt()
    }
}

/// Cartesian heliocentric state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    /// km
    pub position: Vec3,
    /// km/s
    pub velocity: Vec3,
    /// days
    pub epoch: f64,
}

/// Velocities at both ends of a Lambert arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambertSolution {
    pub v_depart: Vec3,
    pub v_arrive: Vec3,
}

const KEPLER_MAX_ITER: usize = 50;
const KEPLER_TOL: f64 = 1e-12;

/// Solves `E - e sin E = M` for the eccentric anomaly.
///
/// The returned anomaly lies on the same 2π branch as `mean_anomaly`.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, OrbitalError> {
    if !mean_anomaly.is_finite() || !(0.0..1.0).contains(&e) {
        return Err(OrbitalError::InvalidInput("need finite M and 0 <= e < 1"));
    }
    if e == 0.0 {
        return Ok(mean_anomaly);
    }
    // Reduce to [-π, π) so the starting guess is uniform across branches.
    let turns = ((mean_anomaly + PI) / TAU).floor();
    let m = mean_anomaly - turns * TAU;
    let mut ecc = if e < 0.8 { m + e * m.sin() } else { PI.copysign(m) };
    if m == 0.0 {
        ecc = 0.0;
    }
    let mut residual = ecc - e * ecc.sin() - m;
    for _ in 0..KEPLER_MAX_ITER {
        if residual.abs() <= KEPLER_TOL {
            return Ok(ecc + turns * TAU);
        }
        let (s, c) = ecc.sin_cos();
        let f1 = 1.0 - e * c;
        let f2 = e * s;
        let f3 = e * c;
        // Halley/Householder correction
        let d1 = -residual / f1;
        let d2 = -residual / (f1 + 0.5 * d1 * f2);
        let d3 = -residual / (f1 + 0.5 * d2 * f2 + d2 * d2 * f3 / 6.0);
        ecc += d3;
        residual = ecc - e * ecc.sin() - m;
    }
    if residual.abs() <= KEPLER_TOL {
        Ok(ecc + turns * TAU)
    } else {
        Err(OrbitalError::KeplerNotConverged { residual })
    }
}

/// Heliocentric Cartesian state of a body at `epoch` (days).
pub fn propagate(elements: &OrbitalElements, epoch: f64) -> Result<BodyState, OrbitalError> {
    if !epoch.is_finite() {
        return Err(OrbitalError::InvalidInput("epoch must be finite"));
    }
    let a = elements.semi_major_axis;
    let e = elements.eccentricity;
    let dt = (epoch - elements.epoch) * Constants::DAY_SECONDS;
    let mean = elements.mean_anomaly_at_epoch + elements.mean_motion() * dt;
    let ecc = solve_kepler(mean, e)?;
    let (se, ce) = ecc.sin_cos();
    let b = a * (1.0 - e * e).sqrt();

    // Perifocal coordinates.
    let xp = a * (ce - e);
    let yp = b * se;
    let rdot_factor = (Constants::MU_SUN * a).sqrt() / (a * (1.0 - e * ce));
    let vxp = -rdot_factor * se;
    let vyp = rdot_factor * (1.0 - e * e).sqrt() * ce;

    let (so, co) = elements.raan.sin_cos();
    let (sw, cw) = elements.arg_periapsis.sin_cos();
    let (si, ci) = elements.inclination.sin_cos();
    let p = [co * cw - so * sw * ci, so * cw + co * sw * ci, sw * si];
    let q = [-co * sw - so * cw * ci, -so * sw + co * cw * ci, cw * si];

    Ok(BodyState {
        position: [
            xp * p[0] + yp * q[0],
            xp * p[1] + yp * q[1],
            xp * p[2] + yp * q[2],
        ],
        velocity: [
            vxp * p[0] + vyp * q[0],
            vxp * p[1] + vyp * q[1],
            vxp * p[2] + vyp * q[2],
        ],
        epoch,
    })
}

fn stumpff_c(z: f64) -> f64 {
    if z > 1e-8 {
        (1.0 - z.sqrt().cos()) / z
    } else if z < -1e-8 {
        ((-z).sqrt().cosh() - 1.0) / (-z)
    } else {
        0.5 - z / 24.0 + z * z / 720.0
    }
}

fn stumpff_s(z: f64) -> f64 {
    if z > 1e-8 {
        let s = z.sqrt();
        (s - s.sin()) / (s * z)
    } else if z < -1e-8 {
        let s = (-z).sqrt();
        (s.sinh() - s) / (s * -z)
    } else {
        1.0 / 6.0 - z / 120.0 + z * z / 5040.0
    }
}

/// Propagates a Cartesian state for `dt_seconds` with the universal-variable
/// formulation. Valid for elliptic, parabolic and hyperbolic conics.
pub fn propagate_cartesian(
    position: &Vec3,
    velocity: &Vec3,
    dt_seconds: f64,
) -> Result<(Vec3, Vec3), OrbitalError> {
    let mu = Constants::MU_SUN;
    let r0 = norm(position);
    if r0 == 0.0 || !dt_seconds.is_finite() {
        return Err(OrbitalError::InvalidInput("zero radius or non-finite time"));
    }
    if dt_seconds == 0.0 {
        return Ok((*position, *velocity));
    }
    let v0 = norm(velocity);
    let vr0 = dot(position, velocity) / r0;
    let alpha = 2.0 / r0 - v0 * v0 / mu;
    let sqrt_mu = mu.sqrt();

    // F is strictly increasing in chi (dF/dchi = r > 0), so Newton steps are
    // safeguarded by a bracket around the root.
    let kepler = |chi: f64| {
        let z = alpha * chi * chi;
        let c = stumpff_c(z);
        let s = stumpff_s(z);
        let f = r0 * vr0 / sqrt_mu * chi * chi * c + (1.0 - alpha * r0) * chi.powi(3) * s + r0 * chi
            - sqrt_mu * dt_seconds;
        let df = r0 * vr0 / sqrt_mu * chi * (1.0 - alpha * chi * chi * s) + (1.0 - alpha * r0) * chi * chi * c + r0;
        (f, df)
    };
    let guess = if alpha > 1e-12 {
        sqrt_mu * alpha * dt_seconds
    } else {
        sqrt_mu * dt_seconds / (10.0 * r0)
    };
    // f(0) = -sqrt(mu) dt, so the root has the sign of dt
    let (mut lo, mut hi) = if dt_seconds > 0.0 { (0.0, guess) } else { (guess, 0.0) };
    let mut found = false;
    for _ in 0..200 {
        if dt_seconds > 0.0 {
            let f = kepler(hi).0;
            if !(f <= 0.0) {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        } else {
            let f = kepler(lo).0;
            if !(f >= 0.0) {
                found = true;
                break;
            }
            hi = lo;
            lo *= 2.0;
        }
    }
    if !found {
        return Err(OrbitalError::InvalidInput("universal anomaly did not converge"));
    }
    let mut chi = guess.clamp(lo, hi);
    let mut converged = false;
    for _ in 0..300 {
        let (f, df) = kepler(chi);
        if f == 0.0 {
            converged = true;
            break;
        }
        if f.is_finite() && f < 0.0 {
            lo = chi;
        } else {
            hi = chi;
        }
        let newton = chi - f / df;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = next - chi;
        chi = next;
        if step.abs() <= 1e-12 * chi.abs().max(1.0) || hi - lo <= 1e-15 * chi.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OrbitalError::InvalidInput("universal anomaly did not converge"));
    }
    let z = alpha * chi * chi;
    let c = stumpff_c(z);
    let s = stumpff_s(z);
    let f = 1.0 - chi * chi / r0 * c;
    let g = dt_seconds - chi.powi(3) / sqrt_mu * s;
    let r = [
        f * position[0] + g * velocity[0],
        f * position[1] + g * velocity[1],
        f * position[2] + g * velocity[2],
    ];
    let rn = norm(&r);
    let fdot = sqrt_mu / (rn * r0) * (alpha * chi.powi(3) * s - chi);
    let gdot = 1.0 - chi * chi / rn * c;
    let v = [
        fdot * position[0] + gdot * velocity[0],
        fdot * position[1] + gdot * velocity[1],
        fdot * position[2] + gdot * velocity[2],
    ];
    Ok((r, v))
}

const LAMBERT_MAX_ITER: usize = 60;
const LAMBERT_TOL: f64 = 1e-13;
/// Below this |sin(transfer angle)| the transfer plane is considered undefined.
const DEGENERATE_SIN: f64 = 1e-10;

/// Single-revolution Lambert solver in the Lancaster–Blanchard / Izzo
/// formulation, iterated with third-order Householder steps.
///
/// `tof_seconds` is the time of flight. With `prograde` the transfer moves
/// counter-clockwise about +z.
pub fn lambert(
    r1: &Vec3,
    r2: &Vec3,
    tof_seconds: f64,
    prograde: bool,
) -> Result<LambertSolution, OrbitalError> {
    if !(tof_seconds.is_finite() && tof_seconds > 0.0) {
        return Err(OrbitalError::InvalidInput("time of flight must be positive"));
    }
    let mu = Constants::MU_SUN;
    let r1n = norm(r1);
    let r2n = norm(r2);
    if r1n == 0.0 || r2n == 0.0 {
        return Err(OrbitalError::InvalidInput("zero position vector"));
    }
    let chord = norm(&sub(r2, r1));
    let s = 0.5 * (r1n + r2n + chord);
    let ir1 = scale(r1, 1.0 / r1n);
    let ir2 = scale(r2, 1.0 / r2n);
    let h = cross(&ir1, &ir2);
    let hn = norm(&h);
    if hn < DEGENERATE_SIN || h[2] == 0.0 {
        return Err(OrbitalError::DegenerateGeometry);
    }
    let ih = scale(&h, 1.0 / hn);

    let lambda2 = (1.0 - chord / s).max(0.0);
    let mut lambda = lambda2.sqrt();
    let (mut it1, mut it2);
    if ih[2] < 0.0 {
        lambda = -lambda;
        it1 = cross(&ir1, &ih);
        it2 = cross(&ir2, &ih);
    } else {
        it1 = cross(&ih, &ir1);
        it2 = cross(&ih, &ir2);
    }
    it1 = scale(&it1, 1.0 / norm(&it1));
    it2 = scale(&it2, 1.0 / norm(&it2));
    if !prograde {
        lambda = -lambda;
        it1 = scale(&it1, -1.0);
        it2 = scale(&it2, -1.0);
    }

    let lambda3 = lambda * lambda2;
    let t_nd = (2.0 * mu / s.powi(3)).sqrt() * tof_seconds;

    let t00 = lambda.acos() + lambda * (1.0 - lambda2).sqrt();
    let t1 = 2.0 / 3.0 * (1.0 - lambda3);
    let mut x = if t_nd >= t00 {
        -(t_nd - t00) / (t_nd - t00 + 4.0)
    } else if t_nd <= t1 {
        t1 * (t1 - t_nd) / (0.4 * (1.0 - lambda2 * lambda3) * t_nd) + 1.0
    } else {
        (t_nd / t00).powf(std::f64::consts::LN_2 / (t1 / t00).ln()) - 1.0
    };

    let mut converged = false;
    let mut last_step = f64::INFINITY;
    for _ in 0..LAMBERT_MAX_ITER {
        let tof = x_to_tof(x, lambda);
        let (dt, ddt, dddt) = tof_derivatives(x, tof, lambda);
        let delta = tof - t_nd;
        let dt2 = dt * dt;
        let xnew =
            x - delta * (dt2 - delta * ddt / 2.0) / (dt * (dt2 - delta * ddt) + dddt * delta * delta / 6.0);
        if !xnew.is_finite() {
            break;
        }
        last_step = (x - xnew).abs();
        x = xnew;
        if last_step <= LAMBERT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OrbitalError::LambertNotConverged { step: last_step });
    }

    let gamma = (mu * s / 2.0).sqrt();
    let rho = (r1n - r2n) / chord;
    let sigma = (1.0 - rho * rho).max(0.0).sqrt();
    let y = (1.0 - lambda2 + lambda2 * x * x).sqrt();
    let vr1 = gamma * ((lambda * y - x) - rho * (lambda * y + x)) / r1n;
    let vr2 = -gamma * ((lambda * y - x) + rho * (lambda * y + x)) / r2n;
    let vt = gamma * sigma * (y + lambda * x);
    let vt1 = vt / r1n;
    let vt2 = vt / r2n;
    let v_depart = [
        vr1 * ir1[0] + vt1 * it1[0],
        vr1 * ir1[1] + vt1 * it1[1],
        vr1 * ir1[2] + vt1 * it1[2],
    ];
    let v_arrive = [
        vr2 * ir2[0] + vt2 * it2[0],
        vr2 * ir2[1] + vt2 * it2[1],
        vr2 * ir2[2] + vt2 * it2[2],
    ];
    if v_depart.iter().chain(v_arrive.iter()).any(|c| !c.is_finite()) {
        return Err(OrbitalError::LambertNotConverged { step: last_step });
    }
    Ok(LambertSolution { v_depart, v_arrive })
}

fn hypergeometric_f(z: f64, tol: f64) -> f64 {
    let mut sj = 1.0;
    let mut cj = 1.0;
    let mut j = 0.0;
    loop {
        let cj1 = cj * (3.0 + j) * (1.0 + j) / (2.5 + j) * z / (j + 1.0);
        sj += cj1;
        cj = cj1;
        j += 1.0;
        if cj1.abs() <= tol || j > 1000.0 {
            return sj;
        }
    }
}

/// Non-dimensional time of flight as a function of the Izzo variable `x`.
fn x_to_tof(x: f64, lambda: f64) -> f64 {
    const BATTIN: f64 = 0.01;
    const LAGRANGE: f64 = 0.2;
    let dist = (x - 1.0).abs();
    if dist < LAGRANGE && dist > BATTIN {
        return x_to_tof_lagrange(x, lambda);
    }
    let k = lambda * lambda;
    let e = x * x - 1.0;
    let rho = e.abs();
    let z = (1.0 + k * e).sqrt();
    if dist < BATTIN {
        let eta = z - lambda * x;
        let s1 = 0.5 * (1.0 - lambda - x * eta);
        let q = 4.0 / 3.0 * hypergeometric_f(s1, 1e-11);
        (eta.powi(3) * q + 4.0 * lambda * eta) / 2.0
    } else {
        let y = rho.sqrt();
        let g = x * z - lambda * e;
        let d = if e < 0.0 {
            g.clamp(-1.0, 1.0).acos()
        } else {
            let f = y * (z - lambda * x);
            (f + g).ln()
        };
        (x - lambda * z - d / y) / e
    }
}

fn x_to_tof_lagrange(x: f64, lambda: f64) -> f64 {
    let a = 1.0 / (1.0 - x * x);
    if a > 0.0 {
        let alpha = 2.0 * x.acos();
        let mut beta = 2.0 * (lambda * lambda / a).sqrt().asin();
        if lambda < 0.0 {
            beta = -beta;
        }
        a * a.sqrt() * ((alpha - alpha.sin()) - (beta - beta.sin())) / 2.0
    } else {
        let alpha = 2.0 * x.acosh();
        let mut beta = 2.0 * (-lambda * lambda / a).sqrt().asinh();
        if lambda < 0.0 {
            beta = -beta;
        }
        -a * (-a).sqrt() * ((beta - beta.sinh()) - (alpha - alpha.sinh())) / 2.0
    }
}

fn tof_derivatives(x: f64, tof: f64, lambda: f64) -> (f64, f64, f64) {
    let l2 = lambda * lambda;
    let l3 = l2 * lambda;
    let umx2 = 1.0 - x * x;
    let y = (1.0 - l2 * umx2).sqrt();
    let y2 = y * y;
    let y3 = y2 * y;
    let dt = 1.0 / umx2 * (3.0 * tof * x - 2.0 + 2.0 * l3 * x / y);
    let ddt = 1.0 / umx2 * (3.0 * tof + 5.0 * x * dt + 2.0 * (1.0 - l2) * l3 / y3);
    let dddt = 1.0 / umx2 * (7.0 * x * ddt + 8.0 * dt - 6.0 * (1.0 - l2) * l2 * l3 * x / y3 / y2);
    (dt, ddt, dddt)
}
