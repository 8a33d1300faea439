//! Problem instances: bodies, tours, CSV I/O and seeded synthetic generation.
//!
//! CSV columns, one body per row:
//!
//! | column      | unit                                |
//! |-------------|-------------------------------------|
//! | `name`      | free text; the row named `Earth` is the departure body |
//! | `a_km`      | semi-major axis, km                 |
//! | `e`         | eccentricity, `0 <= e < 1`          |
//! | `i_rad`     | inclination, rad                    |
//! | `raan_rad`  | right ascension of ascending node, rad |
//! | `argp_rad`  | argument of periapsis, rad          |
//! | `M0_rad`    | mean anomaly at `epoch_day`, rad    |
//! | `epoch_day` | element epoch, days                 |

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memo::SolutionTrie;
use crate::orbital::{Constants, OrbitalElements};
use crate::transfer::{TransferModel, DEFAULT_TAU_MAX, DEFAULT_T_MAX};
use crate::{BodyId, EARTH};

pub const CSV_COLUMNS: [&str; 8] = ["name", "a_km", "e", "i_rad", "raan_rad", "argp_rad", "M0_rad", "epoch_day"];
pub const EARTH_NAME: &str = "Earth";

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: u64, message: String },
    #[error("an instance needs at least one asteroid")]
    NoAsteroids,
    #[error("invalid tour: {0}")]
    Tour(String),
}

/// Approximate Earth orbit used when an instance file has no `Earth` row.
pub fn default_earth() -> OrbitalElements {
    OrbitalElements {
        semi_major_axis: Constants::AU_KM,
        eccentricity: 0.0167,
        inclination: 0.0,
        raan: 0.0,
        arg_periapsis: 102.9_f64.to_radians(),
        mean_anomaly_at_epoch: 0.0,
        epoch: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub elements: OrbitalElements,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `bodies[0]` is Earth.
    pub bodies: Vec<Body>,
    pub seed: Option<u64>,
    pub tau_max: f64,
    pub t_max: f64,
    /// Departure epoch from Earth, always 0 days.
    pub mission_start: f64,
}

impl Instance {
    pub fn new(bodies: Vec<Body>) -> Result<Self, InstanceError> {
        if bodies.len() < 2 {
            return Err(InstanceError::NoAsteroids);
        }
        Ok(Self { bodies, seed: None, tau_max: DEFAULT_TAU_MAX, t_max: DEFAULT_T_MAX, mission_start: 0.0 })
    }

    /// Number of asteroids.
    pub fn n(&self) -> usize {
        self.bodies.len() - 1
    }

    pub fn model(&self) -> TransferModel {
        TransferModel::new(self.bodies.iter().map(|b| b.elements).collect(), self.tau_max, self.t_max)
    }
}

/// A visiting order `(Earth, pi_1, ..., pi_n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tour(pub Vec<BodyId>);

impl Tour {
    /// Checks that the tour starts at Earth and visits each of the `n` asteroids once.
    pub fn validate(&self, n: usize) -> Result<(), InstanceError> {
        let seq = &self.0;
        if seq.first() != Some(&EARTH) {
            return Err(InstanceError::Tour("must start at body 0 (Earth)".into()));
        }
        if seq.len() != n + 1 {
            return Err(InstanceError::Tour(format!("expected {} asteroids, got {}", n, seq.len() - 1)));
        }
        let mut seen = vec![false; n + 1];
        for &b in &seq[1..] {
            if b == EARTH || b > n {
                return Err(InstanceError::Tour(format!("body {b} is not an asteroid of this instance")));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(InstanceError::Tour(format!("body {b} visited twice")));
            }
        }
        Ok(())
    }

    /// Parses a comma-separated list such as `0,3,1,2`.
    pub fn parse(text: &str) -> Result<Self, InstanceError> {
        text.split(',')
            .map(|s| s.trim().parse::<BodyId>().map_err(|e| InstanceError::Tour(format!("`{}`: {e}", s.trim()))))
            .collect::<Result<Vec<_>, _>>()
            .map(Tour)
    }
}

impl fmt::Display for Tour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    name: String,
    a_km: f64,
    e: f64,
    i_rad: f64,
    raan_rad: f64,
    argp_rad: f64,
    #[serde(rename = "M0_rad")]
    m0_rad: f64,
    epoch_day: f64,
}

/// Reads an instance; element epochs are kept as written.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    load_csv_with_origin(path, 0.0)
}

/// Reads an instance whose epochs are absolute, subtracting `origin` so that
/// the mission starts at day 0.
pub fn load_csv_with_origin(path: impl AsRef<Path>, origin: f64) -> Result<Instance, InstanceError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, origin)
}

pub fn read_csv<R: std::io::Read>(reader: R, origin: f64) -> Result<Instance, InstanceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| InstanceError::Parse { line: 1, message: e.to_string() })?
        .clone();
    for col in CSV_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(InstanceError::MissingColumn(col.to_string()));
        }
    }

    let mut earth: Option<Body> = None;
    let mut asteroids = Vec::new();
    for record in rdr.deserialize::<Row>() {
        let row = record.map_err(|e| InstanceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        // header is line 1
        let line = asteroids.len() as u64 + u64::from(earth.is_some()) + 2;
        let elements = OrbitalElements {
            semi_major_axis: row.a_km,
            eccentricity: row.e,
            inclination: row.i_rad,
            raan: row.raan_rad,
            arg_periapsis: row.argp_rad,
            mean_anomaly_at_epoch: row.m0_rad,
            epoch: row.epoch_day - origin,
        };
        elements
            .validate()
            .map_err(|e| InstanceError::Invalid { line, message: e.to_string() })?;
        let body = Body { name: row.name, elements };
        if body.name == EARTH_NAME {
            if earth.is_some() {
                return Err(InstanceError::Invalid { line, message: "duplicate Earth row".into() });
            }
            earth = Some(body);
        } else {
            asteroids.push(body);
        }
    }
    let earth = earth.unwrap_or_else(|| Body { name: EARTH_NAME.into(), elements: default_earth() });
    let mut bodies = Vec::with_capacity(asteroids.len() + 1);
    bodies.push(earth);
    bodies.extend(asteroids);
    Instance::new(bodies)
}

pub fn write_csv(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let file = std::fs::File::create(path)?;
    to_writer(instance, file)
}

pub fn to_writer<W: std::io::Write>(instance: &Instance, writer: W) -> Result<(), InstanceError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for body in &instance.bodies {
        let el = &body.elements;
        wtr.serialize(Row {
            name: body.name.clone(),
            a_km: el.semi_major_axis,
            e: el.eccentricity,
            i_rad: el.inclination,
            raan_rad: el.raan,
            argp_rad: el.arg_periapsis,
            m0_rad: el.mean_anomaly_at_epoch,
            epoch_day: el.epoch,
        })
        .map_err(|e| InstanceError::Io(std::io::Error::other(e)))?;
    }
    wtr.flush()?;
    Ok(())
}

/// SplitMix64: a counter-based generator with a fully specified output, so
/// instances are reproducible byte-for-byte on any platform.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }
}

/// Main-belt-like synthetic instance with `n` asteroids.
///
/// Per asteroid, in order: `a` in [2.0, 3.5] AU, `e` in [0, 0.25],
/// `i` in [0, 10] degrees, then node, periapsis and mean anomaly in [0, 2pi).
pub fn generate(n: usize, seed: u64) -> Result<Instance, InstanceError> {
    if n == 0 {
        return Err(InstanceError::NoAsteroids);
    }
    let mut rng = SplitMix64::new(seed);
    let tau = std::f64::consts::TAU;
    let mut bodies = Vec::with_capacity(n + 1);
    bodies.push(Body { name: EARTH_NAME.into(), elements: default_earth() });
    for k in 1..=n {
        let elements = OrbitalElements {
            semi_major_axis: rng.uniform(2.0, 3.5) * Constants::AU_KM,
            eccentricity: rng.uniform(0.0, 0.25),
            inclination: rng.uniform(0.0, 10.0).to_radians(),
            raan: rng.uniform(0.0, tau),
            arg_periapsis: rng.uniform(0.0, tau),
            mean_anomaly_at_epoch: rng.uniform(0.0, tau),
            epoch: 0.0,
        };
        bodies.push(Body { name: format!("S{seed}-{k:03}"), elements });
    }
    let mut inst = Instance::new(bodies)?;
    inst.seed = Some(seed);
    Ok(inst)
}

/// Exact tour cost through the solution trie (never the relaxed black box).
/// Infeasible legs make the cost infinite.
pub fn evaluate_tour(model: &TransferModel, tour: &Tour, trie: &mut SolutionTrie) -> Result<f64, InstanceError> {
    tour.validate(model.asteroid_count())?;
    Ok(trie.evaluate(model, &tour.0).0)
}
