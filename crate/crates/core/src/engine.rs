//! Thermophoretic engine: a particle in a triangle whose two lower walls are
//! thermostats and whose top side is a frictionless belt of mass `m1` pulled
//! by a constant force `F`.
//!
//! The belt slides along its own line, so the top wall never moves in space
//! and flight times are exact. Between events the belt accelerates uniformly.

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, Point, Shape, Table, Thermostat, Vec3};
use crate::rng::{lanes, RngStream};
use crate::sampling::{reflect, sample_maxwellian, to_global, ReflectionLaw, SamplingError};
use crate::stats::{RunningStats, Z95};

pub const HOT: usize = 0;
pub const COLD: usize = 1;
pub const BELT: usize = 2;

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("run aborted after {collisions} collisions: {reason}")]
    Aborted { collisions: u64, reason: String },
    #[error("efficiency undefined: no heat drawn from the hot wall")]
    UndefinedEfficiency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    pub t_hot: f64,
    pub t_cold: f64,
    pub alpha_hot: f64,
    pub alpha_cold: f64,
    /// Belt mass `m1`.
    pub belt_mass: f64,
    /// Particle mass `m2`.
    pub particle_mass: f64,
    /// Force on the belt; positive pushes toward `+x`.
    pub force: f64,
    /// Belt loop length. Displacement is tracked unwrapped, so this is
    /// informational only.
    pub belt_length: f64,
    pub side: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            t_hot: 50.0,
            t_cold: 1.0,
            alpha_hot: 1.0,
            alpha_cold: 1.0,
            belt_mass: 1000.0,
            particle_mass: 1.0,
            force: 0.0,
            belt_length: 1.0,
            side: 1.0,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("t_hot", self.t_hot),
            ("t_cold", self.t_cold),
            ("belt_mass", self.belt_mass),
            ("particle_mass", self.particle_mass),
            ("belt_length", self.belt_length),
            ("side", self.side),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EngineError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, a) in [("alpha_hot", self.alpha_hot), ("alpha_cold", self.alpha_cold)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(EngineError::InvalidParams(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if !self.force.is_finite() {
            return Err(EngineError::InvalidParams("force must be finite".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        (self.particle_mass / self.belt_mass).sqrt()
    }

    pub fn table(&self) -> Result<Table, EngineError> {
        Ok(Table::engine_triangle(
            self.side,
            Thermostat::new(self.t_hot, self.alpha_hot),
            Thermostat::new(self.t_cold, self.alpha_cold),
        )?)
    }
}

/// Elastic collision of the particle (velocity `v`) with the belt moving at
/// `w` along `x`. The normal component of `v` flips; the tangential one and
/// the belt exchange momentum as in a head-on collision.
pub fn belt_collision(v: [f64; 2], w: f64, m1: f64, m2: f64) -> ([f64; 2], f64) {
    let m = m1 + m2;
    let vx = ((m2 - m1) * v[0] + 2.0 * m1 * w) / m;
    let w_new = ((m1 - m2) * w + 2.0 * m2 * v[0]) / m;
    ([vx, -v[1]], w_new)
}

/// The belt collision in mass-weighted coordinates `(sqrt(m1) w, sqrt(m2) v_x,
/// sqrt(m2) v_y)`.
pub fn collision_matrix(gamma: f64) -> Matrix3<f64> {
    let g2 = gamma * gamma;
    let d = 1.0 + g2;
    Matrix3::new(
        (1.0 - g2) / d,
        2.0 * gamma / d,
        0.0,
        2.0 * gamma / d,
        -(1.0 - g2) / d,
        0.0,
        0.0,
        0.0,
        -1.0,
    )
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Time series sampled after every recorded collision. Entry 0 is the state
/// when recording starts; heats, work and displacement are measured from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EngineRecord {
    pub t: Vec<f64>,
    pub x_w: Vec<f64>,
    pub w: Vec<f64>,
    pub q_hot: Vec<f64>,
    pub q_cold: Vec<f64>,
    pub work: Vec<f64>,
    pub energy: Vec<f64>,
    /// First-law residual since the very start of the run.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// Residual bound `1e-9 max(1, |E(0)|)` at the very start.
    pub residual_bound: f64,
    pub hits: [u64; 3],
    pub collisions: u64,
    pub aborted: Option<String>,
}

impl EngineRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> usize {
        self.t.len() - 1
    }

    pub fn first_law_holds(&self) -> bool {
        self.max_residual < self.residual_bound
    }

    /// Belt displacement per unit time over the record.
    pub fn drift_rate(&self) -> f64 {
        let k = self.last();
        (self.x_w[k] - self.x_w[0]) / (self.t[k] - self.t[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineRunOptions {
    pub n_collisions: u64,
    /// Collisions discarded before recording.
    pub burn_in: u64,
    /// Keep every `stride`-th sample (the last one is always kept).
    pub stride: u64,
}

impl EngineRunOptions {
    pub fn new(n_collisions: u64) -> Self {
        Self {
            n_collisions,
            burn_in: 0,
            stride: 1,
        }
    }
}

/// Boundary point stored as its distance to the nearer corner of its wall.
#[derive(Debug, Clone, Copy)]
struct WallPoint {
    wall: usize,
    from_start: bool,
    r: f64,
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Flights in the triangle solved relative to the corner shared by the
/// departure and landing walls. Motion near a corner is scale invariant, so
/// a particle pinned into a corner by the belt keeps full relative precision
/// however deep it goes.
struct Wedges {
    length: [f64; 3],
    /// Unit direction of each wall from its start vertex.
    dir: [Point; 3],
}

impl Wedges {
    fn new(table: &Table) -> Self {
        let mut length = [0.0; 3];
        let mut dir = [Point::zeros(); 3];
        for (i, c) in table.components().iter().enumerate() {
            if let Shape::Segment { p0, p1 } = c.shape {
                length[i] = c.area;
                dir[i] = (p1 - p0) / c.area;
            }
        }
        Self { length, dir }
    }

    fn point(&self, wall: usize, from_start: bool, s: f64) -> WallPoint {
        let half = 0.5 * self.length[wall];
        if s <= half {
            WallPoint { wall, from_start, r: s }
        } else {
            WallPoint {
                wall,
                from_start: !from_start,
                r: self.length[wall] - s,
            }
        }
    }

    fn normal(&self, wall: usize) -> Vec3 {
        let d = self.dir[wall];
        Vec3::new(-d.y, d.x, 0.0)
    }

    /// Landing point and flight time from `p` with velocity `v`, or `None`
    /// when the flight ends in a corner.
    fn flight(&self, p: &WallPoint, v: Point) -> Option<(WallPoint, f64)> {
        let a = p.wall;
        let mut best: Option<(WallPoint, f64)> = None;
        for b in [(a + 1) % 3, (a + 2) % 3] {
            // wall a ends where wall a + 1 starts
            let (a_start, b_start) = if b == (a + 1) % 3 { (false, true) } else { (true, false) };
            let r = if p.from_start == a_start { p.r } else { self.length[a] - p.r };
            let ua = if a_start { self.dir[a] } else { -self.dir[a] };
            let ub = if b_start { self.dir[b] } else { -self.dir[b] };
            let denom = cross(ub, v);
            if denom == 0.0 {
                continue;
            }
            let s = r * cross(ua, v) / denom;
            let t = r * cross(ua, ub) / denom;
            if t > 0.0 && s > 0.0 && s < self.length[b] && t.is_finite() && best.is_none_or(|(_, bt)| t < bt) {
                let hit = self.point(b, b_start, s);
                if hit.r > 0.0 {
                    best = Some((hit, t));
                }
            }
        }
        best
    }
}

struct State {
    v: Vec3,
    time: f64,
    w: f64,
    x_w: Kahan,
    q_hot: Kahan,
    q_cold: Kahan,
}

/// Event-driven run of `n_collisions` wall collisions (any wall).
pub fn engine_run<R: Rng + ?Sized>(
    params: &EngineParams,
    n_collisions: u64,
    rng: &mut R,
) -> Result<EngineRecord, EngineError> {
    engine_run_with(params, &EngineRunOptions::new(n_collisions), rng)
}

pub fn engine_run_with<R: Rng + ?Sized>(
    params: &EngineParams,
    options: &EngineRunOptions,
    rng: &mut R,
) -> Result<EngineRecord, EngineError> {
    params.validate()?;
    if options.n_collisions == 0 || options.n_collisions <= options.burn_in {
        return Err(EngineError::InvalidParams(format!(
            "n_collisions ({}) must be >= 1 and exceed burn_in ({})",
            options.n_collisions, options.burn_in
        )));
    }
    let table = params.table()?;
    let law = ReflectionLaw::maxwell_smoluchowski(2).with_mass(params.particle_mass);
    let (m1, m2, f) = (params.belt_mass, params.particle_mass, params.force);
    let accel = f / m1;

    let h = params.side * 3f64.sqrt() / 2.0;
    let wedges = Wedges::new(&table);
    let v0 = to_global(&sample_maxwellian(params.t_hot, m2, 2, rng), &wedges.normal(HOT), 2);
    let mut s = State {
        v: v0,
        time: 0.0,
        w: 0.0,
        x_w: Kahan::default(),
        q_hot: Kahan::default(),
        q_cold: Kahan::default(),
    };
    let energy = |s: &State| 0.5 * m1 * s.w * s.w + 0.5 * m2 * s.v.norm_squared();
    let e_start = energy(&s);
    let bound = 1e-9 * e_start.abs().max(1.0);

    let mut record = EngineRecord {
        residual_bound: bound,
        ..Default::default()
    };
    let mut baseline = (0.0, 0.0, 0.0, 0.0, 0.0);
    let centroid = Point::new(params.side / 2.0, -h / 3.0);
    let (id, pos, t) = table.first_hit(centroid, s.v.xy(), None)?;
    let mut next = (wedges.point(id, true, pos), t);

    for k in 0..options.n_collisions {
        let (at, dt) = next;
        let id = at.wall;
        // free flight, belt under constant force
        s.x_w.add(s.w * dt + 0.5 * accel * dt * dt);
        s.w += accel * dt;
        s.time += dt;
        let normal = wedges.normal(id);
        let incoming = s.v;
        let mut found = None;
        if id == BELT {
            let (v, w) = belt_collision([incoming.x, incoming.y], s.w, m1, m2);
            let out = Vec3::new(v[0], v[1], 0.0);
            match wedges.flight(&at, out.xy()) {
                Some(hit) => found = Some((out, w, hit)),
                None => {
                    record.aborted = Some("deterministic flight after a belt collision ends in a corner".into());
                }
            }
        } else {
            let component = &table.components()[id];
            for _ in 0..MAX_RESAMPLES {
                let out = match reflect(&law, component, &incoming, &normal, rng) {
                    Ok((out, _)) => out,
                    Err(e) => {
                        record.aborted = Some(format!("reflection failed: {e}"));
                        break;
                    }
                };
                if let Some(hit) = wedges.flight(&at, out.xy()) {
                    found = Some((out, s.w, hit));
                    break;
                }
            }
            if found.is_none() && record.aborted.is_none() {
                record.aborted = Some(format!("every one of {MAX_RESAMPLES} reflections ends in a corner"));
            }
        }
        let Some((out, w, hit)) = found else { break };
        let heat = 0.5 * m2 * (out.norm_squared() - incoming.norm_squared());
        match id {
            HOT => s.q_hot.add(heat),
            COLD => s.q_cold.add(heat),
            _ => {}
        }
        s.v = out;
        s.w = w;
        next = hit;
        record.hits[id] += 1;
        record.collisions += 1;

        let e = energy(&s);
        let work = f * s.x_w.sum;
        if !(e.is_finite() && work.is_finite() && s.time.is_finite()) {
            return Err(EngineError::Aborted {
                collisions: k + 1,
                reason: "non-finite state".into(),
            });
        }
        let residual = (e - e_start - s.q_hot.sum - s.q_cold.sum - work).abs();
        record.max_residual = record.max_residual.max(residual);
        if k + 1 == options.burn_in {
            baseline = (s.x_w.sum, s.q_hot.sum, s.q_cold.sum, work, s.time);
        }
        let index = (k + 1).saturating_sub(options.burn_in);
        if k + 1 >= options.burn_in
            && (index % options.stride.max(1) == 0 || k + 1 == options.n_collisions)
        {
            record.t.push(s.time - baseline.4);
            record.x_w.push(s.x_w.sum - baseline.0);
            record.w.push(s.w);
            record.q_hot.push(s.q_hot.sum - baseline.1);
            record.q_cold.push(s.q_cold.sum - baseline.2);
            record.work.push(work - baseline.3);
            record.energy.push(e);
            record.residual.push(residual);
        }
    }
    if options.burn_in == 0 {
        // prepend the initial state
        record.t.insert(0, 0.0);
        record.x_w.insert(0, 0.0);
        record.w.insert(0, 0.0);
        record.q_hot.insert(0, 0.0);
        record.q_cold.insert(0, 0.0);
        record.work.insert(0, 0.0);
        record.energy.insert(0, e_start);
        record.residual.insert(0, 0.0);
    }
    if record.t.len() < 2 {
        return Err(EngineError::Aborted {
            collisions: record.collisions,
            reason: record.aborted.clone().unwrap_or_else(|| "no samples recorded".into()),
        });
    }
    Ok(record)
}

/// Efficiencies at sample `k` of a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    /// `-W / Q_h`.
    pub epsilon: f64,
    /// `1 + Q_c / Q_h`.
    pub epsilon_bar: f64,
    /// `(E - E(0)) / Q_h`, equal to `epsilon_bar - epsilon`.
    pub storage: f64,
}

pub fn efficiency_at(record: &EngineRecord, k: usize) -> Result<Efficiency, EngineError> {
    let qh = record.q_hot[k];
    if qh == 0.0 {
        return Err(EngineError::UndefinedEfficiency);
    }
    Ok(Efficiency {
        epsilon: -record.work[k] / qh,
        epsilon_bar: 1.0 + record.q_cold[k] / qh,
        storage: (record.energy[k] - record.energy[0]) / qh,
    })
}

/// Efficiencies at the end of the record.
pub fn efficiency(record: &EngineRecord) -> Result<Efficiency, EngineError> {
    efficiency_at(record, record.last())
}

/// Per-run quantities kept for ensemble statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineRunSummary {
    pub displacement: f64,
    pub duration: f64,
    pub q_hot: f64,
    pub q_cold: f64,
    pub work: f64,
    pub energy_change: f64,
    pub max_residual: f64,
    pub residual_bound: f64,
    pub aborted: bool,
}

impl EngineRunSummary {
    pub fn from_record(r: &EngineRecord) -> Self {
        let k = r.last();
        Self {
            displacement: r.x_w[k] - r.x_w[0],
            duration: r.t[k] - r.t[0],
            q_hot: r.q_hot[k],
            q_cold: r.q_cold[k],
            work: r.work[k],
            energy_change: r.energy[k] - r.energy[0],
            max_residual: r.max_residual,
            residual_bound: r.residual_bound,
            aborted: r.aborted.is_some(),
        }
    }

    pub fn drift_rate(&self) -> f64 {
        self.displacement / self.duration
    }
}

/// Ensemble statistics over independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineEnsemble {
    pub runs: Vec<EngineRunSummary>,
    pub drift_rate: RunningStats,
    pub displacement: RunningStats,
    pub q_hot: RunningStats,
    pub q_cold: RunningStats,
    pub work: RunningStats,
    /// `-mean(W) / mean(Q_h)` with its delta-method standard error.
    pub epsilon: (f64, f64),
    /// `1 + mean(Q_c) / mean(Q_h)` with its delta-method standard error.
    pub epsilon_bar: (f64, f64),
    pub aborted: usize,
    pub first_law_violations: usize,
}

/// SE of `mean(a) / mean(b)` from paired samples.
fn ratio_se(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let r = ma / mb;
    let var = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - r * y).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (var / n).sqrt() / mb.abs()
}

impl EngineEnsemble {
    /// Statistics over the runs that completed their horizon; aborted runs
    /// are only counted.
    pub fn from_runs(all: Vec<EngineRunSummary>) -> Self {
        Self::from_outcomes(all.into_iter().map(Some).collect())
    }

    /// As [`Self::from_runs`], with `None` for runs that failed outright.
    pub fn from_outcomes(outcomes: Vec<Option<EngineRunSummary>>) -> Self {
        let aborted = outcomes.iter().filter(|r| r.is_none_or(|r| r.aborted)).count();
        let runs: Vec<EngineRunSummary> = outcomes.into_iter().flatten().filter(|r| !r.aborted).collect();
        let drift_rate = runs.iter().map(|r| r.drift_rate()).collect();
        let displacement = runs.iter().map(|r| r.displacement).collect();
        let q_hot: RunningStats = runs.iter().map(|r| r.q_hot).collect();
        let q_cold: RunningStats = runs.iter().map(|r| r.q_cold).collect();
        let work: RunningStats = runs.iter().map(|r| r.work).collect();
        let qh: Vec<f64> = runs.iter().map(|r| r.q_hot).collect();
        let qc: Vec<f64> = runs.iter().map(|r| r.q_cold).collect();
        let neg_w: Vec<f64> = runs.iter().map(|r| -r.work).collect();
        let epsilon = (-work.mean() / q_hot.mean(), ratio_se(&neg_w, &qh));
        let epsilon_bar = (1.0 + q_cold.mean() / q_hot.mean(), ratio_se(&qc, &qh));
        Self {
            aborted,
            first_law_violations: runs.iter().filter(|r| r.max_residual >= r.residual_bound).count(),
            runs,
            drift_rate,
            displacement,
            q_hot,
            q_cold,
            work,
            epsilon,
            epsilon_bar,
        }
    }

    pub fn epsilon_ci(&self) -> (f64, f64) {
        (self.epsilon.0 - Z95 * self.epsilon.1, self.epsilon.0 + Z95 * self.epsilon.1)
    }

    pub fn epsilon_bar_ci(&self) -> (f64, f64) {
        (
            self.epsilon_bar.0 - Z95 * self.epsilon_bar.1,
            self.epsilon_bar.0 + Z95 * self.epsilon_bar.1,
        )
    }
}

/// Independent runs on streams `lanes::ENGINE + run`, collected in run order.
/// Aborted runs are excluded from the statistics and counted.
pub fn engine_ensemble(
    params: &EngineParams,
    options: &EngineRunOptions,
    runs: usize,
    master_seed: u64,
) -> Result<EngineEnsemble, EngineError> {
    let summaries = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(master_seed, lanes::ENGINE + r as u64);
            match engine_run_with(params, options, &mut rng) {
                Ok(rec) => Ok(Some(EngineRunSummary::from_record(&rec))),
                Err(EngineError::Aborted { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EngineEnsemble::from_outcomes(summaries))
}
