//! The random billiard Markov chain: free flight to the wall followed by a
//! random reflection, with per-component accumulators.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, PhasePoint, PreCollisionPoint, Table, TableKind, GEOM_TOL};
use crate::rng::{lanes, RngStream};
use crate::sampling::{
    reflect, sample_knudsen_cosine, sample_maxwellian, to_global, Branch, ReflectionLaw,
    SamplingError,
};
use crate::stats::RunningStats;

/// Reflections redrawn after a corner or grazing flight before a trajectory
/// is abandoned.
pub const MAX_RESAMPLES: usize = 100;

/// Default number of discarded collisions.
pub const DEFAULT_BURN_IN: u64 = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("no traceable reflection after {resamples} draws at step {step}: {last}")]
    Aborted {
        step: u64,
        resamples: usize,
        last: GeometryError,
    },
    #[error("invalid chain segment: {0}")]
    InvalidSegment(String),
    #[error("invalid run parameters: {0}")]
    InvalidRun(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionRecord {
    pub step: u64,
    pub component: usize,
    pub pre_energy: f64,
    pub post_energy: f64,
    pub branch: Branch,
}

/// Abandoned trajectory diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AbortInfo {
    pub steps_completed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub visits: Vec<u64>,
    /// Post-collision kinetic energy per component.
    pub post_energy: Vec<RunningStats>,
    /// Pre-collision kinetic energy per component.
    pub pre_energy: Vec<RunningStats>,
    /// `transitions[i][j]` counts recorded collisions at `i` followed by one at `j`.
    pub transitions: Vec<Vec<u64>>,
    /// Collisions simulated, burn-in included.
    pub steps: u64,
    pub burn_in: u64,
    pub free_path: RunningStats,
    /// Per-trajectory estimate of the entropy production per collision.
    pub entropy_rate: RunningStats,
    /// Post-collision speeds, thinned, per component.
    pub speed_samples: Vec<Vec<f64>>,
    pub aborted: Vec<AbortInfo>,
}

impl TrajectorySummary {
    pub fn new(components: usize, burn_in: u64) -> Self {
        Self {
            visits: vec![0; components],
            post_energy: vec![RunningStats::new(); components],
            pre_energy: vec![RunningStats::new(); components],
            transitions: vec![vec![0; components]; components],
            steps: 0,
            burn_in,
            free_path: RunningStats::new(),
            entropy_rate: RunningStats::new(),
            speed_samples: vec![Vec::new(); components],
            aborted: Vec::new(),
        }
    }

    pub fn recorded(&self) -> u64 {
        self.visits.iter().sum()
    }

    pub fn visit_fractions(&self) -> Vec<f64> {
        let n = self.recorded() as f64;
        self.visits.iter().map(|&v| v as f64 / n).collect()
    }

    /// Mean over recorded collisions of `-(post - pre) / T` at the struck
    /// component, the time-average form of the entropy production rate.
    pub fn entropy_production(&self, temperatures: &[f64]) -> f64 {
        let n = self.recorded() as f64;
        -self
            .visits
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let heat = self.post_energy[j].mean() - self.pre_energy[j].mean();
                if v == 0 {
                    0.0
                } else {
                    v as f64 / n * heat / temperatures[j]
                }
            })
            .sum::<f64>()
    }

    /// Fold another trajectory in. Callers merge in a fixed order so the
    /// floating-point result is reproducible.
    pub fn merge(&mut self, other: &TrajectorySummary) {
        for j in 0..self.visits.len() {
            self.visits[j] += other.visits[j];
            self.post_energy[j].merge(&other.post_energy[j]);
            self.pre_energy[j].merge(&other.pre_energy[j]);
            for k in 0..self.visits.len() {
                self.transitions[j][k] += other.transitions[j][k];
            }
            self.speed_samples[j].extend_from_slice(&other.speed_samples[j]);
        }
        self.steps += other.steps;
        self.burn_in += other.burn_in;
        self.free_path.merge(&other.free_path);
        self.entropy_rate.merge(&other.entropy_rate);
        self.aborted.extend(other.aborted.iter().cloned());
    }
}

fn kinetic(mass: f64, v: &crate::geometry::Vec3) -> f64 {
    0.5 * mass * v.norm_squared()
}

/// Reflect at `hit`, redrawing until the outgoing flight is traceable.
/// Returns the new state, its own landing point and the record.
fn collide<R: Rng + ?Sized>(
    table: &Table,
    law: &ReflectionLaw,
    hit: &PreCollisionPoint,
    step_index: u64,
    rng: &mut R,
) -> Result<(PhasePoint, PreCollisionPoint, CollisionRecord), ChainError> {
    let component = table.component(hit.component)?;
    let normal = table.inward_normal(hit.component, hit.position)?;
    let mut last = None;
    for _ in 0..MAX_RESAMPLES {
        let (velocity, branch) = reflect(law, component, &hit.velocity, &normal, rng)?;
        let next = PhasePoint {
            component: hit.component,
            position: hit.position,
            velocity,
        };
        match table.trace(&next) {
            Ok(next_hit) => {
                let record = CollisionRecord {
                    step: step_index,
                    component: hit.component,
                    pre_energy: kinetic(law.mass, &hit.velocity),
                    post_energy: kinetic(law.mass, &velocity),
                    branch,
                };
                return Ok((next, next_hit, record));
            }
            Err(e @ (GeometryError::CornerHit { .. } | GeometryError::Grazing { .. })) => {
                last = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(ChainError::Aborted {
        step: step_index,
        resamples: MAX_RESAMPLES,
        last: last.expect("at least one draw"),
    })
}

/// One step of the chain: fly from `x` to the wall and reflect.
///
/// A corner or grazing flight out of `x` is returned as an error so that the
/// caller can redraw the reflection that produced `x`.
pub fn step<R: Rng + ?Sized>(
    table: &Table,
    law: &ReflectionLaw,
    x: &PhasePoint,
    rng: &mut R,
) -> Result<(PhasePoint, CollisionRecord), ChainError> {
    let hit = table.trace(x)?;
    let (next, _, record) = collide(table, law, &hit, 0, rng)?;
    Ok((next, record))
}

/// Boundary point drawn uniformly with respect to boundary measure.
pub fn sample_boundary_point<R: Rng + ?Sized>(table: &Table, rng: &mut R) -> (usize, f64) {
    let total = table.total_area();
    let mut u = rng.random::<f64>() * total;
    for c in table.components() {
        if u < c.area || c.id + 1 == table.len() {
            let position = if table.kind() == TableKind::TwoPlates {
                0.0
            } else {
                (u.min(c.area) / c.area) * c.area
            };
            return (c.id, position);
        }
        u -= c.area;
    }
    unreachable!("table has at least one component")
}

/// Initial condition: boundary point by boundary measure and a Maxwellian
/// velocity at `temperature` (or at the struck component's own temperature
/// when `None`). Redraws until the first flight is traceable.
pub fn initial_state<R: Rng + ?Sized>(
    table: &Table,
    law: &ReflectionLaw,
    temperature: Option<f64>,
    rng: &mut R,
) -> Result<PhasePoint, ChainError> {
    let mut last = None;
    for _ in 0..MAX_RESAMPLES {
        let (component, position) = sample_boundary_point(table, rng);
        let t = temperature.unwrap_or(table.components()[component].temperature);
        let normal = table.inward_normal(component, position)?;
        let local = sample_maxwellian(t, law.mass, law.dimension, rng);
        let x = PhasePoint {
            component,
            position,
            velocity: to_global(&local, &normal, law.dimension),
        };
        match table.trace(&x) {
            Ok(_) => return Ok(x),
            Err(e) => last = Some(e),
        }
    }
    Err(ChainError::Aborted {
        step: 0,
        resamples: MAX_RESAMPLES,
        last: last.expect("at least one draw"),
    })
}

/// Unit-speed state distributed by the billiard measure (boundary measure
/// times the cosine law).
pub fn sample_billiard_measure<R: Rng + ?Sized>(
    table: &Table,
    rng: &mut R,
) -> Result<PhasePoint, GeometryError> {
    let (component, position) = sample_boundary_point(table, rng);
    let normal = table.inward_normal(component, position)?;
    let local = sample_knudsen_cosine(table.dimension(), rng);
    Ok(PhasePoint {
        component,
        position,
        velocity: to_global(&local, &normal, table.dimension()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub n_steps: u64,
    pub burn_in: u64,
    /// Keep every `k`-th recorded post-collision speed.
    pub speed_stride: Option<u64>,
    pub max_speed_samples: usize,
}

impl RunOptions {
    pub fn new(n_steps: u64, burn_in: u64) -> Self {
        Self {
            n_steps,
            burn_in,
            speed_stride: None,
            max_speed_samples: usize::MAX,
        }
    }

    pub fn with_speeds(mut self, stride: u64, max_per_component: usize) -> Self {
        self.speed_stride = Some(stride.max(1));
        self.max_speed_samples = max_per_component;
        self
    }
}

/// Run one trajectory of `n_steps` collisions from `x0`.
pub fn run<R: Rng + ?Sized>(
    table: &Table,
    law: &ReflectionLaw,
    x0: &PhasePoint,
    n_steps: u64,
    burn_in: u64,
    rng: &mut R,
) -> Result<TrajectorySummary, ChainError> {
    run_with(table, law, x0, &RunOptions::new(n_steps, burn_in), rng)
}

pub fn run_with<R: Rng + ?Sized>(
    table: &Table,
    law: &ReflectionLaw,
    x0: &PhasePoint,
    options: &RunOptions,
    rng: &mut R,
) -> Result<TrajectorySummary, ChainError> {
    if options.n_steps <= options.burn_in {
        return Err(ChainError::InvalidRun(format!(
            "n_steps ({}) must exceed burn_in ({})",
            options.n_steps, options.burn_in
        )));
    }
    let n = table.len();
    let temperatures: Vec<f64> = table.components().iter().map(|c| c.temperature).collect();
    let mut summary = TrajectorySummary::new(n, options.burn_in);
    let mut hit = table.trace(x0)?;
    let mut previous: Option<usize> = None;
    let mut entropy_sum = 0.0;
    for k in 0..options.n_steps {
        let flight = hit.flight_length;
        let (_, next_hit, record) = match collide(table, law, &hit, k, rng) {
            Ok(r) => r,
            Err(e @ ChainError::Aborted { .. }) => {
                summary.aborted.push(AbortInfo {
                    steps_completed: k,
                    reason: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        summary.steps += 1;
        if k >= options.burn_in {
            let j = record.component;
            summary.visits[j] += 1;
            summary.post_energy[j].push(record.post_energy);
            summary.pre_energy[j].push(record.pre_energy);
            summary.free_path.push(flight);
            entropy_sum -= (record.post_energy - record.pre_energy) / temperatures[j];
            if let Some(i) = previous {
                summary.transitions[i][j] += 1;
            }
            previous = Some(j);
            if let Some(stride) = options.speed_stride {
                let index = k - options.burn_in;
                if index.is_multiple_of(stride) && summary.speed_samples[j].len() < options.max_speed_samples {
                    summary.speed_samples[j].push((2.0 * record.post_energy / law.mass).sqrt());
                }
            }
        }
        hit = next_hit;
    }
    let recorded = summary.recorded();
    if recorded > 0 {
        summary.entropy_rate.push(entropy_sum / recorded as f64);
    }
    Ok(summary)
}

/// How ensemble trajectories are started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartLaw {
    /// Maxwellian at the struck component's own temperature.
    LocalMaxwellian,
    /// Maxwellian at a common temperature.
    Maxwellian(f64),
}

/// Independent trajectories on streams `lanes::CHAIN + index`, merged in
/// index order so the result does not depend on the worker count.
pub fn run_ensemble(
    table: &Table,
    law: &ReflectionLaw,
    start: StartLaw,
    trajectories: usize,
    options: &RunOptions,
    master_seed: u64,
) -> Result<(TrajectorySummary, Vec<TrajectorySummary>), ChainError> {
    let parts: Vec<TrajectorySummary> = (0..trajectories)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(master_seed, lanes::CHAIN + t as u64);
            let temperature = match start {
                StartLaw::LocalMaxwellian => None,
                StartLaw::Maxwellian(t0) => Some(t0),
            };
            let x0 = initial_state(table, law, temperature, &mut rng)?;
            run_with(table, law, &x0, options, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let mut merged = TrajectorySummary::new(table.len(), 0);
    for p in &parts {
        merged.merge(p);
    }
    Ok((merged, parts))
}

fn same_place(table: &Table, a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 == b.0 && (table.kind() == TableKind::TwoPlates || (a.1 - b.1).abs() <= GEOM_TOL * table.diameter().max(1.0) * 10.0)
}

/// Proper time reversal of a chain segment: apply `J o T` to every state and
/// reverse the order.
pub fn proper_time_reversal(
    table: &Table,
    segment: &[PhasePoint],
) -> Result<Vec<PhasePoint>, ChainError> {
    let hits = segment
        .iter()
        .map(|x| table.trace(x))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, pair) in segment.windows(2).enumerate() {
        let landing = (hits[i].component, hits[i].position);
        if !same_place(table, landing, (pair[1].component, pair[1].position)) {
            return Err(ChainError::InvalidSegment(format!(
                "state {} departs from ({}, {}) but state {} lands at ({}, {})",
                i + 1,
                pair[1].component,
                pair[1].position,
                i,
                landing.0,
                landing.1
            )));
        }
    }
    Ok(hits
        .iter()
        .rev()
        .map(|h| PhasePoint {
            component: h.component,
            position: h.position,
            velocity: -h.velocity,
        })
        .collect())
}
