//! Stationary law of the multi-temperature chain: the Knudsen transition
//! matrix between boundary components, the linear system for the stationary
//! speed-law mixture, and the per-component mean energies.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::sample_billiard_measure;
use crate::geometry::{BoundaryComponent, GeometryError, Table, TableKind};
use crate::rng::{lanes, RngStream};
use crate::sampling::{speed_cdf, MomentSet};

/// Samples drawn per independent stream when estimating `p`.
pub const BATCH_SIZE: u64 = 1 << 16;

/// Minimum sample count accepted by [`estimate_transition_matrix`].
pub const MIN_SAMPLES: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(u64),
    #[error("degenerate table: component {0} received no samples")]
    Degenerate(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ill-posed stationary system: {0}")]
    IllPosed(String),
}

/// Transition probabilities of the Knudsen walk between components.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
    /// Tallies; all zero for an exact matrix.
    pub counts: DMatrix<u64>,
    /// Binomial standard errors, zero for an exact matrix.
    pub se: DMatrix<f64>,
    /// Boundary measure of each component (unnormalized).
    pub areas: Vec<f64>,
    pub n_samples: u64,
    pub seed: Option<u64>,
}

impl TransitionMatrix {
    /// Matrix known in closed form.
    pub fn exact(p: DMatrix<f64>, areas: Vec<f64>) -> Self {
        let n = p.nrows();
        Self {
            counts: DMatrix::zeros(n, n),
            se: DMatrix::zeros(n, n),
            p,
            areas,
            n_samples: 0,
            seed: None,
        }
    }

    /// Row-normalized tallies with binomial standard errors.
    pub fn from_counts(
        counts: DMatrix<u64>,
        areas: Vec<f64>,
        seed: Option<u64>,
    ) -> Result<Self, StationaryError> {
        let n = counts.nrows();
        let mut p = DMatrix::zeros(n, n);
        let mut se = DMatrix::zeros(n, n);
        for i in 0..n {
            let row: u64 = counts.row(i).iter().sum();
            if row == 0 {
                return Err(StationaryError::Degenerate(i));
            }
            for j in 0..n {
                let q = counts[(i, j)] as f64 / row as f64;
                p[(i, j)] = q;
                se[(i, j)] = (q * (1.0 - q) / row as f64).sqrt();
            }
        }
        Ok(Self {
            p,
            n_samples: counts.iter().sum(),
            counts,
            se,
            areas,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn is_exact(&self) -> bool {
        self.n_samples == 0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.sum()).collect()
    }

    /// Sample count behind each row.
    pub fn row_counts(&self) -> Vec<u64> {
        self.counts.row_iter().map(|r| r.iter().sum()).collect()
    }

    /// `sum_i p_ij A_i / A_j` for every `j`, with its standard error.
    pub fn area_balance(&self) -> Vec<(f64, f64)> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut value = 0.0;
                let mut var = 0.0;
                for i in 0..n {
                    let w = self.areas[i] / self.areas[j];
                    value += self.p[(i, j)] * w;
                    var += (w * self.se[(i, j)]).powi(2);
                }
                (value, var.sqrt())
            })
            .collect()
    }

    /// `A_i p_ij - A_j p_ji` for `i < j`, with its standard error.
    pub fn detailed_balance(&self) -> Vec<((usize, usize), f64, f64)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = self.areas[i] * self.p[(i, j)] - self.areas[j] * self.p[(j, i)];
                let se = ((self.areas[i] * self.se[(i, j)]).powi(2)
                    + (self.areas[j] * self.se[(j, i)]).powi(2))
                .sqrt();
                out.push(((i, j), d, se));
            }
        }
        out
    }
}

/// Transition matrix of the two-plate table, which alternates.
pub fn two_plates_matrix() -> TransitionMatrix {
    TransitionMatrix::exact(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), vec![1.0, 1.0])
}

/// Transition matrix of the equilateral triangle with one component per edge.
pub fn triangle_matrix(side: f64) -> TransitionMatrix {
    TransitionMatrix::exact(
        DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 0.5 }),
        vec![side; 3],
    )
}

/// Monte Carlo estimate of `p_ij`: boundary points by area, directions by
/// the cosine law, one flight each. Batches of [`BATCH_SIZE`] draws run on
/// streams `lanes::TRANSITIONS + batch`, so the result depends only on
/// `(n_samples, seed)`. Flights ending in a corner are redrawn.
pub fn estimate_transition_matrix(
    table: &Table,
    n_samples: u64,
    seed: u64,
) -> Result<TransitionMatrix, StationaryError> {
    if n_samples < MIN_SAMPLES {
        return Err(StationaryError::TooFewSamples(n_samples));
    }
    let n = table.len();
    let areas: Vec<f64> = table.components().iter().map(|c| c.area).collect();
    if table.kind() == TableKind::TwoPlates {
        let half = n_samples / 2;
        let counts = DMatrix::from_row_slice(2, 2, &[0, n_samples - half, half, 0]);
        return TransitionMatrix::from_counts(counts, areas, Some(seed));
    }
    let batches = n_samples.div_ceil(BATCH_SIZE);
    let partial: Vec<DMatrix<u64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let size = BATCH_SIZE.min(n_samples - b * BATCH_SIZE);
            let mut rng = RngStream::new(seed, lanes::TRANSITIONS + b);
            let mut counts = DMatrix::<u64>::zeros(n, n);
            let mut done = 0;
            while done < size {
                let x = sample_billiard_measure(table, &mut rng)?;
                match table.trace(&x) {
                    Ok(hit) => {
                        counts[(x.component, hit.component)] += 1;
                        done += 1;
                    }
                    Err(GeometryError::CornerHit { .. } | GeometryError::Grazing { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(counts)
        })
        .collect::<Result<_, StationaryError>>()?;
    let counts = partial
        .into_iter()
        .fold(DMatrix::zeros(n, n), |acc, c| acc + c);
    TransitionMatrix::from_counts(counts, areas, Some(seed))
}

/// `Q` and `pi` of the stationary fixed point `c = pi + Q c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub q: DMatrix<f64>,
    /// Weight `A_i alpha_i / sum A` attached to temperature `temperatures[i]`.
    pub pi_weights: Vec<f64>,
    pub temperatures: Vec<f64>,
    /// Normalized boundary measure of each component.
    pub areas: Vec<f64>,
}

pub fn build_linear_system(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
) -> Result<LinearSystem, StationaryError> {
    let n = components.len();
    if p.len() != n || p.areas.len() != n {
        return Err(StationaryError::Dimension(format!(
            "transition matrix is {}x{} but there are {n} components",
            p.len(),
            p.len()
        )));
    }
    let total: f64 = components.iter().map(|c| c.area).sum();
    let areas: Vec<f64> = components.iter().map(|c| c.area / total).collect();
    let q = DMatrix::from_fn(n, n, |i, j| {
        (1.0 - components[i].accommodation) * p.p[(i, j)] * areas[i] / areas[j]
    });
    Ok(LinearSystem {
        q,
        pi_weights: (0..n).map(|i| areas[i] * components[i].accommodation).collect(),
        temperatures: components.iter().map(|c| c.temperature).collect(),
        areas,
    })
}

/// Stationary post-collision speed law: component `i` carries the restricted
/// measure `sum_k weights[i, k] mu_k`, where `mu_k` is the wall Maxwellian
/// at `temperatures[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedLawMixture {
    pub weights: DMatrix<f64>,
    pub temperatures: Vec<f64>,
    pub areas: Vec<f64>,
    pub fixed_point_residual: f64,
}

impl SpeedLawMixture {
    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    /// Conditional speed CDF on component `i`.
    pub fn speed_cdf(&self, i: usize, speed: f64, mass: f64, dim: usize) -> f64 {
        let total = self.mass(i);
        (0..self.len())
            .map(|k| self.weights[(i, k)] / total * speed_cdf(speed, self.temperatures[k], mass, dim))
            .sum()
    }
}

/// Solve `c = pi + Q c` by a dense LU factorization.
pub fn solve_stationary(system: &LinearSystem) -> Result<SpeedLawMixture, StationaryError> {
    let n = system.q.nrows();
    let a = DMatrix::identity(n, n) - &system.q;
    let lu = a.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or_else(|| StationaryError::IllPosed("I - Q is singular".into()))?;
    let cond = a.norm() * inverse.norm();
    if !cond.is_finite() || cond > 1e12 {
        return Err(StationaryError::IllPosed(format!(
            "I - Q has condition number {cond:e}; some accommodation is too close to 0"
        )));
    }
    if inverse.iter().any(|&x| x < -1e-12) {
        return Err(StationaryError::IllPosed(
            "(I - Q)^-1 has negative entries; spectral radius of Q is not below 1".into(),
        ));
    }
    let pi = DMatrix::from_diagonal(&DVector::from_vec(system.pi_weights.clone()));
    let weights = (&inverse * &pi).map(|x| x.max(0.0));
    let residual = (&weights - (&pi + &system.q * &weights)).amax();
    Ok(SpeedLawMixture {
        weights,
        temperatures: system.temperatures.clone(),
        areas: system.areas.clone(),
        fixed_point_residual: residual,
    })
}

/// Conditional mean kinetic energies per collision at each component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentEnergies {
    /// Mean post-collision energy.
    pub post: Vec<f64>,
    /// Mean pre-collision energy.
    pub pre: Vec<f64>,
}

pub fn component_energies(
    mix: &SpeedLawMixture,
    p: &TransitionMatrix,
    moments: &MomentSet,
) -> Result<ComponentEnergies, StationaryError> {
    let n = mix.len();
    if p.len() != n {
        return Err(StationaryError::Dimension(format!(
            "mixture has {n} components, transition matrix {}",
            p.len()
        )));
    }
    let post: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| mix.weights[(i, k)] / mix.areas[i] * moments.mean_energy(mix.temperatures[k]))
                .sum()
        })
        .collect();
    let pre = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| p.p[(i, j)] * mix.areas[i] / mix.areas[j] * post[i])
                .sum()
        })
        .collect();
    Ok(ComponentEnergies { post, pre })
}

/// Delta-method standard errors of a vector-valued function of a tallied
/// transition matrix, using central differences and the multinomial
/// covariance of each row. Returns zeros for an exact matrix.
pub fn delta_method<E, F>(p: &TransitionMatrix, f: F) -> Result<Vec<f64>, E>
where
    F: Fn(&TransitionMatrix) -> Result<Vec<f64>, E>,
{
    let base = f(p)?;
    if p.is_exact() {
        return Ok(vec![0.0; base.len()]);
    }
    let n = p.len();
    let h = 1e-6;
    let rows = p.row_counts();
    let mut variance = vec![0.0; base.len()];
    for i in 0..n {
        let mut grads = Vec::with_capacity(n);
        for j in 0..n {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.p[(i, j)] += h;
            minus.p[(i, j)] -= h;
            let (fp, fm) = (f(&plus)?, f(&minus)?);
            grads.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
        }
        let m = rows[i] as f64;
        for (out, var) in variance.iter_mut().enumerate() {
            for j in 0..n {
                for k in 0..n {
                    let pij = p.p[(i, j)];
                    let cov = (if j == k { pij } else { 0.0 } - pij * p.p[(i, k)]) / m;
                    *var += grads[j][out] * cov * grads[k][out];
                }
            }
        }
    }
    Ok(variance.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Convenience: linear system, solve and energies in one call.
pub fn stationary_energies(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    moments: &MomentSet,
) -> Result<(SpeedLawMixture, ComponentEnergies), StationaryError> {
    let system = build_linear_system(p, components)?;
    let mix = solve_stationary(&system)?;
    let energies = component_energies(&mix, p, moments)?;
    Ok((mix, energies))
}
