//! Entropy production per collision: heat exchanged at each wall divided by
//! the wall temperature (Boltzmann constant 1), plus closed forms for the two
//! plates and the three-temperature triangle.

use nalgebra::DMatrix;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::BoundaryComponent;
use crate::rng::{lanes, RngStream};
use crate::sampling::MomentSet;
use crate::stationary::{delta_method, stationary_energies, StationaryError, TransitionMatrix};
use crate::stats::RunningStats;

/// Agreement required between the two summation orders when `p` is exactly
/// area-balanced.
pub const FORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("the heat and pair-flux forms disagree by {0:e}")]
    FormMismatch(f64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// `-sum_j Q_j / T_j`.
    pub e_p: f64,
    /// The same rate summed over pairs of components.
    pub e_p_pair_form: f64,
    /// Mean energy given to the gas per collision at each component,
    /// `Q_j = A_j (E+_j - E-_j)` with `A_j` the normalized boundary measure.
    pub heats: Vec<f64>,
    /// `pair_fluxes[(j, i)]` is the part of `Q_j` exchanged with component `i`.
    pub pair_fluxes: DMatrix<f64>,
    pub potential: Option<f64>,
    /// Standard error of `e_p` when the transition matrix is estimated.
    pub se: Option<f64>,
    pub temperatures: Vec<f64>,
}

impl EntropyReport {
    /// `e_p` including the potential contribution, when one was attached.
    pub fn total(&self) -> f64 {
        self.e_p + self.potential.unwrap_or(0.0)
    }

    pub fn with_potential(mut self, term: f64) -> Self {
        self.potential = Some(term);
        self
    }
}

fn area_balanced(p: &TransitionMatrix) -> bool {
    p.area_balance().iter().all(|(v, _)| (v - 1.0).abs() <= 1e-12)
}

pub(crate) fn report_from_p(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    moments: &MomentSet,
) -> Result<EntropyReport, EntropyError> {
    let n = components.len();
    if p.len() != n {
        return Err(EntropyError::Dimension(format!(
            "{} x {} transition matrix for {n} components",
            p.len(),
            p.len()
        )));
    }
    let (mix, energies) = stationary_energies(p, components, moments)?;
    let areas = &mix.areas;
    let temperatures: Vec<f64> = components.iter().map(|c| c.temperature).collect();
    let heats: Vec<f64> = (0..n)
        .map(|j| areas[j] * (energies.post[j] - energies.pre[j]))
        .collect();
    let e_p = -(0..n).map(|j| heats[j] / temperatures[j]).sum::<f64>();
    let pair_fluxes = DMatrix::from_fn(n, n, |j, i| {
        areas[i] * p.p[(i, j)] * (energies.post[j] - energies.post[i])
    });
    let e_p_pair_form = -(0..n)
        .map(|j| (0..n).map(|i| pair_fluxes[(j, i)]).sum::<f64>() / temperatures[j])
        .sum::<f64>();
    Ok(EntropyReport {
        e_p,
        e_p_pair_form,
        heats,
        pair_fluxes,
        potential: None,
        se: None,
        temperatures,
    })
}

/// Entropy production of the stationary chain for a given transition matrix.
///
/// Both summation orders are evaluated. They coincide when `p` balances the
/// boundary measure exactly, which is checked; for an estimated matrix the
/// difference is left in the report as a diagnostic and the standard error
/// comes from the delta method over the multinomial tallies.
pub fn entropy_production(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    moments: &MomentSet,
) -> Result<EntropyReport, EntropyError> {
    let mut report = report_from_p(p, components, moments)?;
    let scale = report.heats.iter().zip(&report.temperatures).map(|(q, t)| (q / t).abs()).sum::<f64>().max(1.0);
    let gap = (report.e_p - report.e_p_pair_form).abs();
    if area_balanced(p) && gap > FORM_TOLERANCE * scale {
        return Err(EntropyError::FormMismatch(gap));
    }
    if !p.is_exact() {
        report.se = Some(delta_method_se(p, components, moments)?);
    }
    Ok(report)
}

/// Delta-method standard error of `e_p` for a tallied transition matrix.
pub fn delta_method_se(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    moments: &MomentSet,
) -> Result<f64, EntropyError> {
    Ok(delta_method(p, |q| report_from_p(q, components, moments).map(|r| vec![r.e_p]))?[0])
}

/// Bootstrap standard error of `e_p`: each row's tallies are redrawn from
/// a multinomial with the estimated probabilities.
pub fn bootstrap_se(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    moments: &MomentSet,
    resamples: usize,
    seed: u64,
) -> Result<f64, EntropyError> {
    let n = p.len();
    let rows = p.row_counts();
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, lanes::BOOTSTRAP + b as u64);
            let mut counts = DMatrix::<u64>::zeros(n, n);
            for i in 0..n {
                let mut left = rows[i];
                let mut mass = 1.0;
                for j in 0..n {
                    let draw = if j + 1 == n || left == 0 {
                        left
                    } else {
                        let q = (p.p[(i, j)] / mass).clamp(0.0, 1.0);
                        Binomial::new(left, q).expect("probability in [0, 1]").sample(&mut rng)
                    };
                    counts[(i, j)] = draw;
                    left -= draw;
                    mass -= p.p[(i, j)];
                }
            }
            let resampled = TransitionMatrix::from_counts(counts, p.areas.clone(), None)?;
            Ok(report_from_p(&resampled, components, moments)?.e_p)
        })
        .collect::<Result<_, EntropyError>>()?;
    Ok(values.into_iter().collect::<RunningStats>().std_dev())
}

fn check_pair(alpha: [f64; 2], t: [f64; 2]) -> Result<(), EntropyError> {
    for (a, t) in alpha.iter().zip(t) {
        if !(*a > 0.0 && *a <= 1.0) || !(t.is_finite() && t > 0.0) {
            return Err(EntropyError::InvalidParameters(format!(
                "need alpha in (0, 1] and T > 0, got alpha = {a}, T = {t}"
            )));
        }
    }
    Ok(())
}

/// Closed form for two parallel plates.
pub fn two_plates_entropy(
    alpha1: f64,
    alpha2: f64,
    t1: f64,
    t2: f64,
    moments: &MomentSet,
) -> Result<EntropyReport, EntropyError> {
    check_pair([alpha1, alpha2], [t1, t2])?;
    let c = 1.0 - (1.0 - alpha1) * (1.0 - alpha2);
    let k = alpha1 * alpha2 / (2.0 * c);
    let q = k * (moments.mean_energy(t1) - moments.mean_energy(t2));
    let e_p = -(moments.coefficient * k) * (t1 - t2) * (1.0 / t1 - 1.0 / t2);
    Ok(EntropyReport {
        e_p,
        e_p_pair_form: q / t2 - q / t1,
        heats: vec![q, -q],
        pair_fluxes: DMatrix::from_row_slice(2, 2, &[0.0, q, -q, 0.0]),
        potential: None,
        se: None,
        temperatures: vec![t1, t2],
    })
}

/// Heats and pair fluxes for the equilateral triangle with one temperature
/// and accommodation per edge, in closed form. Returns `(Q, Qbar)` with
/// `Q_i = Qbar[(i, i+1)] + Qbar[(i, i+2)]` and `Qbar` antisymmetric.
pub fn three_temperature_heats(
    alpha: [f64; 3],
    temperature: [f64; 3],
    moments: &MomentSet,
) -> Result<([f64; 3], DMatrix<f64>), EntropyError> {
    for i in 0..3 {
        check_pair([alpha[i], 1.0], [temperature[i], 1.0])?;
    }
    let mu: Vec<f64> = temperature.iter().map(|&t| moments.mean_energy(t)).collect();
    let a = alpha;
    let det = 3.0 * (a[0] + a[1] + a[2]) - 2.0 * (a[0] * a[1] + a[0] * a[2] + a[1] * a[2])
        + a[0] * a[1] * a[2];
    let mut bar = DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let k = 3 - i - j;
            bar[(i, j)] = (a[i] * a[j] * (2.0 - a[k]) * (mu[i] - mu[j])
                + a[k] * (a[i] * (mu[i] - mu[k]) - a[j] * (mu[j] - mu[k])))
                / (3.0 * det);
        }
    }
    let q = [0, 1, 2].map(|i| bar[(i, (i + 1) % 3)] + bar[(i, (i + 2) % 3)]);
    Ok((q, bar))
}

/// Entropy production of the three-temperature triangle from the closed form.
pub fn three_temperature_entropy(
    alpha: [f64; 3],
    temperature: [f64; 3],
    moments: &MomentSet,
) -> Result<f64, EntropyError> {
    let (q, _) = three_temperature_heats(alpha, temperature, moments)?;
    Ok(-(0..3).map(|i| q[i] / temperature[i]).sum::<f64>())
}

/// Contribution of a potential that is constant on each component:
/// `-sum_ij A_i p_ij (phi_j - phi_i) / T_i`.
pub fn potential_term(
    p: &TransitionMatrix,
    components: &[BoundaryComponent],
    phi: &[f64],
) -> Result<f64, EntropyError> {
    let n = components.len();
    if p.len() != n || phi.len() != n {
        return Err(EntropyError::Dimension(format!(
            "{} components, {} x {} matrix, {} potential values",
            n,
            p.len(),
            p.len(),
            phi.len()
        )));
    }
    if let Some(bad) = phi.iter().find(|x| !x.is_finite()) {
        return Err(EntropyError::InvalidParameters(format!("potential value {bad}")));
    }
    let total: f64 = components.iter().map(|c| c.area).sum();
    let mut sum = 0.0;
    for i in 0..n {
        let a = components[i].area / total;
        for j in 0..n {
            sum += a * p.p[(i, j)] * (phi[j] - phi[i]) / components[i].temperature;
        }
    }
    Ok(-sum)
}
