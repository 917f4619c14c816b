use std::f64::consts::PI;

use approx::assert_relative_eq;
use billiards::chain::*;
use billiards::geometry::*;
use billiards::sampling::*;
use billiards::stationary::*;
use nalgebra::{DMatrix, DVector};

fn triangle(t: [f64; 3], a: [f64; 3]) -> Table {
    Table::equilateral_triangle(1.0, [0, 1, 2].map(|i| Thermostat::new(t[i], a[i]))).unwrap()
}

fn disc(ratio: f64) -> Table {
    Table::disc_union(1.0, ratio, [Thermostat::new(1.0, 1.0), Thermostat::new(2.0, 1.0)]).unwrap()
}

#[test]
fn triangle_linear_system() {
    let table = triangle([1.0, 2.0, 3.0], [0.4; 3]);
    let sys = build_linear_system(&triangle_matrix(1.0), table.components()).unwrap();
    for j in 0..3 {
        for k in 0..3 {
            let want = if j == k { 0.0 } else { 0.6 / 2.0 };
            assert_relative_eq!(sys.q[(j, k)], want, epsilon = 1e-15);
        }
        assert_relative_eq!(sys.pi_weights[j], 0.4 / 3.0, epsilon = 1e-15);
    }
    let full = triangle([1.0, 2.0, 3.0], [1.0; 3]);
    let sys = build_linear_system(&triangle_matrix(1.0), full.components()).unwrap();
    assert_eq!(sys.q, DMatrix::zeros(3, 3));
}

#[test]
fn solve_matches_neumann_series() {
    let table = triangle([1.0, 2.0, 3.0], [0.5; 3]);
    let sys = build_linear_system(&triangle_matrix(1.0), table.components()).unwrap();
    let mix = solve_stationary(&sys).unwrap();
    let pi = DMatrix::from_diagonal(&DVector::from_vec(sys.pi_weights.clone()));
    let mut term = pi.clone();
    let mut sum = DMatrix::zeros(3, 3);
    for _ in 0..200 {
        sum += &term;
        term = &sys.q * term;
    }
    assert!((&mix.weights - &sum).amax() < 1e-8);
    assert!(mix.fixed_point_residual < 1e-10);
    for i in 0..3 {
        assert_relative_eq!(mix.mass(i), 1.0 / 3.0, max_relative = 1e-12);
        assert!(mix.weights.row(i).iter().all(|&c| c >= 0.0));
    }
}

#[test]
fn two_plate_energies() {
    let (a1, a2) = (0.3, 0.8);
    let table = Table::two_plates(1.0, [Thermostat::new(2.0, a1), Thermostat::new(1.0, a2)]).unwrap();
    let moments = MomentSet::quadrature(3);
    let (_, e) = stationary_energies(&two_plates_matrix(), table.components(), &moments).unwrap();
    let c = 1.0 - (1.0 - a1) * (1.0 - a2);
    let expected = a1 * a2 / (2.0 * c) * (moments.mean_energy(2.0) - moments.mean_energy(1.0));
    // conditional energies times the restricted mass 1/2
    assert_relative_eq!(0.5 * (e.post[0] - e.pre[0]), expected, max_relative = 1e-12);
    assert_relative_eq!(e.pre[0], e.post[1], max_relative = 1e-14);
}

#[test]
fn equal_temperatures_give_equal_energies() {
    let table = triangle([1.7; 3], [0.2, 0.5, 0.9]);
    let moments = MomentSet::quadrature(2);
    let (_, e) = stationary_energies(&triangle_matrix(1.0), table.components(), &moments).unwrap();
    for i in 0..3 {
        assert_relative_eq!(e.post[i], moments.mean_energy(1.7), max_relative = 1e-12);
        assert_relative_eq!(e.pre[i], moments.mean_energy(1.7), max_relative = 1e-12);
    }
}

#[test]
fn temperature_scaling() {
    let moments = MomentSet::quadrature(2);
    let base = triangle([1.0, 2.0, 3.0], [0.3, 0.6, 0.9]);
    let scaled = triangle([2.5, 5.0, 7.5], [0.3, 0.6, 0.9]);
    let (m1, e1) = stationary_energies(&triangle_matrix(1.0), base.components(), &moments).unwrap();
    let (m2, e2) = stationary_energies(&triangle_matrix(1.0), scaled.components(), &moments).unwrap();
    assert!((&m1.weights - &m2.weights).amax() < 1e-15);
    for i in 0..3 {
        assert_relative_eq!(e2.post[i], 2.5 * e1.post[i], max_relative = 1e-12);
        assert_relative_eq!(e2.pre[i], 2.5 * e1.pre[i], max_relative = 1e-12);
    }
}

#[test]
fn full_accommodation_energies_match_simulation() {
    let t = [1.0, 2.0, 3.0];
    let table = triangle(t, [1.0; 3]);
    let moments = MomentSet::quadrature(2);
    let (_, e) = stationary_energies(&triangle_matrix(1.0), table.components(), &moments).unwrap();
    for i in 0..3 {
        assert_relative_eq!(e.post[i], moments.mean_energy(t[i]), max_relative = 1e-12);
        let others = (moments.mean_energy(t[(i + 1) % 3]) + moments.mean_energy(t[(i + 2) % 3])) / 2.0;
        assert_relative_eq!(e.pre[i], others, max_relative = 1e-12);
    }
    let law = ReflectionLaw::maxwell_smoluchowski(2);
    let (_, parts) = run_ensemble(&table, &law, StartLaw::LocalMaxwellian, 20, &RunOptions::new(50_000, 1_000), 31).unwrap();
    for i in 0..3 {
        let post: billiards::stats::RunningStats = parts.iter().map(|p| p.post_energy[i].mean()).collect();
        let pre: billiards::stats::RunningStats = parts.iter().map(|p| p.pre_energy[i].mean()).collect();
        assert!((post.mean() - e.post[i]).abs() < 4.0 * post.std_error(), "post {i}");
        assert!((pre.mean() - e.pre[i]).abs() < 4.0 * pre.std_error(), "pre {i}");
    }
}

#[test]
fn estimated_triangle_matrix() {
    let table = triangle([1.0; 3], [1.0; 3]);
    let p = estimate_transition_matrix(&table, 1_000_000, 5).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 0.0 } else { 0.5 };
            assert!((p.p[(i, j)] - want).abs() <= 4.0 * p.se[(i, j)].max(1e-300), "{i}{j}");
        }
    }
    check_invariants(&p);
}

fn check_invariants(p: &TransitionMatrix) {
    for s in p.row_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
    for (value, se) in p.area_balance() {
        assert!((value - 1.0).abs() <= 4.0 * se, "{value} {se}");
    }
    for (_, d, se) in p.detailed_balance() {
        assert!(d.abs() <= 4.0 * se, "{d} {se}");
    }
}

#[test]
fn estimated_disc_union_invariants() {
    for ratio in [0.1, 0.5, 0.9] {
        let p = estimate_transition_matrix(&disc(ratio), 200_000, 6).unwrap();
        check_invariants(&p);
    }
}

/// Probability that a cosine-law chord from the left half of the unit
/// circle ends on the right half, by a midpoint grid over the start angle
/// and the direction.
fn half_disc_oracle(m: usize) -> f64 {
    let mut hit = 0.0;
    let mut total = 0.0;
    for a in 0..m {
        let phi = PI / 2.0 + PI * (a as f64 + 0.5) / m as f64;
        let q = (phi.cos(), phi.sin());
        for b in 0..m {
            let theta = -PI / 2.0 + PI * (b as f64 + 0.5) / m as f64;
            let w = theta.cos();
            // inward normal rotated by theta
            let n = (-q.0, -q.1);
            let d = (n.0 * theta.cos() - n.1 * theta.sin(), n.0 * theta.sin() + n.1 * theta.cos());
            // second root of |q + t d| = 1
            let t = -2.0 * (q.0 * d.0 + q.1 * d.1);
            let x = q.0 + t * d.0;
            total += w;
            if x > 0.0 {
                hit += w;
            }
        }
    }
    hit / total
}

#[test]
fn coincident_discs_match_quadrature_oracle() {
    let oracle = half_disc_oracle(2000);
    let p = estimate_transition_matrix(&disc(0.0), 1_000_000, 7).unwrap();
    assert!((p.p[(0, 1)] - oracle).abs() <= 4.0 * p.se[(0, 1)], "{} vs {oracle}", p.p[(0, 1)]);
    assert!((p.p[(1, 0)] - oracle).abs() <= 4.0 * p.se[(1, 0)]);
}

#[test]
fn estimate_is_independent_of_worker_count() {
    let table = disc(0.4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_transition_matrix(&table, 300_000, 8).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn plates_matrix_is_exact() {
    let table = Table::two_plates(1.0, [Thermostat::new(1.0, 1.0); 2]).unwrap();
    let p = estimate_transition_matrix(&table, 10_000, 1).unwrap();
    assert_eq!(p.p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    assert!(matches!(estimate_transition_matrix(&table, 10, 1), Err(StationaryError::TooFewSamples(10))));
}
