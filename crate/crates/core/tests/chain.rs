use approx::assert_relative_eq;
use billiards::chain::*;
use billiards::geometry::*;
use billiards::rng::RngStream;
use billiards::sampling::*;
use billiards::stationary::*;
use billiards::stats::*;

fn plates(t: [f64; 2], a: [f64; 2]) -> Table {
    Table::two_plates(1.0, [Thermostat::new(t[0], a[0]), Thermostat::new(t[1], a[1])]).unwrap()
}

fn triangle(t: [f64; 3], a: [f64; 3]) -> Table {
    Table::equilateral_triangle(1.0, [0, 1, 2].map(|i| Thermostat::new(t[i], a[i]))).unwrap()
}

fn disc(t: [f64; 2], a: [f64; 2], ratio: f64) -> Table {
    Table::disc_union(1.0, ratio, [Thermostat::new(t[0], a[0]), Thermostat::new(t[1], a[1])]).unwrap()
}

#[test]
fn plates_alternate() {
    let table = plates([1.0, 1.0], [1.0, 1.0]);
    let law = ReflectionLaw::maxwell_smoluchowski(3);
    let mut rng = RngStream::new(1, 0);
    let x0 = initial_state(&table, &law, None, &mut rng).unwrap();
    let s = run(&table, &law, &x0, 1_000_000, 0, &mut rng).unwrap();
    let f = s.visit_fractions();
    assert!((f[0] - 0.5).abs() <= 1e-6);
    assert_eq!(s.transitions[0][0] + s.transitions[1][1], 0);
    let total: u64 = s.transitions.iter().flatten().sum();
    assert_eq!(total, s.recorded() - 1);
    let (next, record) = step(&table, &law, &x0, &mut rng).unwrap();
    assert_eq!(next.component, 1 - x0.component);
    assert_eq!(record.component, 1 - x0.component);
}

fn visit_check(table: &Table, expected: &[f64], seed: u64) {
    let law = ReflectionLaw::maxwell_smoluchowski(2);
    let options = RunOptions::new(50_000, 100);
    let (merged, parts) = run_ensemble(table, &law, StartLaw::LocalMaxwellian, 20, &options, seed).unwrap();
    assert!(merged.aborted.is_empty());
    let total: u64 = merged.transitions.iter().flatten().sum();
    assert_eq!(total, merged.recorded() - parts.len() as u64);
    for (j, &want) in expected.iter().enumerate() {
        let per_run: RunningStats = parts.iter().map(|p| p.visit_fractions()[j]).collect();
        assert!(
            (per_run.mean() - want).abs() <= 4.0 * per_run.std_error(),
            "component {j}: {} vs {want} (se {})",
            per_run.mean(),
            per_run.std_error()
        );
    }
}

#[test]
fn triangle_visits_are_uniform() {
    visit_check(&triangle([1.0; 3], [1.0; 3]), &[1.0 / 3.0; 3], 2);
}

#[test]
fn symmetric_disc_union_visits_are_even() {
    visit_check(&disc([1.0; 2], [1.0; 2], 0.5), &[0.5, 0.5], 3);
}

#[test]
fn full_accommodation_forgets_the_incoming_velocity() {
    let table = triangle([2.0, 2.0, 2.0], [1.0; 3]);
    let law = ReflectionLaw::maxwell_smoluchowski(2);
    let mut speeds = [Vec::new(), Vec::new()];
    for (k, scale) in [0.1, 30.0].into_iter().enumerate() {
        let mut rng = RngStream::new(4, k as u64);
        for _ in 0..20_000 {
            let mut x = initial_state(&table, &law, None, &mut rng).unwrap();
            x.velocity *= scale;
            let (next, _) = step(&table, &law, &x, &mut rng).unwrap();
            speeds[k].push(next.velocity.norm());
        }
    }
    assert!(ks_two_sample(&speeds[0], &speeds[1]).passes(0.001));
    assert!(ks_one_sample(&speeds[0], |s| speed_cdf(s, 2.0, 1.0, 2)).passes(0.001));
}

#[test]
fn specular_triangle_conserves_energy() {
    let table = triangle([1.0; 3], [1.0; 3]);
    let law = ReflectionLaw::specular(2);
    let mut rng = RngStream::new(5, 0);
    let mut x = initial_state(&table, &law, Some(1.0), &mut rng).unwrap();
    let e0 = 0.5 * x.velocity.norm_squared();
    for _ in 0..10_000 {
        let (next, record) = step(&table, &law, &x, &mut rng).unwrap();
        assert_eq!(record.branch, Branch::Specular);
        assert!((record.post_energy - record.pre_energy).abs() <= 1e-12 * record.pre_energy);
        x = next;
    }
    assert_relative_eq!(0.5 * x.velocity.norm_squared(), e0, max_relative = 1e-9);
}

#[test]
fn specular_branch_records_conserve_energy() {
    let table = triangle([1.0, 3.0, 2.0], [0.4, 0.5, 0.6]);
    let law = ReflectionLaw::maxwell_smoluchowski(2);
    let mut rng = RngStream::new(6, 0);
    let mut x = initial_state(&table, &law, None, &mut rng).unwrap();
    let mut specular = 0;
    for _ in 0..20_000 {
        let (next, record) = step(&table, &law, &x, &mut rng).unwrap();
        if record.branch == Branch::Specular {
            specular += 1;
            assert!((record.post_energy - record.pre_energy).abs() <= 1e-12 * record.pre_energy);
        }
        x = next;
    }
    assert!(specular > 5_000);
}

/// One step from the equal-temperature stationary law leaves the speed law unchanged.
fn stationarity_check(table: &Table, t0: f64, seed: u64) {
    let law = ReflectionLaw::maxwell_smoluchowski(table.dimension());
    let mut rng = RngStream::new(seed, 0);
    let (mut before, mut after) = (Vec::new(), Vec::new());
    while before.len() < 100_000 {
        let x = initial_state(table, &law, Some(t0), &mut rng).unwrap();
        if let Ok((next, _)) = step(table, &law, &x, &mut rng) {
            before.push(x.velocity.norm());
            after.push(next.velocity.norm());
        }
    }
    let r = ks_two_sample(&before, &after);
    assert!(r.passes(0.001), "{r:?}");
    let dim = table.dimension();
    assert!(ks_one_sample(&after, |s| speed_cdf(s, t0, 1.0, dim)).passes(0.001));
}

#[test]
fn equal_temperature_maxwellian_is_stationary() {
    stationarity_check(&plates([1.5, 1.5], [0.2, 0.9]), 1.5, 7);
    stationarity_check(&triangle([1.5; 3], [0.3, 0.7, 0.5]), 1.5, 8);
    stationarity_check(&disc([1.5; 2], [0.25, 0.8], 0.6), 1.5, 9);
}

/// Total-variation distance between binned speed laws at steps k and 2k
/// over an ensemble started far from equilibrium.
fn tv_profile(table: &Table, chains: usize, seed: u64) -> Vec<f64> {
    let law = ReflectionLaw::maxwell_smoluchowski(table.dimension());
    let dim = table.dimension();
    let p = if table.len() == 2 { two_plates_matrix() } else { triangle_matrix(1.0) };
    let mix = solve_stationary(&build_linear_system(&p, table.components()).unwrap()).unwrap();
    let reference = |s: f64| (0..mix.len()).map(|i| mix.mass(i) * mix.speed_cdf(i, s, 1.0, dim)).sum::<f64>();
    let ks = [100u64, 1_000, 10_000];
    let checkpoints: Vec<u64> = ks.iter().flat_map(|&k| [k, 2 * k]).collect();
    let bins = 64;
    let mut hist = vec![vec![0u64; bins]; checkpoints.len()];
    for c in 0..chains {
        let mut rng = RngStream::new(seed, c as u64);
        let mut x = initial_state(table, &law, Some(50.0), &mut rng).unwrap();
        let mut n = 0u64;
        for (slot, &target) in checkpoints.iter().enumerate() {
            while n < target {
                x = step(table, &law, &x, &mut rng).unwrap().0;
                n += 1;
            }
            hist[slot][probability_bin(reference(x.velocity.norm()), bins)] += 1;
        }
    }
    (0..ks.len()).map(|i| total_variation(&hist[2 * i], &hist[2 * i + 1])).collect()
}

#[test]
fn convergence_proxy_decays() {
    for (table, chains) in [
        (plates([1.0, 2.0], [0.01, 0.01]), 2000),
        (triangle([1.0, 2.0, 3.0], [0.01; 3]), 1000),
    ] {
        let tv = tv_profile(&table, chains, 10);
        // three standard deviations of the difference of two null TVs
        let noise = 3.0 * 2f64.sqrt() * tv_noise_sd(chains, 64);
        assert!(tv[0] > tv[1] + noise, "{tv:?}, noise {noise}");
        assert!(tv[2] <= tv[1] + noise, "{tv:?}, noise {noise}");
    }
}

/// Standard deviation of the TV distance between two independent samples of
/// size `n` from the same law over `bins` equal-probability bins, treating
/// the per-bin differences as independent half-normals.
fn tv_noise_sd(n: usize, bins: usize) -> f64 {
    let per_bin = (2.0 / (bins as f64 * n as f64)).sqrt();
    let half_normal_sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
    0.5 * (bins as f64).sqrt() * half_normal_sd * per_bin
}

#[test]
fn double_reversal_is_identity() {
    let pentagon = Table::polygon(
        &[
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.5, 1.0),
            Point::new(1.0, 2.0),
            Point::new(-0.5, 1.0),
        ],
        &[Thermostat::new(1.0, 0.5); 5],
    )
    .unwrap();
    for table in [pentagon, triangle([1.0, 2.0, 3.0], [0.5; 3]), disc([1.0, 2.0], [0.5; 2], 0.3)] {
        let law = ReflectionLaw::maxwell_smoluchowski(2);
        for s in 0..50 {
            let mut rng = RngStream::new(11, s);
            let mut segment = vec![initial_state(&table, &law, None, &mut rng).unwrap()];
            for _ in 0..8 {
                let next = step(&table, &law, segment.last().unwrap(), &mut rng).unwrap().0;
                segment.push(next);
            }
            let reversed = proper_time_reversal(&table, &segment).unwrap();
            assert_eq!(reversed.len(), segment.len());
            let twice = proper_time_reversal(&table, &reversed).unwrap();
            for (a, b) in segment.iter().zip(&twice) {
                assert_eq!(a.component, b.component);
                assert!((a.position - b.position).abs() < 1e-9);
                assert!((a.velocity - b.velocity).norm() < 1e-9 * a.velocity.norm().max(1.0));
            }
        }
    }
}

#[test]
fn reversal_examples_and_errors() {
    let table = plates([1.0, 2.0], [1.0, 1.0]);
    let law = ReflectionLaw::maxwell_smoluchowski(3);
    let mut rng = RngStream::new(12, 0);
    let x0 = initial_state(&table, &law, None, &mut rng).unwrap();
    let single = proper_time_reversal(&table, &[x0]).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].component, 1 - x0.component);
    assert_eq!(single[0].velocity, -x0.velocity);
    let x1 = step(&table, &law, &x0, &mut rng).unwrap().0;
    let rev = proper_time_reversal(&table, &[x0, x1]).unwrap();
    assert_eq!(rev[0].component, x0.component);
    assert_eq!(rev[1].component, x1.component);

    let tri = triangle([1.0; 3], [1.0; 3]);
    let law2 = ReflectionLaw::maxwell_smoluchowski(2);
    let a = initial_state(&tri, &law2, None, &mut rng).unwrap();
    let mut b = step(&tri, &law2, &a, &mut rng).unwrap().0;
    b.position = (b.position + 0.25) % 1.0;
    assert!(matches!(proper_time_reversal(&tri, &[a, b]), Err(ChainError::InvalidSegment(_))));
}

#[test]
fn run_is_deterministic() {
    let table = disc([1.0, 3.0], [0.6, 0.9], 0.4);
    let law = ReflectionLaw::maxwell_smoluchowski(2);
    let options = RunOptions::new(20_000, 1_000);
    let a = run_ensemble(&table, &law, StartLaw::LocalMaxwellian, 4, &options, 99).unwrap().0;
    let b = run_ensemble(&table, &law, StartLaw::LocalMaxwellian, 4, &options, 99).unwrap().0;
    assert_eq!(a, b);
    assert!(matches!(
        run(&table, &law, &initial_state(&table, &law, None, &mut RngStream::new(1, 1)).unwrap(), 10, 10, &mut RngStream::new(1, 2)),
        Err(ChainError::InvalidRun(_))
    ));
}
