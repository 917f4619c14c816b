use std::f64::consts::PI;

use approx::assert_relative_eq;
use billiards::geometry::*;
use proptest::prelude::*;

fn square() -> Table {
    let v = [
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.0, 1.0),
    ];
    Table::polygon(&v, &[Thermostat::new(1.0, 1.0); 4]).unwrap()
}

fn disc_union(ratio: f64) -> Table {
    Table::disc_union(1.0, ratio, [Thermostat::new(1.0, 1.0); 2]).unwrap()
}

/// Both roots of |o + t d - c| = r, solved from the quadratic.
fn ray_circle(o: Point, d: Point, c: Point, r: f64) -> Option<(f64, f64)> {
    let f = o - c;
    let a = d.dot(&d);
    let b = 2.0 * f.dot(&d);
    let k = f.dot(&f) - r * r;
    let disc = b * b - 4.0 * a * k;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
}

/// Exit time from the union of unit discs for a ray leaving disc `from`.
fn union_exit(o: Point, d: Point, centers: &[Point; 2], from: usize) -> f64 {
    let (_, mut end) = ray_circle(o, d, centers[from], 1.0).unwrap();
    if let Some((a, b)) = ray_circle(o, d, centers[1 - from], 1.0) {
        if a <= end && b > end {
            end = b;
        }
    }
    end
}

#[test]
fn square_axis_flight() {
    let t = square();
    let x = PhasePoint { component: 0, position: 0.5, velocity: Vec3::new(0.0, 1.0, 0.0) };
    let hit = t.trace(&x).unwrap();
    // the top edge runs from (1, 1) to (0, 1)
    assert_eq!(hit.component, 2);
    assert_relative_eq!(t.point_at(2, hit.position).unwrap(), Point::new(0.5, 1.0), epsilon = 1e-12);
    assert_eq!(hit.velocity, x.velocity);
    assert_relative_eq!(hit.flight_length, 1.0, epsilon = 1e-12);
}

#[test]
fn plates_swap_with_same_velocity() {
    let t = Table::two_plates(2.0, [Thermostat::new(1.0, 1.0); 2]).unwrap();
    let v = Vec3::new(0.3, -0.4, 1.2);
    let hit = t.trace(&PhasePoint { component: 0, position: 0.0, velocity: v }).unwrap();
    assert_eq!(hit.component, 1);
    assert_eq!(hit.velocity, v);
    assert_relative_eq!(hit.flight_length, 2.0 * v.norm() / 1.2, max_relative = 1e-14);
    assert_eq!(t.inward_normal(0, 0.0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
    assert_eq!(t.inward_normal(1, 0.0).unwrap(), Vec3::new(0.0, 0.0, -1.0));
}

#[test]
fn disc_union_axis_chord_matches_ray_circle_oracle() {
    let t = disc_union(0.5);
    // leftmost point of the left arc, which starts at the upper cusp
    let start_angle = 0.5f64.acos();
    let position = PI - start_angle;
    let origin = t.point_at(0, position).unwrap();
    assert_relative_eq!(origin, Point::new(-1.5, 0.0), epsilon = 1e-12);
    let d = Point::new(1.0, 0.0);
    let hit = t.trace(&PhasePoint { component: 0, position, velocity: Vec3::new(1.0, 0.0, 0.0) }).unwrap();
    assert_eq!(hit.component, 1);
    let expected = union_exit(origin, d, &[Point::new(-0.5, 0.0), Point::new(0.5, 0.0)], 0);
    assert_relative_eq!(hit.flight_length, expected, max_relative = 1e-12);
    assert_relative_eq!(t.point_at(1, hit.position).unwrap(), Point::new(1.5, 0.0), epsilon = 1e-12);
}

#[test]
fn disc_union_random_chords_match_oracle() {
    let t = disc_union(0.3);
    let centers = [Point::new(-0.3, 0.0), Point::new(0.3, 0.0)];
    let mut checked = 0;
    for k in 0..2000 {
        let c = k % 2;
        let pos = t.components()[c].area * ((k as f64 * 0.618_033_988_75).fract() * 0.98 + 0.01);
        let n = t.inward_normal(c, pos).unwrap();
        let angle = ((k as f64 * 0.414_213_562).fract() - 0.5) * 3.0;
        let v = Vec3::new(n.x * angle.cos() - n.y * angle.sin(), n.x * angle.sin() + n.y * angle.cos(), 0.0);
        let origin = t.point_at(c, pos).unwrap();
        let Ok(hit) = t.trace(&PhasePoint { component: c, position: pos, velocity: v }) else { continue };
        let t_exit = union_exit(origin, v.xy(), &centers, c);
        assert_relative_eq!(hit.flight_length, t_exit * v.norm(), max_relative = 1e-9);
        let p = t.point_at(hit.component, hit.position).unwrap();
        let on_circle = (p - centers[hit.component]).norm();
        assert!((on_circle - 1.0).abs() < 1e-9);
        checked += 1;
    }
    assert!(checked > 1900);
}

#[test]
fn disc_union_arc_length_matches_polyline() {
    for ratio in [0.0, 0.1, 0.5, 0.9] {
        let t = disc_union(ratio);
        let expected_angle = 2.0 * (PI - ratio.acos());
        for c in 0..2 {
            let area = t.components()[c].area;
            assert_relative_eq!(area, expected_angle, max_relative = 1e-12);
            let m = 20_000;
            let mut length = 0.0;
            let mut prev = t.point_at(c, 0.0).unwrap();
            for k in 1..=m {
                let p = t.point_at(c, area * k as f64 / m as f64).unwrap();
                length += (p - prev).norm();
                prev = p;
            }
            assert_relative_eq!(length, area, max_relative = 1e-8);
        }
    }
}

#[test]
fn arc_normal_matches_finite_difference_tangent() {
    let t = disc_union(0.5);
    for c in 0..2 {
        let area = t.components()[c].area;
        let pos = area / 2.0;
        let h = 1e-6;
        let tangent = (t.point_at(c, pos + h).unwrap() - t.point_at(c, pos - h).unwrap()) / (2.0 * h);
        let n = t.inward_normal(c, pos).unwrap();
        assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-14);
        assert!(n.xy().dot(&tangent).abs() < 1e-8);
        // a step along the normal lands inside the union
        let inside = t.point_at(c, pos).unwrap() + n.xy() * 1e-3;
        let in_union = [-0.5, 0.5].iter().any(|&cx| (inside - Point::new(cx, 0.0)).norm() < 1.0);
        assert!(in_union);
    }
}

#[test]
fn component_areas() {
    assert_eq!(component_area(&Shape::Segment { p0: Point::new(0.0, 0.0), p1: Point::new(3.0, 4.0) }), 5.0);
    let arc = Shape::Arc { center: Point::zeros(), radius: 2.0, angle_start: 0.0, angle_end: PI };
    assert_relative_eq!(component_area(&arc), 2.0 * PI, max_relative = 1e-15);
    let t = Table::two_plates(1.0, [Thermostat::new(1.0, 1.0); 2]).unwrap();
    assert!(t.components().iter().all(|c| c.area == 1.0));
}

#[test]
fn specular_examples() {
    let n = Vec3::new(0.0, 1.0, 0.0);
    assert_eq!(specular(&Vec3::new(1.0, -1.0, 0.0), &n), Vec3::new(1.0, 1.0, 0.0));
    assert_eq!(specular(&-n, &n), n);
}

#[test]
fn square_normals_point_inward() {
    let t = square();
    assert_eq!(t.inward_normal(0, 0.3).unwrap(), Vec3::new(0.0, 1.0, 0.0));
    assert!(matches!(t.inward_normal(0, 1.5), Err(GeometryError::PositionOutOfRange { .. })));
}

#[test]
fn corner_flight_is_reported() {
    let t = square();
    // from the middle of the bottom edge straight into the top-right corner
    let x = PhasePoint { component: 0, position: 0.5, velocity: Vec3::new(0.5, 1.0, 0.0) };
    assert!(matches!(t.trace(&x), Err(GeometryError::CornerHit { .. })));
}

fn unit(angle: f64) -> Vec3 {
    Vec3::new(angle.cos(), angle.sin(), 0.0)
}

fn rotate_into(n: &Vec3, theta: f64) -> Vec3 {
    Vec3::new(
        n.x * theta.cos() - n.y * theta.sin(),
        n.x * theta.sin() + n.y * theta.cos(),
        0.0,
    )
}

fn tables() -> Vec<Table> {
    vec![
        square(),
        Table::equilateral_triangle(1.0, [Thermostat::new(1.0, 1.0); 3]).unwrap(),
        disc_union(0.4),
        Table::polygon(
            &[Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(2.5, 1.0), Point::new(1.0, 2.0), Point::new(-0.5, 1.0)],
            &[Thermostat::new(1.0, 1.0); 5],
        )
        .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn specular_is_norm_preserving_involution(a in -10.0..10.0f64, b in -10.0..10.0f64, phi in 0.0..(2.0 * PI)) {
        let v = Vec3::new(a, b, 0.0);
        let n = unit(phi);
        let r = specular(&v, &n);
        prop_assert!((r.norm() - v.norm()).abs() <= 1e-12 * v.norm().max(1e-300));
        prop_assert!((specular(&r, &n) - v).norm() <= 1e-12 * v.norm().max(1.0));
    }

    #[test]
    fn trace_lands_on_boundary_and_reverses(which in 0usize..4, u in 0.01..0.99f64, theta in -1.5..1.5f64, speed in 0.1..10.0f64) {
        let t = &tables()[which];
        let c = ((u * 1e6) as usize) % t.len();
        let pos = u * t.components()[c].area;
        let n = t.inward_normal(c, pos).unwrap();
        let v = rotate_into(&n, theta) * speed;
        let x = PhasePoint { component: c, position: pos, velocity: v };
        let Ok(hit) = t.trace(&x) else { return Ok(()) };
        prop_assert!(hit.flight_length > 0.0);
        let start = t.point_at(c, pos).unwrap();
        let end = t.point_at(hit.component, hit.position).unwrap();
        prop_assert!((end - start).norm() > 0.0);
        prop_assert!(((end - start).norm() - hit.flight_length).abs() < 1e-9);
        // flying back with the reversed velocity returns to the start
        let back = PhasePoint { component: hit.component, position: hit.position, velocity: -v };
        let Ok(ret) = t.trace(&back) else { return Ok(()) };
        prop_assert_eq!(ret.component, c);
        prop_assert!((t.point_at(c, ret.position).unwrap() - start).norm() < 1e-9);
    }
}
