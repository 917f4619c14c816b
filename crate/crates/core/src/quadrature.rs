//! Adaptive Gauss–Legendre quadrature.

use std::sync::OnceLock;

const ORDER: usize = 10;

/// Nodes and weights of the `ORDER`-point rule on `[-1, 1]`, found by Newton
/// iteration on the Legendre polynomial.
fn rule() -> &'static ([f64; ORDER], [f64; ORDER]) {
    static RULE: OnceLock<([f64; ORDER], [f64; ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut nodes = [0.0; ORDER];
        let mut weights = [0.0; ORDER];
        let n = ORDER as f64;
        for i in 0..ORDER {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=ORDER {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = rule();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid);
    let right = panel(f, mid, b);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= tol {
        return refined;
    }
    adapt(f, a, mid, left, 0.5 * tol, depth - 1) + adapt(f, mid, b, right, 0.5 * tol, depth - 1)
}

/// Integrate `f` over `[a, b]` to roughly `rel_tol` relative accuracy.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let whole = panel(&f, a, b);
    // absolute target from a coarse magnitude estimate
    let scale = (0..16)
        .map(|k| {
            let h = (b - a) / 16.0;
            panel(&f, a + k as f64 * h, a + (k + 1) as f64 * h).abs()
        })
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    adapt(&f, a, b, whole, rel_tol * scale, 40)
}
