//! Composite Gauss–Legendre quadrature with panel doubling.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Outcome of an adaptive vector integration.
#[derive(Debug, Clone)]
pub struct Integral<const K: usize> {
    pub values: [f64; K],
    /// Largest change between the last two refinements, relative to the
    /// largest component.
    pub achieved_tol: f64,
    pub converged: bool,
}

/// Integrate a vector-valued function over [a, b], doubling the number of
/// equal panels until every component settles to `rel_tol`.
pub fn integrate<const K: usize>(
    f: impl Fn(f64) -> [f64; K],
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Integral<K> {
    const ORDER: usize = 20;
    const MAX_PANELS: usize = 1 << 12;
    let (x, w) = gauss_legendre(ORDER);
    let rule = |panels: usize| {
        let h = (b - a) / panels as f64;
        let mut acc = [0.0; K];
        for p in 0..panels {
            let mid = a + h * (p as f64 + 0.5);
            for (xi, wi) in x.iter().zip(&w) {
                let v = f(mid + 0.5 * h * xi);
                for (s, vi) in acc.iter_mut().zip(v) {
                    *s += 0.5 * h * wi * vi;
                }
            }
        }
        acc
    };
    let mut panels = 1;
    let mut prev = rule(panels);
    loop {
        panels *= 2;
        let next = rule(panels);
        let scale = next.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        let change = next
            .iter()
            .zip(&prev)
            .fold(0.0f64, |m, (n, p)| m.max((n - p).abs()))
            / scale;
        if change <= rel_tol || panels >= MAX_PANELS {
            return Integral {
                values: next,
                achieved_tol: change,
                converged: change <= rel_tol,
            };
        }
        prev = next;
    }
}
