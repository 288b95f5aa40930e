//! One-dimensional quadrature building blocks: Gauss-Legendre panels,
//! geometric panel layouts for algebraic singularities, and dyadic tail
//! accumulation with convergence tracking.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev initial guess.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
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

fn cached_gl(order: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match order {
        8 => GL8.get_or_init(|| gauss_legendre(8)),
        16 => GL16.get_or_init(|| gauss_legendre(16)),
        32 => GL32.get_or_init(|| gauss_legendre(32)),
        64 => GL64.get_or_init(|| gauss_legendre(64)),
        _ => panic!("uncached GL order {order}; use gauss_legendre directly"),
    }
}

/// Integrate `f` over [a, b] with a single Gauss-Legendre panel.
pub fn integrate_gl<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, order: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let (nodes, weights) = cached_gl(order);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Integrate over consecutive panels given by `edges`.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, edges: &[f64], order: usize) -> f64 {
    let mut acc = 0.0;
    for w in edges.windows(2) {
        acc += integrate_gl(&mut f, w[0], w[1], order);
    }
    acc
}

/// Geometrically spaced panel edges from `a` to `b` (both positive),
/// `per_octave` panels per doubling, at least two edges.
pub fn geometric_edges(a: f64, b: f64, per_octave: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a);
    let octaves = (b / a).log2();
    let count = ((octaves * per_octave as f64).ceil() as usize).max(1);
    let ratio = (b / a).powf(1.0 / count as f64);
    let mut edges = Vec::with_capacity(count + 1);
    let mut x = a;
    for _ in 0..count {
        edges.push(x);
        x *= ratio;
    }
    edges.push(b);
    edges
}

/// Accumulate `∫_{r0}^{∞} f` over dyadic panels `[r0 2^j, r0 2^{j+1}]` until
/// the panel contribution drops below `rel_tol` of the running total (or
/// `max_octaves` is hit). Returns `(value, converged, last_increment)`.
pub fn dyadic_tail<F: FnMut(f64) -> f64>(
    mut f: F,
    r0: f64,
    rel_tol: f64,
    order: usize,
    max_octaves: usize,
) -> (f64, bool, f64) {
    let mut total = 0.0;
    let mut lo = r0;
    let mut last = f64::INFINITY;
    for _ in 0..max_octaves {
        let hi = lo * 2.0;
        last = integrate_gl(&mut f, lo, hi, order);
        total += last;
        lo = hi;
        if last.abs() <= rel_tol * total.abs().max(f64::MIN_POSITIVE) {
            return (total, true, last);
        }
    }
    (total, false, last)
}

/// Least-squares slope and intercept of `y` against `x`, plus the RMS
/// residual. Used for log-log exponent fits.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(u, v)| {
            let e = v - (intercept + slope * u);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}
