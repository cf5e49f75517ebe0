//! Independent oracles shared by the integration tests.
//!
//! Window integrals of a stationary covariance are computed as genuine 2-D
//! Gauss-Legendre quadratures in the rotated coordinates `s = u - v`, `w = v`,
//! with panels split at the kinks of the integrand and geometrically graded
//! toward them. Nothing here calls the closed forms under test.

#![allow(dead_code)]

pub mod props;

/// `n`-point Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Panels of `[a, b]`, graded geometrically toward every point of `kinks`
/// inside the interval.
fn graded_panels(a: f64, b: f64, kinks: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts = vec![a, b];
    cuts.extend(kinks.iter().copied().filter(|k| *k > a && *k < b));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut panels = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let left = kinks.iter().any(|k| *k == lo);
        let right = kinks.iter().any(|k| *k == hi);
        let mut edges = vec![lo, hi];
        let len = hi - lo;
        // ratio 0.2 and 40 levels leave the innermost panel below 1e-28 of the span
        let grade = |from: f64, dir: f64, edges: &mut Vec<f64>| {
            let mut d = len * if left && right { 0.5 } else { 1.0 };
            for _ in 0..40 {
                d *= 0.2;
                edges.push(from + dir * d);
            }
        };
        if left {
            grade(lo, 1.0, &mut edges);
        }
        if right {
            grade(hi, -1.0, &mut edges);
        }
        if left && right {
            edges.push(lo + 0.5 * len);
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        panels.extend(edges.windows(2).map(|e| (e[0], e[1])));
    }
    panels
}

/// $\frac{1}{\Delta^2}\int_0^\Delta\int_0^\Delta \phi(\tau + u - v)\,du\,dv$.
///
/// `kinks` are the points `x` where `phi(x)` is not smooth.
pub fn window_average(phi: impl Fn(f64) -> f64, delta: f64, tau: f64, kinks: &[f64]) -> f64 {
    let gl = gauss_legendre(20);
    // s = u - v ranges over (-delta, delta); phi is evaluated at tau + s
    let s_kinks: Vec<f64> = kinks.iter().map(|k| k - tau).chain([0.0]).collect();
    let mut total = 0.0;
    for (a, b) in graded_panels(-delta, delta, &s_kinks) {
        let (hs, ms) = (0.5 * (b - a), 0.5 * (b + a));
        for &(xs, ws) in &gl {
            let s = ms + hs * xs;
            // w = v over [max(0, -s), min(delta, delta - s)]
            let (w_lo, w_hi) = (f64::max(0.0, -s), f64::min(delta, delta - s));
            let (hw, mw) = (0.5 * (w_hi - w_lo), 0.5 * (w_hi + w_lo));
            let inner: f64 = gl
                .iter()
                .map(|&(xw, ww)| {
                    let (u, v) = (mw + hw * xw + s, mw + hw * xw);
                    ww * hw * phi(tau + u - v)
                })
                .sum();
            total += ws * hs * inner;
        }
    }
    total / (delta * delta)
}

/// S-fBM covariance per unit intermittency, $\frac{1}{2H(1-2H)}(1-(|x|/T)^{2H})$.
pub fn sfbm_cov_unit(h: f64, horizon: f64, x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        return 1.0 / (2.0 * h * (1.0 - 2.0 * h));
    }
    -(2.0 * h * (a / horizon).ln()).exp_m1() / (2.0 * h * (1.0 - 2.0 * h))
}

/// Autocovariance of the window-integrated mode per unit intermittency.
pub fn c_upsilon_quad(h: f64, horizon: f64, delta: f64, tau: f64) -> f64 {
    window_average(|x| sfbm_cov_unit(h, horizon, x), delta, tau, &[0.0])
}

/// $\tilde g_H(z)$ from the power-law part of the covariance with $\tau = 1$.
pub fn g_tilde_quad(h: f64, z: f64) -> f64 {
    window_average(|x| x.abs().powf(2.0 * h), z, 1.0, &[0.0]) / (2.0 * h * (1.0 - 2.0 * h))
}

/// $g_H(z)$: half the variance of the window increment over lag $\tau = 1$,
/// per unit intermittency and per $(\tau/T)^{2H}$.
pub fn g_quad(h: f64, z: f64) -> f64 {
    let inc = |x: f64| {
        let a = x.abs();
        if a == 0.0 {
            -1.0
        } else {
            (2.0 * h * a.ln()).exp_m1()
        }
    };
    let shifted = window_average(inc, z, 1.0, &[0.0]);
    let centred = window_average(inc, z, 0.0, &[0.0]);
    2.0 * (shifted - centred) / (2.0 * h * (1.0 - 2.0 * h))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
