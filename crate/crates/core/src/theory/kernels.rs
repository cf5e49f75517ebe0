//! The kernels $g_H$, $\tilde g_H$ and the integrated-window autocovariance $C_\Upsilon$.
//!
//! With $p = 2H+2$ and $D(z) = (|1+z|^p + |1-z|^p - 2)/z^2$:
//!
//! $$
//! g_H(z) = \frac{D(z) - 2 z^{2H}}{H(1-4H^2)(2H+2)},\qquad
//! \tilde g_H(z) = \frac{D(z)}{2H(1-4H^2)(2H+2)},
//! $$
//! $$
//! C_\Upsilon(\Delta,\tau) = \frac{1}{2H(1-2H)} - \Big(\frac{\tau}{T}\Big)^{2H}\tilde g_H(\Delta/\tau).
//! $$
//!
//! Both numerators vanish to first order in $H$, so the raw powers are never
//! subtracted directly: $D - p(p-1)$ is evaluated either through `expm1` or, for
//! small $z$, through its binomial series whose terms all carry the factor $p-2=2H$.

use super::SfbmParams;
use crate::error::{ensure, Result};

const SERIES_Z: f64 = 0.1;

/// $\sum_{k\ge 2}\binom{p}{2k} z^{2k-2}$ for $p = 2+2h$ and $0 \le z < 1$.
fn binomial_tail(h: f64, z: f64) -> f64 {
    let p = 2.0 + 2.0 * h;
    let z2 = z * z;
    let mut coef = 0.5 * p * (p - 1.0);
    let mut zp = 1.0;
    let mut sum = 0.0;
    for k in 2..200 {
        let kf = k as f64;
        coef *= (p - 2.0 * kf + 2.0) * (p - 2.0 * kf + 1.0) / ((2.0 * kf - 1.0) * (2.0 * kf));
        zp *= z2;
        let term = coef * zp;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || term == 0.0 {
            break;
        }
    }
    sum
}

/// $(1+z)^2\,\mathrm{expm1}(2h\ln(1+z)) + (1-z)^2\,\mathrm{expm1}(2h\ln|1-z|)$.
fn expm1_pair(h: f64, z: f64) -> f64 {
    let plus = (1.0 + z).powi(2) * (2.0 * h * z.ln_1p()).exp_m1();
    let d = (1.0 - z).abs();
    let minus = if d == 0.0 {
        0.0
    } else {
        d * d * (2.0 * h * d.ln()).exp_m1()
    };
    plus + minus
}

/// $D(z) - p(p-1)$; of order $h$ and free of cancellation.
pub(crate) fn d_excess(h: f64, z: f64) -> f64 {
    if z < SERIES_Z {
        2.0 * binomial_tail(h, z)
    } else {
        expm1_pair(h, z) / (z * z) - h * (6.0 + 4.0 * h)
    }
}

/// Numerator of $g_H$ divided by $z^2$.
fn g_numerator(h: f64, z: f64) -> f64 {
    let head = if z < SERIES_Z {
        2.0 * binomial_tail(h, z) + h * (6.0 + 4.0 * h)
    } else {
        expm1_pair(h, z) / (z * z)
    };
    head - 2.0 * (2.0 * h * z.ln()).exp_m1()
}

/// $H\to 0$ limit of $g_H$.
fn g_zero(z: f64) -> f64 {
    if z < SERIES_Z {
        // 3 - 2 ln z - 4 sum_{k>=2} z^{2k-2} / ((2k)(2k-1)(2k-2))
        let z2 = z * z;
        let mut zp = 1.0;
        let mut sum = 0.0;
        for k in 2..200 {
            let kf = 2.0 * k as f64;
            zp *= z2;
            let term = zp / (kf * (kf - 1.0) * (kf - 2.0));
            sum += term;
            if term <= 1e-18 * sum {
                break;
            }
        }
        3.0 - 2.0 * z.ln() - 4.0 * sum
    } else {
        let d = (1.0 - z).abs();
        let minus = if d == 0.0 { 0.0 } else { d * d * d.ln() };
        ((1.0 + z).powi(2) * z.ln_1p() + minus - 2.0 * z * z * z.ln()) / (z * z)
    }
}

/// $g_H(z)$ for $0 \le H < 1/2$ and $z > 0$; `hurst == 0` gives the $H\to0$ limit.
pub fn g_h(hurst: f64, z: f64) -> f64 {
    assert!(z > 0.0, "g_h requires z > 0");
    assert!((0.0..0.5).contains(&hurst), "g_h requires 0 <= H < 1/2");
    if hurst == 0.0 {
        return g_zero(z);
    }
    g_numerator(hurst, z) / (hurst * (1.0 - 4.0 * hurst * hurst) * (2.0 * hurst + 2.0))
}

/// $\tilde g_H(z)$ for $0 < H < 1/2$ and $z > 0$.
pub fn g_tilde_h(hurst: f64, z: f64) -> f64 {
    assert!(z > 0.0, "g_tilde_h requires z > 0");
    assert!(hurst > 0.0 && hurst < 0.5, "g_tilde_h requires 0 < H < 1/2");
    let p = 2.0 + 2.0 * hurst;
    let d = d_excess(hurst, z) + p * (p - 1.0);
    d / (2.0 * hurst * (1.0 - 4.0 * hurst * hurst) * (2.0 * hurst + 2.0))
}

/// $r_{H_i,H}(z) = g_{H_i}(z)/g_H(z)$; `h_i` may be 0.
pub fn r_ratio(h_i: f64, h: f64, z: f64) -> f64 {
    g_h(h_i, z) / g_h(h, z)
}

/// Upper bound $C_H(3 - 2\ln z)$ on $r_{0,H}(z)$ for $z\in(0,1)$, with
/// $C_H = H(1-2H)(1+2H)(1+H) / (2(2^{2H}-1))$.
pub fn r0_bound(h: f64, z: f64) -> f64 {
    let c = h * (1.0 - 2.0 * h) * (1.0 + 2.0 * h) * (1.0 + h)
        / (2.0 * (2.0 * h * std::f64::consts::LN_2).exp_m1());
    c * (3.0 - 2.0 * z.ln())
}

/// $C_\Upsilon(\Delta,\tau)$ for a mode: the autocovariance of $\Upsilon_\Delta/(\lambda\Delta)$
/// at lag `tau`, where $\Upsilon_\Delta(t) = \int_t^{t+\Delta}(\omega_u-\mu)\,du$.
///
/// Valid for $\tau \ge 0$ and $\tau + \Delta \le T$; past that range the closed form
/// keeps extending the power law instead of the truncated covariance.
pub fn c_upsilon(params: &SfbmParams, delta: f64, tau: f64) -> f64 {
    c_upsilon_h(params.hurst(), params.horizon(), delta, tau)
}

/// [`c_upsilon`] from raw `(H, T)`, for callers sweeping over $H$.
pub fn c_upsilon_h(hurst: f64, horizon: f64, delta: f64, tau: f64) -> f64 {
    let h = hurst;
    let tau = tau.abs();
    // X = (tau/T)^{2H} D(Delta/tau) / (p(p-1)); C = (1 - X) / (2H(1-2H))
    let log_x = if tau == 0.0 {
        2.0 * h * (delta / horizon).ln() - h.ln_1p() - (2.0 * h).ln_1p()
    } else {
        let p = 2.0 + 2.0 * h;
        2.0 * h * (tau / horizon).ln() + (d_excess(h, delta / tau) / (p * (p - 1.0))).ln_1p()
    };
    -log_x.exp_m1() / (2.0 * h * (1.0 - 2.0 * h))
}

fn check_window(modes: &[(f64, SfbmParams)], tau: f64, delta: f64) -> Result<()> {
    ensure(!modes.is_empty(), || "mode list is empty".into())?;
    ensure(tau > 0.0 && delta > 0.0, || {
        format!("tau and delta must be positive, got tau={tau}, delta={delta}")
    })?;
    let min_t = modes.iter().map(|(_, m)| m.horizon()).fold(f64::INFINITY, f64::min);
    ensure(tau + delta <= min_t, || {
        format!("tau + delta = {} exceeds the smallest horizon {min_t}", tau + delta)
    })
}

fn single_mode_term(m: &SfbmParams, tau: f64, delta: f64) -> f64 {
    m.intermittency_sq() * (tau / m.horizon()).powf(2.0 * m.hurst()) * g_h(m.hurst(), delta / tau)
}

/// First-order variance of $\ln M_\Delta(\tau) - \ln M_\Delta(0)$ for the measure of
/// $e^{\omega}$ with $\omega = \sum_l a_l\omega_l$ (independent modes):
/// $\sum_l a_l^2\lambda_l^2(\tau/T_l)^{2H_l} g_{H_l}(\Delta/\tau)$.
pub fn small_intermittency_w(modes: &[(f64, SfbmParams)], tau: f64, delta: f64) -> Result<f64> {
    check_window(modes, tau, delta)?;
    Ok(modes
        .iter()
        .map(|(a, m)| a * a * single_mode_term(m, tau, delta))
        .sum())
}

/// First-order variance of $\ln\Sigma_\Delta(\tau) - \ln\Sigma_\Delta(0)$ for
/// $\Sigma = \sum_l b_l^2 M^l$:
/// $\sum_l b_l^4\lambda_l^2(\tau/T_l)^{2H_l} g_{H_l}(\Delta/\tau) \,/\, (\sum_l b_l^2)^2$.
///
/// The denominator is 1 when the weights are normalized ($\sum_l b_l^2 = 1$).
pub fn small_intermittency_v(modes: &[(f64, SfbmParams)], tau: f64, delta: f64) -> Result<f64> {
    check_window(modes, tau, delta)?;
    let norm: f64 = modes.iter().map(|(b, _)| b * b).sum();
    ensure(norm > 0.0, || "all weights are zero".into())?;
    let num: f64 = modes
        .iter()
        .map(|(b, m)| b.powi(4) * single_mode_term(m, tau, delta))
        .sum();
    Ok(num / (norm * norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_g(h: f64, z: f64) -> f64 {
        let p = 2.0 * h + 2.0;
        ((1.0 + z).powf(p) - 2.0 * z.powf(p) + (1.0 - z).abs().powf(p) - 2.0)
            / (z * z * h * (1.0 - 4.0 * h * h) * (2.0 * h + 2.0))
    }

    #[test]
    fn g_at_quarter_one() {
        let expected = 4.0 * (2f64.sqrt() - 1.0) / (0.25 * 0.5 * 1.5 * 2.5);
        assert!((g_h(0.25, 1.0) - expected).abs() < 1e-13);
        assert!((g_h(0.25, 1.0) - 3.5347).abs() < 1e-4);
    }

    #[test]
    fn g_tilde_at_quarter_one() {
        // (2^{2.5} - 2) / (0.5 * 0.75 * 2.5)
        let expected = (2f64.powf(2.5) - 2.0) / (0.5 * 0.75 * 2.5);
        assert!((g_tilde_h(0.25, 1.0) - expected).abs() < 1e-13);
    }

    #[test]
    fn matches_naive_formula_where_it_is_well_conditioned() {
        for &h in &[0.1, 0.2, 0.3, 0.45] {
            for &z in &[0.3, 0.7, 1.0, 1.5, 3.0] {
                let a = g_h(h, z);
                let b = naive_g(h, z);
                assert!(((a - b) / b).abs() < 1e-11, "h={h} z={z}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn series_and_direct_branches_agree_at_switch() {
        for &h in &[1e-3, 0.01, 0.11, 0.3] {
            let lo = g_h(h, SERIES_Z * (1.0 - 1e-12));
            let hi = g_h(h, SERIES_Z);
            assert!(((lo - hi) / hi).abs() < 1e-11, "h={h}: {lo} vs {hi}");
            let lo = g_tilde_h(h, SERIES_Z * (1.0 - 1e-12));
            let hi = g_tilde_h(h, SERIES_Z);
            assert!(((lo - hi) / hi).abs() < 1e-11);
        }
        let lo = g_h(0.0, SERIES_Z * (1.0 - 1e-12));
        let hi = g_h(0.0, SERIES_Z);
        assert!(((lo - hi) / hi).abs() < 1e-11);
    }

    #[test]
    fn small_h_limit_is_continuous() {
        for &z in &[1e-3, 0.05, 0.3, 0.9, 2.0] {
            let g0 = g_h(0.0, z);
            let g_small = g_h(1e-9, z);
            assert!(((g0 - g_small) / g0).abs() < 1e-7, "z={z}");
        }
    }

    #[test]
    fn small_z_limit() {
        for &h in &[0.05, 0.11, 0.3] {
            let lim = 1.0 / (h * (1.0 - 2.0 * h));
            let z: f64 = 1e-12;
            // error term is O(z^{2H})
            let g = g_h(h, z);
            assert!((g - lim).abs() <= 5.0 * z.powf(2.0 * h) / h, "h={h}");
        }
    }

    #[test]
    fn g_and_g_tilde_relation() {
        for &h in &[0.02, 0.11, 0.37] {
            for &z in &[0.01, 0.5, 1.0, 2.5] {
                let rhs = 2.0 * g_tilde_h(h, z)
                    - 2.0 * z.powf(2.0 * h) / (h * (1.0 - 4.0 * h * h) * (2.0 * h + 2.0));
                assert!(((g_h(h, z) - rhs) / g_h(h, z)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn r_ratio_identity_and_bound() {
        assert!((r_ratio(0.11, 0.11, 0.4) - 1.0).abs() < 1e-15);
        for &h in &[0.05, 0.1, 0.2, 0.3, 0.4] {
            for k in 1..1000 {
                let z = k as f64 / 1000.0;
                assert!(r_ratio(0.0, h, z) <= r0_bound(h, z) * (1.0 + 1e-12), "h={h} z={z}");
            }
        }
    }

    #[test]
    fn c_upsilon_tau_zero_is_limit() {
        let p = SfbmParams::new(0.11, 0.01, 4096.0).unwrap();
        let at0 = c_upsilon(&p, 1.0, 0.0);
        let near0 = c_upsilon(&p, 1.0, 1e-9);
        assert!(((at0 - near0) / at0).abs() < 1e-7);
    }

    #[test]
    fn one_mode_w_and_v() {
        let m = SfbmParams::new(0.11, 0.0025, 4096.0).unwrap();
        let direct = 0.0025 * (16.0f64 / 4096.0).powf(0.22) * g_h(0.11, 1.0 / 16.0);
        let w = small_intermittency_w(&[(1.0, m)], 16.0, 1.0).unwrap();
        let v = small_intermittency_v(&[(1.0, m)], 16.0, 1.0).unwrap();
        assert_eq!(w, direct);
        assert!((v - direct).abs() < 1e-18);
        assert!(small_intermittency_w(&[], 16.0, 1.0).is_err());
        assert!(small_intermittency_w(&[(1.0, m)], 4096.0, 1.0).is_err());
    }

    #[test]
    fn w_is_additive_over_modes() {
        let a = SfbmParams::new(0.11, 0.0025, 4096.0).unwrap();
        let b = SfbmParams::new(0.01, 0.004, 4096.0).unwrap();
        let wa = small_intermittency_w(&[(0.7, a)], 8.0, 1.0).unwrap();
        let wb = small_intermittency_w(&[(1.3, b)], 8.0, 1.0).unwrap();
        let wab = small_intermittency_w(&[(0.7, a), (1.3, b)], 8.0, 1.0).unwrap();
        assert!((wab - wa - wb).abs() <= 1e-16 * wab);
    }
}
