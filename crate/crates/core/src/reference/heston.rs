use num_complex::Complex64;

use super::expm1;
use crate::models::HestonSpec;

/// Characteristic function of `ln(S_τ/S_0)` started at the spec's `v0`.
pub fn heston_cf(spec: &HestonSpec, u: Complex64, tau: f64) -> Complex64 {
    heston_cf_at(spec, u, tau, spec.v0)
}

/// Characteristic function of `ln(S_τ/S_0)` from variance `v`, in the
/// formulation whose logarithm stays on the principal branch.
pub fn heston_cf_at(spec: &HestonSpec, u: Complex64, tau: f64, v: f64) -> Complex64 {
    let i = Complex64::i();
    let (lambda, eta) = (spec.lambda, spec.eta);
    let eta2 = eta * eta;
    let beta = lambda - spec.rho * eta * i * u;
    let d = (beta * beta + eta2 * (i * u + u * u)).sqrt();
    let (minus, plus) = (beta - d, beta + d);
    let decay = (-d * tau).exp();
    // 1 − e^{−dτ} and 1 − g e^{−dτ} with g = minus/plus, scaled by plus
    let one_minus_decay = -expm1(-d * tau);
    let denom = plus - minus * decay;
    let log_ratio = if plus.norm() == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        (denom / (plus - minus)).ln()
    };
    let big_d = if one_minus_decay.norm() == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        minus / eta2 * one_minus_decay * plus / denom
    };
    let big_c = i * u * spec.r * tau + lambda * spec.kappa / eta2 * (minus * tau - 2.0 * log_ratio);
    (big_c + big_d * v).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::reference::bs_cf;

    fn flat() -> HestonSpec {
        HestonSpec {
            r: 0.0,
            lambda: 2.0,
            kappa: 0.01,
            eta: 0.1,
            rho: 0.0,
            v0: 0.03,
        }
    }

    #[test]
    fn normalization_and_martingale() {
        let mut s = flat();
        s.r = 0.03;
        s.rho = -0.7;
        assert!((heston_cf(&s, Complex64::new(0.0, 0.0), 1.0) - 1.0).norm() < 1e-15);
        let m = heston_cf(&s, -Complex64::i(), 1.5);
        assert!((m - (0.03f64 * 1.5).exp()).norm() < 1e-13, "{m}");
    }

    #[test]
    fn conjugate_symmetry() {
        let s = HestonSpec { rho: -0.5, eta: 0.4, ..flat() };
        for u in [0.3, 2.0, 17.0, 120.0] {
            let u = Complex64::new(u, 0.0);
            assert!((heston_cf(&s, -u, 0.8) - heston_cf(&s, u, 0.8).conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn constant_variance_limit_is_black_scholes() {
        let s = HestonSpec {
            r: 0.05,
            lambda: 0.0,
            kappa: 0.02,
            eta: 1e-6,
            rho: 0.0,
            v0: 0.0625,
        };
        let bs = bs_cf(0.25, 0.05, 1.0);
        for u in [0.1, 1.0, 5.0, 20.0] {
            let u = Complex64::new(u, 0.0);
            let (a, b) = (heston_cf(&s, u, 1.0), bs(u));
            assert!((a - b).norm() < 1e-10, "u={u}: {a} vs {b}");
        }
    }

    #[test]
    fn matches_riccati_quadrature() {
        // D' = F(u, D), C' = iur + λκD, integrated with a fine RK4
        let s = HestonSpec { rho: -0.7, eta: 0.3, ..flat() };
        let i = Complex64::i();
        for u in [1.0, 7.0] {
            let u = Complex64::new(u, 0.0);
            let f = |d: Complex64| 0.5 * (-u * u - i * u) + (s.rho * s.eta * i * u - s.lambda) * d + 0.5 * s.eta * s.eta * d * d;
            let (mut d, mut c) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            let n = 20_000;
            let h = 1.0 / n as f64;
            for _ in 0..n {
                let k1 = f(d);
                let k2 = f(d + 0.5 * h * k1);
                let k3 = f(d + 0.5 * h * k2);
                let k4 = f(d + h * k3);
                let dn = d + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                // Simpson for ∫D with the midpoint from k2
                let mid = d + 0.5 * h * k2;
                c += s.lambda * s.kappa * h / 6.0 * (d + 4.0 * mid + dn);
                d = dn;
            }
            let ode = (c + i * u * s.r + d * s.v0).exp();
            let closed = heston_cf(&s, u, 1.0);
            assert!((ode - closed).norm() < 1e-9, "{ode} vs {closed}");
        }
    }

    proptest! {
        #[test]
        fn normalized_and_conjugate_symmetric(u in -200.0f64..200.0, tau in 0.01f64..2.0, rho in -0.95f64..0.95, eta in 0.05f64..0.8) {
            let s = HestonSpec { rho, eta, ..flat() };
            prop_assert!((heston_cf(&s, Complex64::new(0.0, 0.0), tau) - 1.0).norm() < 1e-14);
            let u = Complex64::new(u, 0.0);
            let cf = heston_cf(&s, u, tau);
            prop_assert!(cf.norm() <= 1.0 + 1e-12);
            prop_assert!((heston_cf(&s, -u, tau) - cf.conj()).norm() < 1e-13);
        }
    }
}
