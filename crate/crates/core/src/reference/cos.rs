//! Fourier-cosine expansion of the call price with unit strike.

use std::f64::consts::PI;

use num_complex::Complex64;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CosConfig {
    pub terms: usize,
    /// Truncation `[a, b]` of `ln(S_τ/K)` relative to `ln x`; `None` means
    /// `[−10τ^{1/4}, 10τ^{1/4}]`.
    pub truncation: Option<[f64; 2]>,
}

impl Default for CosConfig {
    fn default() -> Self {
        Self {
            terms: 512,
            truncation: None,
        }
    }
}

impl CosConfig {
    pub fn interval(&self, tau: f64) -> [f64; 2] {
        self.truncation.unwrap_or_else(|| {
            let w = 10.0 * tau.powf(0.25);
            [-w, w]
        })
    }

    pub fn validate(&self, tau: f64) -> Result<()> {
        let [a, b] = self.interval(tau);
        if self.terms == 0 || !(a < b) {
            return Err(Error::Config(format!("cos expansion needs terms >= 1 and a < b, got {} and [{a}, {b}]", self.terms)));
        }
        Ok(())
    }
}

/// Cosine coefficients of `(e^y − 1)^+` on `[a, b]`, restricted to `[c, b]`
/// with `c = max(a, 0)`.
fn payoff_coefficients(a: f64, b: f64, terms: usize) -> Vec<f64> {
    let c = a.max(0.0);
    if c >= b {
        return vec![0.0; terms];
    }
    let len = b - a;
    (0..terms)
        .map(|k| {
            let w = k as f64 * PI / len;
            let (sd, cd) = (w * (b - a)).sin_cos();
            let (sc, cc) = (w * (c - a)).sin_cos();
            let chi = (cd * b.exp() - cc * c.exp() + w * (sd * b.exp() - sc * c.exp())) / (1.0 + w * w);
            let psi = if k == 0 { b - c } else { (sd - sc) / w };
            2.0 / len * (chi - psi)
        })
        .collect()
}

/// Call prices at moneyness points `xs` from the characteristic function of
/// `ln(S_τ/S_0)`.
pub fn cos_price(cf: impl Fn(Complex64) -> Complex64, cfg: &CosConfig, r: f64, tau: f64, xs: &[f64]) -> Result<Vec<f64>> {
    cfg.validate(tau)?;
    let [lo, hi] = cfg.interval(tau);
    let len = hi - lo;
    let phi: Vec<Complex64> = (0..cfg.terms).map(|k| cf(Complex64::new(k as f64 * PI / len, 0.0))).collect();
    let discount = (-r * tau).exp();
    xs.iter()
        .map(|&x| {
            if !(x > 0.0) {
                return Err(Error::Domain(format!("moneyness {x} must be positive")));
            }
            // the interval is centred on ln x, so the phase e^{iu(ln x − a)} is e^{−iu·lo}
            let (a, b) = (x.ln() + lo, x.ln() + hi);
            let v = payoff_coefficients(a, b, cfg.terms);
            let sum: f64 = phi
                .iter()
                .zip(&v)
                .enumerate()
                .map(|(k, (p, vk))| {
                    let u = k as f64 * PI / len;
                    let term = (p * Complex64::new(0.0, -u * lo).exp()).re * vk;
                    if k == 0 { 0.5 * term } else { term }
                })
                .sum();
            Ok(discount * sum)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HestonSpec;
    use crate::reference::{bs_cf, bs_price, heston_cf};

    fn grid() -> Vec<f64> {
        (0..47).map(|i| 0.01 + (3.0 - 0.01) * i as f64 / 46.0).collect()
    }

    #[test]
    fn black_scholes_cf_reproduces_closed_form() {
        for tau in [0.25, 0.5, 1.0] {
            let prices = cos_price(bs_cf(0.25, 0.05, tau), &CosConfig::default(), 0.05, tau, &grid()).unwrap();
            for (x, p) in grid().iter().zip(prices) {
                assert!((p - bs_price(0.25, 0.05, tau, *x)).abs() < 1e-8, "tau={tau} x={x}");
            }
        }
    }

    #[test]
    fn heston_prices_are_arbitrage_consistent() {
        let s = HestonSpec {
            r: 0.0,
            lambda: 2.0,
            kappa: 0.01,
            eta: 0.1,
            rho: 0.0,
            v0: 0.03,
        };
        // fine strike grid via moneyness: C(K) = K·c(S/K), convex in K
        let strikes: Vec<f64> = (0..200).map(|i| 0.6 + 0.005 * i as f64).collect();
        let xs: Vec<f64> = strikes.iter().map(|k| 1.0 / k).collect();
        let c = cos_price(|u| heston_cf(&s, u, 1.0), &CosConfig::default(), 0.0, 1.0, &xs).unwrap();
        let calls: Vec<f64> = c.iter().zip(&strikes).map(|(c, k)| c * k).collect();
        assert!(calls.iter().all(|&c| c >= -1e-12));
        for w in calls.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10);
        }
        let deep = cos_price(|u| heston_cf(&s, u, 1.0), &CosConfig::default(), 0.0, 1.0, &[3.0]).unwrap()[0];
        assert!((deep - 2.0).abs() <= 1e-4);
    }

    #[test]
    fn payoff_coefficient_outside_support() {
        assert!(payoff_coefficients(-3.0, -1.0, 8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_config() {
        let cfg = CosConfig {
            terms: 16,
            truncation: Some([1.0, -1.0]),
        };
        assert!(cos_price(bs_cf(0.2, 0.0, 1.0), &cfg, 0.0, 1.0, &[1.0]).is_err());
    }
}
