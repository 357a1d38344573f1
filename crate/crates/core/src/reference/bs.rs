use num_complex::Complex64;
use statrs::function::erf::erfc;

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes call with unit strike on moneyness `x`.
pub fn bs_price(sigma: f64, r: f64, tau: f64, x: f64) -> f64 {
    if tau <= 0.0 {
        return (x - 1.0).max(0.0);
    }
    if x <= 0.0 {
        return 0.0;
    }
    let s = sigma * tau.sqrt();
    let d1 = (x.ln() + (r + 0.5 * sigma * sigma) * tau) / s;
    let d2 = d1 - s;
    x * norm_cdf(d1) - (-r * tau).exp() * norm_cdf(d2)
}

/// Characteristic function of `ln(S_τ/S_0)` under Black–Scholes.
pub fn bs_cf(sigma: f64, r: f64, tau: f64) -> impl Fn(Complex64) -> Complex64 {
    let v = sigma * sigma;
    move |u| (Complex64::i() * u * (r - 0.5 * v) * tau - 0.5 * u * u * v * tau).exp()
}
