//! Characteristic function of the lifted Heston model from its Riccati
//! system, integrated with the ARS(4,4,3) implicit-explicit Runge–Kutta
//! scheme: the decay `−γ_i ψ_i` implicit, the quadratic forcing explicit.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::LiftedHestonSpec;

pub const DEFAULT_RICCATI_STEPS: usize = 500;

const STAGES: usize = 5;
const C: [f64; STAGES] = [0.0, 0.5, 2.0 / 3.0, 0.5, 1.0];
// explicit tableau, strictly lower triangular; the last row doubles as weights
const AE: [[f64; STAGES]; STAGES] = [
    [0.0; STAGES],
    [0.5, 0.0, 0.0, 0.0, 0.0],
    [11.0 / 18.0, 1.0 / 18.0, 0.0, 0.0, 0.0],
    [5.0 / 6.0, -5.0 / 6.0, 0.5, 0.0, 0.0],
    [0.25, 7.0 / 4.0, 0.75, -7.0 / 4.0, 0.0],
];
// implicit tableau; stage 0 is explicit, so the first column is zero
const AI: [[f64; STAGES]; STAGES] = [
    [0.0; STAGES],
    [0.0, 0.5, 0.0, 0.0, 0.0],
    [0.0, 1.0 / 6.0, 0.5, 0.0, 0.0],
    [0.0, -0.5, 0.5, 0.5, 0.0],
    [0.0, 1.5, -1.5, 0.5, 0.5],
];

/// `ψ_i` and the accumulated exponent on a uniform grid in time to maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    /// `psi[j][i]` is `ψ_i` at `grid[j]`.
    pub psi: Vec<Vec<Complex64>>,
    /// `φ(σ) = ∫₀^σ g(T − s) F(u, Σ c_i ψ_i(s)) ds`
    pub phi: Vec<Complex64>,
}

impl RiccatiSolution {
    /// Log characteristic function of `ln(S_τ/S_t)` from factor state `v`,
    /// with `τ` the last grid point.
    pub fn log_cf(&self, spec: &LiftedHestonSpec, u: Complex64, v: &[f64]) -> Complex64 {
        let tau = *self.grid.last().expect("non-empty grid");
        let last = self.psi.last().expect("non-empty grid");
        let factor: Complex64 = spec.c.iter().zip(last).zip(v).map(|((c, p), v)| c * p * v).sum();
        Complex64::i() * u * spec.r * tau + factor + self.phi.last().expect("non-empty grid")
    }
}

fn forcing(spec: &LiftedHestonSpec, u: Complex64, psi: &[Complex64]) -> Complex64 {
    let i = Complex64::i();
    let w: Complex64 = spec.c.iter().zip(psi).map(|(c, p)| c * p).sum();
    0.5 * (-u * u - i * u) + (spec.rho * spec.eta * i * u - spec.lambda) * w + 0.5 * spec.eta * spec.eta * w * w
}

/// Solves `ψ_i' = −γ_i ψ_i + F(u, Σ c_j ψ_j)`, `ψ_i(0) = 0`, on `[0, τ]`.
pub fn lifted_riccati(spec: &LiftedHestonSpec, u: Complex64, tau: f64, steps: usize) -> Result<RiccatiSolution> {
    if steps == 0 || !(tau >= 0.0) {
        return Err(Error::Config(format!("riccati needs steps >= 1 and tau >= 0, got {steps}, {tau}")));
    }
    let n = spec.factors();
    let h = tau / steps as f64;
    let zero = Complex64::new(0.0, 0.0);
    let mut sol = RiccatiSolution {
        grid: Vec::with_capacity(steps + 1),
        psi: Vec::with_capacity(steps + 1),
        phi: Vec::with_capacity(steps + 1),
    };
    let mut psi = vec![zero; n];
    let mut phi = zero;
    sol.grid.push(0.0);
    sol.psi.push(psi.clone());
    sol.phi.push(phi);

    let mut stage = vec![vec![zero; n]; STAGES];
    let mut explicit = [zero; STAGES];
    let mut weighted = [zero; STAGES];
    for step in 0..steps {
        let s0 = step as f64 * h;
        for k in 0..STAGES {
            for i in 0..n {
                let mut rhs = psi[i];
                for j in 0..k {
                    rhs += h * (AE[k][j] * explicit[j] - AI[k][j] * spec.gamma[i] * stage[j][i]);
                }
                stage[k][i] = rhs / (1.0 + h * AI[k][k] * spec.gamma[i]);
            }
            explicit[k] = forcing(spec, u, &stage[k]);
            weighted[k] = spec.g_n(spec.maturity - (s0 + C[k] * h)) * explicit[k];
        }
        // stiffly accurate: the new state is the last stage
        psi.copy_from_slice(&stage[STAGES - 1]);
        // the final stage has no explicit weight; its forcing seeds nothing
        phi += h * (0..STAGES - 1).map(|j| AE[STAGES - 1][j] * weighted[j]).sum::<Complex64>();
        if !phi.is_finite() || psi.iter().any(|p| !p.is_finite()) {
            return Err(Error::RiccatiInstability { u: u.to_string() });
        }
        sol.grid.push(s0 + h);
        sol.psi.push(psi.clone());
        sol.phi.push(phi);
    }
    Ok(sol)
}

/// Characteristic function of `ln(S_τ/S_{T−τ})` from factor state `v`.
pub fn lifted_cf(spec: &LiftedHestonSpec, u: Complex64, tau: f64, v: &[f64], steps: usize) -> Result<Complex64> {
    Ok(lifted_riccati(spec, u, tau, steps)?.log_cf(spec, u, v).exp())
}
