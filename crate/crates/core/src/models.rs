//! Operator coefficients `(A, b, r)` of the split generator
//! `𝒜u = −∇·(A∇u) + b·∇u` for each supported model.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BlackScholesSpec {
    pub r: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HestonSpec {
    pub r: f64,
    /// Mean-reversion speed.
    pub lambda: f64,
    /// Long-run variance.
    pub kappa: f64,
    /// Volatility of variance.
    pub eta: f64,
    pub rho: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LiftedHestonSpec {
    pub r: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub eta: f64,
    pub rho: f64,
    pub v0: f64,
    /// Maturity `T`; the deterministic variance curve is read at `T − tau`.
    pub maturity: f64,
    /// Factor weights `c_i`.
    pub c: Vec<f64>,
    /// Factor mean-reversion speeds `γ_i`.
    pub gamma: Vec<f64>,
    /// Hurst index of the rough model being approximated. Metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
}

/// One of the supported diffusion models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    BlackScholes(BlackScholesSpec),
    Heston(HestonSpec),
    LiftedHeston(LiftedHestonSpec),
}

/// `A` (row-major `d × d`), `b`, `r` at one state, plus a factorization
/// `A = Σ_k q_k q_kᵀ` used to evaluate `(∇u)ᵀA∇u` from directional
/// derivatives only.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCoefficients {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rate: f64,
    pub factor: Vec<Vec<f64>>,
}

impl OperatorCoefficients {
    /// Builds coefficients from an explicit symmetric PSD matrix, factoring
    /// it by pivoted Cholesky.
    pub fn from_matrix(a: Vec<f64>, b: Vec<f64>, rate: f64) -> Result<Self> {
        let dim = b.len();
        if a.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: a.len(),
            });
        }
        let factor = psd_factor(&a, dim)?;
        Ok(Self {
            dim,
            a,
            b,
            rate,
            factor,
        })
    }

    pub fn a_at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    /// `zᵀ A z`
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += z[i] * self.a[i * d + j] * z[j];
            }
        }
        acc
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| self.a[i * d + j] == self.a[j * d + i]))
    }
}

/// Pivoted Cholesky of a symmetric PSD matrix; columns whose pivot falls
/// below `1e-14 · max diag` are dropped.
fn psd_factor(a: &[f64], d: usize) -> Result<Vec<Vec<f64>>> {
    let mut work = a.to_vec();
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let tol = 1e-14 * scale.max(f64::MIN_POSITIVE);
    let mut cols = Vec::new();
    let mut used = vec![false; d];
    for _ in 0..d {
        let (p, piv) = (0..d)
            .filter(|&i| !used[i])
            .map(|i| (i, work[i * d + i]))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        if p == usize::MAX || piv <= tol {
            if piv < -1e-10 * scale.max(1.0) {
                return Err(Error::Domain(format!("matrix is not positive semi-definite (pivot {piv})")));
            }
            break;
        }
        used[p] = true;
        let root = piv.sqrt();
        let col: Vec<f64> = (0..d)
            .map(|i| if used[i] && i != p { 0.0 } else { work[i * d + p] / root })
            .collect();
        for i in 0..d {
            for j in 0..d {
                work[i * d + j] -= col[i] * col[j];
            }
        }
        cols.push(col);
    }
    Ok(cols)
}

impl LiftedHestonSpec {
    pub fn factors(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.is_empty() || self.c.len() != self.gamma.len() {
            return Err(Error::Config(format!(
                "lifted heston needs matching non-empty c and gamma lists, got {} and {}",
                self.c.len(),
                self.gamma.len()
            )));
        }
        if self.c.iter().any(|&c| !(c > 0.0)) || self.gamma.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Config("lifted heston needs c_i > 0 and gamma_i >= 0".into()));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::Config("lifted heston maturity must be positive".into()));
        }
        check_heston_like(self.lambda, self.kappa, self.eta, self.rho)
    }

    /// `g^n(t) = V₀ + λκ Σ c_i ∫₀ᵗ e^{−γ_i (t−s)} ds`, integral in closed form.
    pub fn g_n(&self, t: f64) -> f64 {
        let integral: f64 = self
            .c
            .iter()
            .zip(&self.gamma)
            .map(|(&c, &g)| c * decay_integral(g, t))
            .sum();
        self.v0 + self.lambda * self.kappa * integral
    }

    /// Total variance `g^n(T − tau) + Σ c_i v_i`; may be negative.
    pub fn v_tilde(&self, tau: f64, v: &[f64]) -> f64 {
        self.g_n(self.maturity - tau) + self.c.iter().zip(v).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// `∫₀ᵗ e^{−γ(t−s)} ds`, with the `γ = 0` limit `t`.
pub(crate) fn decay_integral(gamma: f64, t: f64) -> f64 {
    if gamma == 0.0 {
        t
    } else {
        -(-gamma * t).exp_m1() / gamma
    }
}

fn check_heston_like(lambda: f64, kappa: f64, eta: f64, rho: f64) -> Result<()> {
    if !(lambda > 0.0 && kappa > 0.0 && eta > 0.0) {
        return Err(Error::Config(format!(
            "need lambda, kappa, eta > 0, got {lambda}, {kappa}, {eta}"
        )));
    }
    if !(rho.abs() <= 1.0) {
        return Err(Error::Config(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(())
}

/// Anything that yields split coefficients at a state.
pub trait Operator: Sync {
    fn dim(&self) -> usize;
    fn coefficients(&self, tau: f64, x: &[f64]) -> Result<OperatorCoefficients>;
}

impl Operator for ModelSpec {
    fn dim(&self) -> usize {
        ModelSpec::dim(self)
    }

    fn coefficients(&self, tau: f64, x: &[f64]) -> Result<OperatorCoefficients> {
        ModelSpec::coefficients(self, tau, x)
    }
}

impl ModelSpec {
    /// State dimension `n + 1`.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::BlackScholes(_) => 1,
            ModelSpec::Heston(_) => 2,
            ModelSpec::LiftedHeston(s) => 1 + s.factors(),
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            ModelSpec::BlackScholes(s) => s.r,
            ModelSpec::Heston(s) => s.r,
            ModelSpec::LiftedHeston(s) => s.r,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::BlackScholes(_) => "black_scholes",
            ModelSpec::Heston(_) => "heston",
            ModelSpec::LiftedHeston(_) => "lifted_heston",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::BlackScholes(s) => {
                if !(s.sigma > 0.0) || !s.r.is_finite() {
                    return Err(Error::Config(format!("black-scholes needs sigma > 0, got {}", s.sigma)));
                }
                Ok(())
            }
            ModelSpec::Heston(s) => check_heston_like(s.lambda, s.kappa, s.eta, s.rho),
            ModelSpec::LiftedHeston(s) => s.validate(),
        }
    }

    /// Coefficients at state `x = (moneyness, variance coordinates…)` for a
    /// step at time to maturity `tau`.
    pub fn coefficients(&self, tau: f64, x: &[f64]) -> Result<OperatorCoefficients> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            ModelSpec::BlackScholes(s) => bs_coefficients(s, x[0]),
            ModelSpec::Heston(s) => heston_coefficients(s, x[0], x[1])?,
            ModelSpec::LiftedHeston(s) => lifted_heston_coefficients(s, tau, x[0], &x[1..])?,
        })
    }
}

pub fn bs_coefficients(spec: &BlackScholesSpec, x: f64) -> OperatorCoefficients {
    let s2 = spec.sigma * spec.sigma;
    OperatorCoefficients {
        dim: 1,
        a: vec![0.5 * s2 * x * x],
        b: vec![(s2 - spec.r) * x],
        rate: spec.r,
        factor: vec![vec![spec.sigma * x * std::f64::consts::FRAC_1_SQRT_2]],
    }
}

pub fn heston_coefficients(spec: &HestonSpec, x: f64, v: f64) -> Result<OperatorCoefficients> {
    if v < 0.0 {
        return Err(Error::Domain(format!("negative variance v={v} at x={x}")));
    }
    let HestonSpec {
        r,
        lambda,
        kappa,
        eta,
        rho,
        ..
    } = *spec;
    let a01 = 0.5 * rho * eta * x * v;
    let half = (0.5 * v).sqrt();
    Ok(OperatorCoefficients {
        dim: 2,
        a: vec![0.5 * x * x * v, a01, a01, 0.5 * eta * eta * v],
        b: vec![
            (-r + v + 0.5 * rho * eta) * x,
            lambda * (v - kappa) + 0.5 * eta * eta + 0.5 * rho * eta * v,
        ],
        rate: r,
        factor: vec![
            vec![half * x, half * rho * eta],
            vec![0.0, half * eta * (1.0 - rho * rho).max(0.0).sqrt()],
        ],
    })
}

pub fn lifted_heston_coefficients(
    spec: &LiftedHestonSpec,
    tau: f64,
    x: f64,
    v: &[f64],
) -> Result<OperatorCoefficients> {
    let vt = spec.v_tilde(tau, v);
    if vt < 0.0 {
        return Err(Error::Domain(format!(
            "negative total variance {vt} at tau={tau}, x={x}, v={v:?}"
        )));
    }
    let n = spec.factors();
    let d = n + 1;
    let LiftedHestonSpec {
        r,
        lambda,
        eta,
        rho,
        ..
    } = *spec;
    let c_sum: f64 = spec.c.iter().sum();
    let mut a = vec![0.0; d * d];
    a[0] = 0.5 * vt * x * x;
    let cross = 0.5 * eta * rho * vt * x;
    let var = 0.5 * eta * eta * vt;
    for i in 1..d {
        a[i] = cross;
        a[i * d] = cross;
        for j in 1..d {
            a[i * d + j] = var;
        }
    }
    let mut b = Vec::with_capacity(d);
    b.push((vt - r + 0.5 * eta * rho * c_sum) * x);
    let common = lambda * vt + 0.5 * eta * rho * vt + 0.5 * eta * eta * c_sum;
    for (g, vi) in spec.gamma.iter().zip(v) {
        b.push(g * vi + common);
    }
    let half = (0.5 * vt).sqrt();
    let mut q1 = vec![half * rho * eta; d];
    q1[0] = half * x;
    let mut q2 = vec![half * eta * (1.0 - rho * rho).max(0.0).sqrt(); d];
    q2[0] = 0.0;
    Ok(OperatorCoefficients {
        dim: d,
        a,
        b,
        rate: r,
        factor: vec![q1, q2],
    })
}
