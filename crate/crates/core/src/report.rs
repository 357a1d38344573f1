//! Error metrics of trained prices against a reference on a moneyness grid.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::reference::{bs_price, cos_price, heston_cf_at, lifted_riccati, CosConfig, DEFAULT_RICCATI_STEPS};
use crate::solver::{Problem, TimeSteppedSolution};

fn check_lengths(approx: &[f64], reference: &[f64]) -> Result<()> {
    if approx.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: approx.len(),
        });
    }
    Ok(())
}

/// `‖approx − ref‖₂ / ‖ref‖₂`
pub fn relative_l2(approx: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(approx, reference)?;
    let norm = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::UndefinedMetric("reference prices have zero norm".into()));
    }
    let diff = approx.iter().zip(reference).map(|(a, r)| (a - r) * (a - r)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// `max_i |approx_i − ref_i|`
pub fn max_abs(approx: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(approx, reference)?;
    Ok(approx.iter().zip(reference).map(|(a, r)| (a - r).abs()).fold(0.0, f64::max))
}

/// Moneyness points at fixed values of the remaining state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationGrid {
    pub moneyness: Vec<f64>,
    /// Times to maturity.
    pub times: Vec<f64>,
    /// Values of the non-moneyness coordinates.
    pub state: Vec<f64>,
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl EvaluationGrid {
    /// 47 points on `[0.01, 3]` at every `t_k`, on the slice `v = V₀` for
    /// Heston and all factors zero for lifted Heston.
    pub fn standard(problem: &Problem) -> Self {
        let state = match &problem.model {
            ModelSpec::BlackScholes(_) => vec![],
            ModelSpec::Heston(s) => vec![s.v0],
            ModelSpec::LiftedHeston(s) => vec![0.0; s.factors()],
        };
        Self {
            moneyness: linspace(0.01, 3.0, 47),
            times: (1..=problem.solver.time_steps).map(|k| problem.tau(k)).collect(),
            state,
        }
    }

    pub fn points(&self) -> Array2<f64> {
        let d = 1 + self.state.len();
        let mut out = Array2::zeros((self.moneyness.len(), d));
        for (mut row, &x) in out.rows_mut().into_iter().zip(&self.moneyness) {
            row[0] = x;
            for (j, &v) in self.state.iter().enumerate() {
                row[j + 1] = v;
            }
        }
        out
    }
}

/// Prices on a grid at one time to maturity.
pub trait ReferencePricer {
    fn prices(&self, tau: f64, grid: &EvaluationGrid) -> Result<Vec<f64>>;
}

impl ReferencePricer for TimeSteppedSolution {
    fn prices(&self, tau: f64, grid: &EvaluationGrid) -> Result<Vec<f64>> {
        TimeSteppedSolution::prices(self, self.step_of(tau)?, grid.points().view())
    }
}

/// Closed form for Black–Scholes, cosine expansion for the affine models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReference {
    pub model: ModelSpec,
    pub cos: CosConfig,
    pub riccati_steps: usize,
}

impl ModelReference {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            cos: CosConfig::default(),
            riccati_steps: DEFAULT_RICCATI_STEPS,
        }
    }
}

impl ReferencePricer for ModelReference {
    fn prices(&self, tau: f64, grid: &EvaluationGrid) -> Result<Vec<f64>> {
        if grid.state.len() + 1 != self.model.dim() {
            return Err(Error::Dimension {
                expected: self.model.dim() - 1,
                got: grid.state.len(),
            });
        }
        if tau <= 0.0 {
            return Ok(grid.moneyness.iter().map(|x| (x - 1.0).max(0.0)).collect());
        }
        match &self.model {
            ModelSpec::BlackScholes(s) => Ok(grid.moneyness.iter().map(|&x| bs_price(s.sigma, s.r, tau, x)).collect()),
            ModelSpec::Heston(s) => {
                let v = grid.state[0];
                cos_price(|u| heston_cf_at(s, u, tau, v), &self.cos, s.r, tau, &grid.moneyness)
            }
            ModelSpec::LiftedHeston(s) => {
                if tau > s.maturity {
                    return Err(Error::Config(format!("tau {tau} beyond maturity {}", s.maturity)));
                }
                let [lo, hi] = self.cos.interval(tau);
                let len = hi - lo;
                let cf = (0..self.cos.terms)
                    .map(|k| {
                        let u = Complex64::new(k as f64 * std::f64::consts::PI / len, 0.0);
                        Ok(lifted_riccati(s, u, tau, self.riccati_steps)?.log_cf(s, u, &grid.state).exp())
                    })
                    .collect::<Result<Vec<_>>>()?;
                // the expansion only queries the cf at its own frequencies
                let lookup = |u: Complex64| {
                    let k = (u.re * len / std::f64::consts::PI).round() as usize;
                    cf[k]
                };
                cos_price(lookup, &self.cos, s.r, tau, &grid.moneyness)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub time: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub time: f64,
    pub moneyness: f64,
    pub price_tdgf: f64,
    pub price_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub model: String,
    /// SHA-256 of the problem definition.
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ErrorRow>,
    pub prices: Vec<PriceRow>,
}

/// SHA-256 of the canonical JSON form of `problem`.
pub fn config_hash(problem: &Problem) -> String {
    let json = serde_json::to_vec(problem).expect("problem serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn evaluate_solution(sol: &TimeSteppedSolution, grid: &EvaluationGrid, reference: &dyn ReferencePricer) -> Result<ErrorReport> {
    let mut missing: Vec<usize> = Vec::new();
    for &t in &grid.times {
        let k = sol.step_of(t)?;
        if k > sol.steps.len() && !missing.contains(&k) {
            missing.push(k);
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(Error::IncompleteSolution(missing));
    }
    let mut rows = Vec::with_capacity(grid.times.len());
    let mut prices = Vec::with_capacity(grid.times.len() * grid.moneyness.len());
    for &t in &grid.times {
        let approx = ReferencePricer::prices(sol, t, grid)?;
        let exact = reference.prices(t, grid)?;
        rows.push(ErrorRow {
            time: t,
            rel_l2: relative_l2(&approx, &exact)?,
            max_abs: max_abs(&approx, &exact)?,
        });
        for ((&x, &a), &r) in grid.moneyness.iter().zip(&approx).zip(&exact) {
            prices.push(PriceRow {
                time: t,
                moneyness: x,
                price_tdgf: a,
                price_ref: r,
            });
        }
    }
    Ok(ErrorReport {
        model: sol.problem.model.name().to_string(),
        config_hash: config_hash(&sol.problem),
        seed: sol.problem.solver.seed,
        rows,
        prices,
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ErrorReport {
    pub fn write_errors_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "time,rel_l2,max_abs")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", fmt_f64(r.time), fmt_f64(r.rel_l2), fmt_f64(r.max_abs))?;
        }
        Ok(())
    }

    pub fn write_prices_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "time,moneyness,price_tdgf,price_ref")?;
        for r in &self.prices {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(r.time),
                fmt_f64(r.moneyness),
                fmt_f64(r.price_tdgf),
                fmt_f64(r.price_ref)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlackScholesSpec, HestonSpec, LiftedHestonSpec};
    use crate::solver::{solve, NetworkConfig, SolverConfig};
    use proptest::prelude::*;

    fn small_solution(steps: usize) -> TimeSteppedSolution {
        let mut cfg = SolverConfig::new(steps, 1.0);
        cfg.sampling_stages = 3;
        let mut p = Problem::new(ModelSpec::BlackScholes(BlackScholesSpec { r: 0.05, sigma: 0.25 }), cfg);
        p.network = NetworkConfig {
            layers: 1,
            width: 4,
            ..NetworkConfig::default()
        };
        p.sampling.samples_per_dim = 16;
        solve(&p, &mut ()).unwrap()
    }

    #[test]
    fn metric_hand_values() {
        let r = linspace(0.01, 3.0, 47);
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        assert_eq!(max_abs(&r, &r).unwrap(), 0.0);
        let scaled: Vec<f64> = r.iter().map(|v| 1.01 * v).collect();
        assert!((relative_l2(&scaled, &r).unwrap() - 0.01).abs() < 1e-14);
        let mut bumped = r.clone();
        bumped[0] += 0.3;
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((relative_l2(&bumped, &r).unwrap() - 0.3 / norm).abs() < 1e-15);
        assert!((max_abs(&bumped, &r).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(relative_l2(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(max_abs(&[1.0], &[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(v in prop::collection::vec((0.1f64..2.0, -0.5f64..0.5), 2..30), shift in 1usize..29) {
            let r: Vec<f64> = v.iter().map(|p| p.0).collect();
            let a: Vec<f64> = v.iter().map(|p| p.0 + p.1).collect();
            let k = shift % r.len();
            let (mut r2, mut a2) = (r.clone(), a.clone());
            r2.rotate_left(k);
            a2.rotate_left(k);
            prop_assert!((relative_l2(&a, &r).unwrap() - relative_l2(&a2, &r2).unwrap()).abs() < 1e-14);
            prop_assert_eq!(max_abs(&a, &r).unwrap(), max_abs(&a2, &r2).unwrap());
            prop_assert!(relative_l2(&a, &r).unwrap() >= 0.0);
        }
    }

    #[test]
    fn self_reference_gives_zero_errors() {
        let sol = small_solution(4);
        let grid = EvaluationGrid::standard(&sol.problem);
        let report = evaluate_solution(&sol, &grid, &sol).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.rel_l2 == 0.0 && r.max_abs == 0.0));
        assert_eq!(report.prices.len(), 4 * 47);
    }

    #[test]
    fn report_rows_follow_requested_times() {
        let sol = small_solution(34);
        let mut grid = EvaluationGrid::standard(&sol.problem);
        assert_eq!(grid.times.len(), 34);
        grid.times.truncate(3);
        let report = evaluate_solution(&sol, &grid, &ModelReference::new(sol.problem.model.clone())).unwrap();
        assert_eq!(report.rows.len(), 3);
        let mut a = Vec::new();
        let mut b = Vec::new();
        report.write_errors_csv(&mut a).unwrap();
        evaluate_solution(&sol, &grid, &ModelReference::new(sol.problem.model.clone()))
            .unwrap()
            .write_errors_csv(&mut b)
            .unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("time,rel_l2,max_abs\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn incomplete_solutions_are_refused() {
        let mut sol = small_solution(3);
        sol.steps.truncate(1);
        let grid = EvaluationGrid::standard(&sol.problem);
        match evaluate_solution(&sol, &grid, &ModelReference::new(sol.problem.model.clone())) {
            Err(Error::IncompleteSolution(m)) => assert_eq!(m, vec![2, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f64_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn lifted_reference_with_heston_lift_matches_heston() {
        let h = HestonSpec {
            r: 0.0,
            lambda: 0.3,
            kappa: 0.02,
            eta: 0.3,
            rho: -0.7,
            v0: 0.02,
        };
        let l = LiftedHestonSpec {
            r: h.r,
            lambda: h.lambda,
            kappa: h.kappa,
            eta: h.eta,
            rho: h.rho,
            v0: h.v0,
            maturity: 1.0,
            c: vec![1.0],
            gamma: vec![0.0],
            hurst: None,
        };
        let grid = EvaluationGrid {
            moneyness: linspace(0.5, 1.5, 5),
            times: vec![1.0],
            state: vec![0.02],
        };
        let a = ModelReference::new(ModelSpec::Heston(h)).prices(1.0, &grid).unwrap();
        let b = ModelReference::new(ModelSpec::LiftedHeston(l)).prices(1.0, &EvaluationGrid { state: vec![0.0], ..grid }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
