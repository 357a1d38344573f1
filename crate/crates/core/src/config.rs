//! Run configuration as read from JSON.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::reference::{bs_cf, cos_price, CosConfig, DEFAULT_RICCATI_STEPS};
use crate::report::{linspace, EvaluationGrid, ModelReference, ReferencePricer};
use crate::sampler::SamplingDomain;
use crate::solver::{NetworkConfig, Problem, SolverConfig};

/// Evenly spaced moneyness points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 0.01,
            hi: 3.0,
            points: 47,
        }
    }
}

impl GridSpec {
    /// Parses `lo:hi:points`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("grid must look like lo:hi:points, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let spec = Self {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            points: parts[2].trim().parse().map_err(|_| bad())?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.points >= 1 && self.lo > 0.0 && self.hi.is_finite() && (self.hi > self.lo || self.points == 1 && self.hi == self.lo);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid moneyness grid {self:?}")))
        }
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.lo, self.hi, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Closed form for Black–Scholes, cosine expansion otherwise.
    #[default]
    Auto,
    ClosedForm,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default)]
    pub grid: GridSpec,
    /// Times to maturity; every `t_k` when absent.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Non-moneyness coordinates of the slice; `V₀` for Heston and zero
    /// factors for lifted Heston when absent.
    #[serde(default)]
    pub state: Option<Vec<f64>>,
    #[serde(default)]
    pub reference: ReferenceKind,
    #[serde(default)]
    pub cos: CosConfig,
    #[serde(default = "default_riccati_steps")]
    pub riccati_steps: usize,
}

fn default_riccati_steps() -> usize {
    DEFAULT_RICCATI_STEPS
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            times: None,
            state: None,
            reference: ReferenceKind::Auto,
            cos: CosConfig::default(),
            riccati_steps: DEFAULT_RICCATI_STEPS,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub solver: SolverConfig,
    /// Sampling box; the model's default box when absent.
    #[serde(default)]
    pub sampling: Option<SamplingDomain>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Overrides `solver.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.problem()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The validated training problem.
    pub fn problem(&self) -> Result<Problem> {
        let mut solver = self.solver.clone();
        if let Some(seed) = self.seed {
            solver.seed = seed;
        }
        let sampling = self
            .sampling
            .clone()
            .unwrap_or_else(|| SamplingDomain::for_model(&self.model, solver.maturity));
        let problem = Problem {
            model: self.model.clone(),
            network: self.network,
            sampling,
            solver,
        };
        problem.validate()?;
        self.evaluation.grid.validate()?;
        Ok(problem)
    }

    pub fn evaluation_grid(&self, problem: &Problem) -> Result<EvaluationGrid> {
        let mut grid = EvaluationGrid::standard(problem);
        grid.moneyness = self.evaluation.grid.values();
        if let Some(t) = &self.evaluation.times {
            grid.times = t.clone();
        }
        if let Some(s) = &self.evaluation.state {
            if s.len() + 1 != problem.model.dim() {
                return Err(Error::Config(format!(
                    "evaluation state has {} coordinates, the model needs {}",
                    s.len(),
                    problem.model.dim() - 1
                )));
            }
            grid.state = s.clone();
        }
        Ok(grid)
    }

    pub fn reference(&self) -> Result<Box<dyn ReferencePricer>> {
        let base = ModelReference {
            model: self.model.clone(),
            cos: self.evaluation.cos,
            riccati_steps: self.evaluation.riccati_steps,
        };
        match (&self.model, self.evaluation.reference) {
            (ModelSpec::BlackScholes(_), ReferenceKind::Auto | ReferenceKind::ClosedForm) => Ok(Box::new(base)),
            (ModelSpec::BlackScholes(_), ReferenceKind::Cos) => Ok(Box::new(BlackScholesCos(base))),
            (_, ReferenceKind::Auto | ReferenceKind::Cos) => Ok(Box::new(base)),
            (m, ReferenceKind::ClosedForm) => Err(Error::Config(format!("no closed-form reference for the {} model", m.name()))),
        }
    }
}

/// Black–Scholes priced through its characteristic function.
struct BlackScholesCos(ModelReference);

impl ReferencePricer for BlackScholesCos {
    fn prices(&self, tau: f64, grid: &EvaluationGrid) -> Result<Vec<f64>> {
        let ModelSpec::BlackScholes(s) = &self.0.model else {
            unreachable!("constructed for black-scholes only")
        };
        if tau <= 0.0 {
            return self.0.prices(tau, grid);
        }
        cos_price(bs_cf(s.sigma, s.r, tau), &self.0.cos, s.r, tau, &grid.moneyness)
    }
}

/// JSON schema of [`RunConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BS: &str = r#"{
        "model": {"type": "black_scholes", "r": 0.05, "sigma": 0.25},
        "solver": {"time_steps": 4, "maturity": 1.0}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_json(BS).unwrap();
        let p = cfg.problem().unwrap();
        assert_eq!(p.network, NetworkConfig::default());
        assert_eq!(p.sampling.samples_per_dim, 600);
        assert_eq!(p.solver.sampling_stages, 2000);
        let grid = cfg.evaluation_grid(&p).unwrap();
        assert_eq!(grid.moneyness.len(), 47);
        assert_eq!(grid.times.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = BS.replace("\"sigma\": 0.25", "\"sigma\": 0.25, \"vol\": 1");
        match RunConfig::from_json(&text) {
            Err(Error::Config(m)) => assert!(m.starts_with("line 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = BS.replace("\"time_steps\": 4", "\"time_steps\": 0");
        assert_eq!(RunConfig::from_json(&text).unwrap_err().exit_code(), 2);
        let text = BS.replace("0.25", "-0.25");
        assert_eq!(RunConfig::from_json(&text).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn seed_override() {
        let text = BS.replace("\"maturity\": 1.0}", "\"maturity\": 1.0, \"seed\": 3}, \"seed\": 9");
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.problem().unwrap().solver.seed, 9);
    }

    #[test]
    fn reference_dispatch() {
        let heston = r#"{
            "model": {"type": "heston", "r": 0.0, "lambda": 2.0, "kappa": 0.01, "eta": 0.1, "rho": 0.0, "v0": 0.03},
            "solver": {"time_steps": 2, "maturity": 1.0},
            "evaluation": {"reference": "closed_form"}
        }"#;
        let cfg = RunConfig::from_json(heston).unwrap();
        assert_eq!(cfg.reference().err().map(|e| e.exit_code()), Some(2));

        let text = BS.replace("\"solver\"", "\"evaluation\": {\"reference\": \"cos\"}, \"solver\"");
        let cfg = RunConfig::from_json(&text).unwrap();
        let p = cfg.problem().unwrap();
        let grid = cfg.evaluation_grid(&p).unwrap();
        let a = cfg.reference().unwrap().prices(1.0, &grid).unwrap();
        let b = RunConfig::from_json(BS).unwrap().reference().unwrap().prices(1.0, &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!(GridSpec::parse("0.5:1.5:3").unwrap().values(), vec![0.5, 1.0, 1.5]);
        assert_eq!(GridSpec::parse("1:1:1").unwrap().values(), vec![1.0]);
        assert!(GridSpec::parse("1:2").is_err());
        assert!(GridSpec::parse("2:1:5").is_err());
        assert!(GridSpec::parse("0:1:5").is_err());
    }

    #[test]
    fn published_schema_is_current() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json");
        let published: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(published, schema(), "regenerate docs/config.schema.json");
    }
}
