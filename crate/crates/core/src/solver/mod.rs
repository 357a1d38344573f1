//! Time stepping: one energy minimization per step, warm-started from the
//! previous step's parameters.

mod adam;
mod loss;

use std::time::Instant;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamConfig, AdamState};
pub use loss::{loss_and_grad, loss_value, prepare, sample_energy, step_loss, PreparedBatch, Previous};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::network::{batch, forward, initial_condition_eval, Dims, EvalContext, NetworkParams};
use crate::sampler::{sample_batch, sample_faces, step_rng, RngPurpose, SamplingDomain};

fn default_stages() -> usize {
    2000
}

fn default_log_every() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of time steps `N`.
    pub time_steps: usize,
    pub maturity: f64,
    #[serde(default = "default_stages")]
    pub sampling_stages: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    /// Include the boundary flux of the previous step in the loss.
    #[serde(default = "default_true")]
    pub boundary_flux: bool,
    /// Stage interval between progress records.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl SolverConfig {
    pub fn new(time_steps: usize, maturity: f64) -> Self {
        Self {
            time_steps,
            maturity,
            sampling_stages: default_stages(),
            adam: AdamConfig::default(),
            seed: 0,
            boundary_flux: true,
            log_every: default_log_every(),
        }
    }

    pub fn h(&self) -> f64 {
        self.maturity / self.time_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be at least 1".into()));
        }
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return Err(Error::Config(format!("maturity must be positive, got {}", self.maturity)));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub layers: usize,
    pub width: usize,
    pub x_p: f64,
    /// Output bias of the first network. Negative values start the softplus
    /// time value near zero instead of at `ln 2`.
    pub initial_output_bias: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            width: 50,
            x_p: 2.0,
            initial_output_bias: -5.0,
        }
    }
}

/// Everything that determines a trained solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub model: ModelSpec,
    pub network: NetworkConfig,
    pub sampling: SamplingDomain,
    pub solver: SolverConfig,
}

impl Problem {
    /// Default network and sampling box for `model`.
    pub fn new(model: ModelSpec, solver: SolverConfig) -> Self {
        let sampling = SamplingDomain::for_model(&model, solver.maturity);
        Self {
            model,
            network: NetworkConfig::default(),
            sampling,
            solver,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.solver.validate()?;
        self.sampling.validate(&self.model)?;
        self.dims()?;
        if !self.network.initial_output_bias.is_finite() {
            return Err(Error::Config("initial_output_bias must be finite".into()));
        }
        EvalContext::new(0.0, 0.0, self.network.x_p).map(|_| ())
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.model.dim(), self.network.width, self.network.layers)
    }

    pub fn tau(&self, k: usize) -> f64 {
        k as f64 * self.solver.h()
    }

    pub fn context(&self, k: usize) -> EvalContext {
        EvalContext {
            strike: 1.0,
            rate: self.model.rate(),
            tau: self.tau(k),
            x_p: self.network.x_p,
        }
    }

    /// Parameters of step 1 before training.
    pub fn initial_params(&self) -> Result<NetworkParams> {
        let dims = self.dims()?;
        let mut net = NetworkParams::init(dims, self.solver.seed ^ RngPurpose::Initialization as u64);
        net.data[dims.output_bias()] = self.network.initial_output_bias;
        Ok(net)
    }
}

/// Outcome of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub stages: usize,
    /// Loss of the warm start and of the result on the frozen validation batch.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub skipped_stages: usize,
    pub seconds: f64,
}

/// One progress record, emitted every `log_every` stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRecord {
    pub step: usize,
    pub stage: usize,
    pub loss: f64,
}

/// Receives progress while training runs.
pub trait Observer {
    fn stage(&mut self, _record: &StageRecord) {}
    fn step(&mut self, _diagnostics: &StepDiagnostics) {}
}

impl Observer for () {}

const MAX_BAD_STAGES: usize = 5;

/// Trains step `k` from `init`, with `prev` the frozen solution at `t_{k−1}`.
pub fn train_step(
    problem: &Problem,
    k: usize,
    prev: &Previous,
    init: NetworkParams,
    observer: &mut dyn Observer,
) -> Result<(NetworkParams, StepDiagnostics)> {
    let start = Instant::now();
    let cfg = &problem.solver;
    if k == 0 || k > cfg.time_steps {
        return Err(Error::Config(format!("step {k} outside 1..={}", cfg.time_steps)));
    }
    let (h, tau, ctx) = (cfg.h(), problem.tau(k), problem.context(k));
    let model = &problem.model;
    let domain = &problem.sampling;

    let batch_for = |rng: &mut _| -> Result<PreparedBatch> {
        let batch = sample_batch(domain, model, tau, rng)?;
        let faces = if cfg.boundary_flux {
            sample_faces(domain, model, tau, rng)
        } else {
            Vec::new()
        };
        prepare(model, tau, &batch, &faces, prev)
    };

    let validation = batch_for(&mut step_rng(cfg.seed, k, RngPurpose::Validation))?;
    let initial_loss = loss_value(&init, &ctx, h, &validation)?;

    let mut rng = step_rng(cfg.seed, k, RngPurpose::Training);
    let mut theta = init;
    let mut state = AdamState::new(theta.len());
    let mut rollback = (theta.clone(), state.clone());
    let (mut bad_run, mut skipped) = (0, 0);
    for stage in 0..cfg.sampling_stages {
        let prep = batch_for(&mut rng)?;
        let outcome = match loss_and_grad(&theta, &ctx, h, &prep) {
            Ok((l, g)) if l.is_finite() && g.iter().all(|v| v.is_finite()) => Ok((l, g)),
            Ok((l, _)) => Err(format!("non-finite gradient at loss {l:e}")),
            Err(Error::NumericOverflow { sample, detail }) => Err(format!("sample {sample}: {detail}")),
            Err(e) => return Err(e),
        };
        match outcome {
            Ok((l, g)) => {
                bad_run = 0;
                rollback.0.data.copy_from_slice(&theta.data);
                rollback.1.clone_from(&state);
                adam_update(&mut theta.data, &g, &mut state, &cfg.adam);
                if cfg.log_every > 0 && (stage + 1) % cfg.log_every == 0 {
                    observer.stage(&StageRecord { step: k, stage: stage + 1, loss: l });
                }
            }
            Err(detail) => {
                bad_run += 1;
                skipped += 1;
                if bad_run >= MAX_BAD_STAGES {
                    return Err(Error::Divergence { step: k, stage, detail });
                }
                // undo the update that produced the spike
                theta.data.copy_from_slice(&rollback.0.data);
                state.clone_from(&rollback.1);
            }
        }
    }

    let final_loss = loss_value(&theta, &ctx, h, &validation)?;
    let diagnostics = StepDiagnostics {
        step: k,
        stages: cfg.sampling_stages,
        initial_loss,
        final_loss,
        skipped_stages: skipped,
        seconds: start.elapsed().as_secs_f64(),
    };
    observer.step(&diagnostics);
    Ok((theta, diagnostics))
}

/// Trained networks for `t_1, …, t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSteppedSolution {
    pub problem: Problem,
    pub steps: Vec<NetworkParams>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl TimeSteppedSolution {
    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.problem.solver.time_steps
    }

    pub fn missing_steps(&self) -> Vec<usize> {
        (self.steps.len() + 1..=self.problem.solver.time_steps).collect()
    }

    /// The solution at `t_k` as a loss input; `k = 0` is the payoff.
    pub fn previous(&self, k: usize) -> Result<Previous<'_>> {
        if k == 0 {
            return Ok(Previous::Payoff { strike: 1.0 });
        }
        let net = self.steps.get(k - 1).ok_or_else(|| Error::IncompleteSolution(vec![k]))?;
        Ok(Previous::Network {
            net,
            ctx: self.problem.context(k),
        })
    }

    /// Step index of time-to-maturity `tau`, which must lie on the grid.
    pub fn step_of(&self, tau: f64) -> Result<usize> {
        let h = self.problem.solver.h();
        let k = (tau / h).round();
        if !(k >= 0.0) || k > self.problem.solver.time_steps as f64 || (k * h - tau).abs() > 1e-9 * self.problem.solver.maturity {
            return Err(Error::Config(format!("time {tau} is not on the grid of step {h}")));
        }
        Ok(k as usize)
    }

    /// Moneyness-unit price at step `k` and state `x`.
    pub fn price(&self, k: usize, x: &[f64]) -> Result<f64> {
        match self.previous(k)? {
            Previous::Payoff { .. } => Ok(initial_condition_eval(x, &self.problem.context(0))),
            Previous::Network { net, ctx } => forward(net, &ctx, x),
        }
    }

    /// Prices at step `k` for every row of `points`.
    pub fn prices(&self, k: usize, points: ndarray::ArrayView2<f64>) -> Result<Vec<f64>> {
        if points.ncols() != self.problem.model.dim() {
            return Err(Error::Dimension {
                expected: self.problem.model.dim(),
                got: points.ncols(),
            });
        }
        match self.previous(k)? {
            Previous::Payoff { .. } => {
                let ctx = self.problem.context(0);
                Ok(points.rows().into_iter().map(|x| initial_condition_eval(&x.to_vec(), &ctx)).collect())
            }
            Previous::Network { net, ctx } => Ok(batch::values(net, &ctx, points)),
        }
    }
}

/// Trains all steps from scratch.
pub fn solve(problem: &Problem, observer: &mut dyn Observer) -> Result<TimeSteppedSolution> {
    resume(problem, Vec::new(), Vec::new(), observer, |_, _, _| Ok(()))
}

/// Continues training after the steps already in `steps`, calling
/// `on_step` with each newly trained step before moving on.
pub fn resume(
    problem: &Problem,
    steps: Vec<NetworkParams>,
    diagnostics: Vec<StepDiagnostics>,
    observer: &mut dyn Observer,
    mut on_step: impl FnMut(usize, &NetworkParams, &StepDiagnostics) -> Result<()>,
) -> Result<TimeSteppedSolution> {
    problem.validate()?;
    let dims = problem.dims()?;
    if steps.len() > problem.solver.time_steps || steps.len() != diagnostics.len() {
        return Err(Error::Config("resumed steps do not fit the time grid".into()));
    }
    if let Some(bad) = steps.iter().position(|s| s.dims != dims) {
        return Err(Error::Config(format!("step {} has network shape {:?}, expected {:?}", bad + 1, steps[bad].dims, dims)));
    }
    let mut sol = TimeSteppedSolution {
        problem: problem.clone(),
        steps,
        diagnostics,
    };
    for k in sol.steps.len() + 1..=problem.solver.time_steps {
        let init = match sol.steps.last() {
            Some(p) => p.clone(),
            None => problem.initial_params()?,
        };
        let (theta, diag) = train_step(problem, k, &sol.previous(k - 1)?, init, observer)?;
        on_step(k, &theta, &diag)?;
        sol.steps.push(theta);
        sol.diagnostics.push(diag);
    }
    Ok(sol)
}

/// Sizes the global worker pool from `TDGF_WORKERS` when set.
pub fn configure_workers() -> Result<usize> {
    if let Ok(v) = std::env::var("TDGF_WORKERS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("TDGF_WORKERS must be a positive integer, got {v:?}")))?;
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlackScholesSpec, HestonSpec};

    fn bs_problem(stages: usize, steps: usize) -> Problem {
        let mut cfg = SolverConfig::new(steps, 1.0);
        cfg.sampling_stages = stages;
        cfg.seed = 11;
        let mut p = Problem::new(ModelSpec::BlackScholes(BlackScholesSpec { r: 0.05, sigma: 0.25 }), cfg);
        p.network = NetworkConfig {
            layers: 2,
            width: 8,
            ..NetworkConfig::default()
        };
        p.sampling.samples_per_dim = 64;
        p
    }

    #[test]
    fn zero_stages_return_the_initialization() {
        let p = bs_problem(0, 3);
        let init = p.initial_params().unwrap();
        let (theta, diag) = train_step(&p, 1, &Previous::Payoff { strike: 1.0 }, init.clone(), &mut ()).unwrap();
        assert_eq!(theta, init);
        assert_eq!(diag.initial_loss, diag.final_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let p = bs_problem(20, 2);
        let a = solve(&p, &mut ()).unwrap();
        let b = solve(&p, &mut ()).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!(x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn resume_reproduces_remaining_steps() {
        let p = bs_problem(10, 3);
        let full = solve(&p, &mut ()).unwrap();
        let mut seen = Vec::new();
        let resumed = resume(&p, full.steps[..1].to_vec(), full.diagnostics[..1].to_vec(), &mut (), |k, _, _| {
            seen.push(k);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2, 3]);
        assert_eq!(resumed.steps, full.steps);
    }

    #[test]
    fn single_step_grid_starts_from_the_payoff() {
        let p = bs_problem(5, 1);
        let sol = solve(&p, &mut ()).unwrap();
        let direct = train_step(&p, 1, &Previous::Payoff { strike: 1.0 }, p.initial_params().unwrap(), &mut ()).unwrap();
        assert_eq!(sol.steps[0], direct.0);
    }

    #[test]
    fn energy_descends_on_the_first_step() {
        let p = bs_problem(300, 10);
        let (_, diag) = train_step(&p, 1, &Previous::Payoff { strike: 1.0 }, p.initial_params().unwrap(), &mut ()).unwrap();
        assert!(diag.final_loss <= diag.initial_loss, "{diag:?}");
    }

    #[test]
    fn warm_start_is_exact() {
        let p = bs_problem(0, 2);
        let sol = solve(&p, &mut ()).unwrap();
        assert_eq!(sol.steps[0], sol.steps[1]);
    }

    #[test]
    fn grid_lookup() {
        let sol = TimeSteppedSolution {
            problem: bs_problem(0, 4),
            steps: vec![],
            diagnostics: vec![],
        };
        assert_eq!(sol.step_of(0.5).unwrap(), 2);
        assert_eq!(sol.step_of(0.0).unwrap(), 0);
        assert!(sol.step_of(0.3).is_err());
        assert!(sol.step_of(1.5).is_err());
        assert_eq!(sol.missing_steps(), vec![1, 2, 3, 4]);
        assert!(matches!(sol.price(1, &[1.0]), Err(Error::IncompleteSolution(_))));
        assert_eq!(sol.price(0, &[1.4]).unwrap(), 1.4 - 1.0);
    }

    #[test]
    fn bad_config_is_a_config_error() {
        let mut p = bs_problem(1, 1);
        p.solver.time_steps = 0;
        assert_eq!(p.validate().unwrap_err().exit_code(), 2);
        let mut p = Problem::new(
            ModelSpec::Heston(HestonSpec { r: 0.0, lambda: 2.0, kappa: 0.01, eta: 0.1, rho: 0.0, v0: 0.03 }),
            SolverConfig::new(2, 1.0),
        );
        p.sampling.variance.clear();
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg: SolverConfig = serde_json::from_str(r#"{"time_steps": 100, "maturity": 1.0}"#).unwrap();
        assert_eq!(cfg, SolverConfig::new(100, 1.0));
        assert_eq!(cfg.sampling_stages, 2000);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"time_steps": 1, "maturity": 1.0, "lr": 1}"#).is_err());
    }
}
