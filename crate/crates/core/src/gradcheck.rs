//! Finite-difference audit of the training gradient.
//!
//! The batched engine's `∇_θ L` is compared with central differences of the
//! same loss evaluated through the scalar path: one forward pass per point
//! and one dual-number sweep per input coordinate, with no shared code
//! beyond the model coefficients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{BlackScholesSpec, HestonSpec, LiftedHestonSpec, ModelSpec, Operator};
use crate::network::{forward, grad_wrt_inputs, initial_condition_eval, initial_condition_grad, Dims, EvalContext, NetworkParams};
use crate::sampler::{sample_batch, sample_faces, FaceBatch, SampleBatch, SamplingDomain};
use crate::solver::{loss_and_grad, prepare, Previous};

/// `L^k` through the scalar path.
#[allow(clippy::too_many_arguments)]
pub fn scalar_step_loss(
    net: &NetworkParams,
    ctx: &EvalContext,
    prev: &Previous,
    op: &dyn Operator,
    tau: f64,
    h: f64,
    batch: &SampleBatch,
    faces: &[FaceBatch],
) -> Result<f64> {
    let prev_at = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        match *prev {
            Previous::Payoff { strike } => {
                let c = EvalContext { strike, ..*ctx };
                Ok((initial_condition_eval(x, &c), initial_condition_grad(x, &c)))
            }
            Previous::Network { net, ctx } => Ok((forward(net, &ctx, x)?, grad_wrt_inputs(net, &ctx, x)?)),
        }
    };
    let weight = batch.volume / batch.len() as f64;
    let mut total = 0.0;
    for x in batch.points.rows() {
        let x = x.to_vec();
        let c = op.coefficients(tau, &x)?;
        let f = forward(net, ctx, &x)?;
        let g = grad_wrt_inputs(net, ctx, &x)?;
        let (fp, gp) = prev_at(&x)?;
        let drift: f64 = c.b.iter().zip(&gp).map(|(b, g)| b * g).sum();
        let energy = 0.5 * (f - fp).powi(2) + h * (0.5 * (c.quadratic_form(&g) + c.rate * f * f) + drift * f);
        total += weight * energy;
    }
    for face in faces {
        for y in face.points.rows() {
            let y = y.to_vec();
            let c = op.coefficients(tau, &y)?;
            let (_, gp) = prev_at(&y)?;
            let flux: f64 = (0..y.len()).map(|j| face.normal * c.a_at(face.axis, j) * gp[j]).sum();
            total -= h * face.weight * flux * forward(net, ctx, &y)?;
        }
    }
    Ok(total)
}

/// Deliberate corruption of the engine gradient, for checking that the
/// audit can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Scales the output-layer weight gradient by `1 + relative`.
    OutputWeights { relative: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Total cases, split evenly over the factor counts.
    pub cases: usize,
    /// Lifted factor counts `n`; the state has `n + 1` coordinates.
    pub factors: Vec<usize>,
    pub width: usize,
    pub layers: usize,
    pub step: f64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 1000,
            factors: vec![0, 1, 5],
            width: 50,
            layers: 3,
            step: 1e-6,
            tolerance: 1e-5,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionSummary {
    pub factors: usize,
    pub cases: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub by_dimension: Vec<DimensionSummary>,
    pub passed: bool,
}

/// Model with `n` lifted factors; `n = 0` is Black–Scholes and `n = 1` Heston.
fn model_for(n: usize) -> ModelSpec {
    match n {
        0 => ModelSpec::BlackScholes(BlackScholesSpec { r: 0.05, sigma: 0.25 }),
        1 => ModelSpec::Heston(HestonSpec {
            r: 0.02,
            lambda: 2.0,
            kappa: 0.04,
            eta: 0.3,
            rho: -0.7,
            v0: 0.03,
        }),
        _ => ModelSpec::LiftedHeston(LiftedHestonSpec {
            r: 0.0,
            lambda: 0.3,
            kappa: 0.02,
            eta: 0.3,
            rho: -0.7,
            v0: 0.02,
            maturity: 1.0,
            c: (0..n).map(|i| 0.8 / (1.0 + i as f64)).collect(),
            gamma: (0..n).map(|i| 0.5 * 4f64.powi(i as i32)).collect(),
            hurst: None,
        }),
    }
}

/// Glorot weights with random, not zero, biases and output bias.
fn random_net(dims: Dims, rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut net = NetworkParams::init(dims, rng.random());
    let mut biases = vec![dims.input_bias()];
    for layer in 0..dims.layers {
        for gate in crate::network::GATES {
            biases.push(dims.gate_b(layer, gate));
        }
    }
    for r in biases {
        for b in &mut net.data[r] {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net.data[dims.output_bias()] = rng.random_range(-3.0..1.0);
    net
}

fn unit_direction(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Worst `|FD − ∇L·v| / ‖∇L‖` over the gradient direction and a random
/// direction for one case.
fn check_case(n: usize, dims: Dims, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = model_for(n);
    let h = rng.random_range(0.005..0.1);
    let k = rng.random_range(1..=10);
    let tau = (k as f64 * h).min(1.0);
    let ctx = EvalContext::new(model.rate(), tau, 2.0)?;
    let prev_ctx = EvalContext::new(model.rate(), tau - h, 2.0)?;
    let net = random_net(dims, rng);
    let prev_net = random_net(dims, rng);
    let prev = if rng.random_bool(0.25) {
        Previous::Payoff { strike: 1.0 }
    } else {
        Previous::Network { net: &prev_net, ctx: prev_ctx }
    };

    let mut domain = SamplingDomain::for_model(&model, 1.0);
    domain.samples_per_dim = 1;
    domain.face_samples = 1;
    let drawn = sample_batch(&domain, &model, tau, rng)?;
    let point: Array2<f64> = drawn.points.slice(ndarray::s![0..1, ..]).to_owned();
    let batch = SampleBatch {
        points: point,
        volume: drawn.volume,
    };
    let faces = sample_faces(&domain, &model, tau, rng);

    let prep = prepare(&model, tau, &batch, &faces, &prev)?;
    let (_, mut grad) = loss_and_grad(&net, &ctx, h, &prep)?;
    if let Some(Fault::OutputWeights { relative }) = cfg.fault {
        for g in &mut grad[dims.output_weight()] {
            *g *= 1.0 + relative;
        }
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::NumericOverflow {
            sample: 0,
            detail: "zero gradient in gradient check".into(),
        });
    }
    let along_grad: Vec<f64> = grad.iter().map(|g| g / norm).collect();
    let mut worst: f64 = 0.0;
    for dir in [along_grad, unit_direction(grad.len(), rng)] {
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
        let shifted = |s: f64| -> Result<f64> {
            let mut p = net.clone();
            p.data.iter_mut().zip(&dir).for_each(|(t, v)| *t += s * v);
            scalar_step_loss(&p, &ctx, &prev, &model, tau, h, &batch, &faces)
        };
        let fd = (shifted(cfg.step)? - shifted(-cfg.step)?) / (2.0 * cfg.step);
        worst = worst.max((fd - analytic).abs() / norm);
    }
    Ok(worst)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.factors.is_empty() || cfg.cases == 0 || !(cfg.step > 0.0) {
        return Err(Error::Config("gradient check needs cases, factor counts and a positive step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_dimension = Vec::with_capacity(cfg.factors.len());
    for (i, &n) in cfg.factors.iter().enumerate() {
        let cases = cfg.cases / cfg.factors.len() + usize::from(i < cfg.cases % cfg.factors.len());
        let dims = Dims::new(n + 1, cfg.width, cfg.layers)?;
        let mut max_rel_error: f64 = 0.0;
        for _ in 0..cases {
            max_rel_error = max_rel_error.max(check_case(n, dims, cfg, &mut rng)?);
        }
        by_dimension.push(DimensionSummary {
            factors: n,
            cases,
            max_rel_error,
        });
    }
    let max_rel_error = by_dimension.iter().map(|d| d.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        cases: cfg.cases,
        max_rel_error,
        tolerance: cfg.tolerance,
        by_dimension,
        passed: max_rel_error <= cfg.tolerance,
    })
}
