//! The discrete energy `L^k` of one time step and its parameter gradient.
//!
//! For samples `x_s` with weight `μ = |Ω|/M`,
//!
//! `L = μ Σ_s [½(f − f_prev)² + h(½(∇fᵀA∇f + r f²) + (b·∇f_prev) f)]
//!      − h Σ_j w_j (n·A∇f_prev)(y_j) f(y_j)`,
//!
//! where the last sum runs over boundary points `y_j` with outward normal
//! `n` and is present only when boundary faces are supplied.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::Operator;
use crate::network::batch::{jet_backward, jet_forward};
use crate::network::{EvalContext, NetworkParams};
use crate::sampler::{FaceBatch, SampleBatch};

/// The frozen solution of the previous step.
#[derive(Debug, Clone, Copy)]
pub enum Previous<'a> {
    /// The call payoff `(x₀ − K)^+`, used before the first step.
    Payoff { strike: f64 },
    Network { net: &'a NetworkParams, ctx: EvalContext },
}

/// Stack columns per chunk; keeps every jet buffer small enough to be
/// recycled by the allocator instead of mapped afresh.
const CHUNK_BUDGET: usize = 12_288;

fn chunk_ranges(m: usize, width: usize, k: usize) -> Vec<Range<usize>> {
    let len = (CHUNK_BUDGET / (width * (k + 1))).max(16);
    (0..m).step_by(len).map(|a| a..(a + len).min(m)).collect()
}

impl Previous<'_> {
    /// Values and derivatives along `dir` (one direction per point).
    pub fn eval_along(&self, points: ArrayView2<f64>, dir: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Previous::Payoff { strike } => points
                .rows()
                .into_iter()
                .zip(dir.rows())
                .map(|(x, q)| {
                    if x[0] > strike {
                        (x[0] - strike, q[0])
                    } else {
                        (0.0, 0.0)
                    }
                })
                .unzip(),
            Previous::Network { net, ctx } => {
                let mut values = Vec::with_capacity(points.nrows());
                let mut slopes = Vec::with_capacity(points.nrows());
                for r in chunk_ranges(points.nrows(), net.dims.width, 1) {
                    let rows = s![r, ..];
                    let (out, _) = jet_forward(net, &ctx, points.slice(rows), &[dir.slice(rows)]);
                    values.extend(out.values);
                    slopes.extend(&out.tangents[0]);
                }
                (values, slopes)
            }
        }
    }
}

/// Everything in `L^k` that does not depend on the trained parameters.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub points: Array2<f64>,
    /// Factor directions `q_k(x_s)` with `A = Σ_k q_k q_kᵀ`, one `[M × d]`
    /// array per factor.
    pub dirs: Vec<Array2<f64>>,
    pub rate: Vec<f64>,
    pub prev_value: Vec<f64>,
    /// `b·∇f_prev` at each sample.
    pub prev_drift: Vec<f64>,
    /// `|Ω|/M`
    pub weight: f64,
    pub face_points: Array2<f64>,
    /// `w_j · (n·A∇f_prev)(y_j)` for each boundary point.
    pub face_coef: Vec<f64>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with `|Ω|` and the face weights multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weight *= c;
        out.face_coef.iter_mut().for_each(|w| *w *= c);
        out
    }
}

/// Evaluates coefficients and the previous solution on a batch.
pub fn prepare(
    op: &dyn Operator,
    tau: f64,
    batch: &SampleBatch,
    faces: &[FaceBatch],
    prev: &Previous,
) -> Result<PreparedBatch> {
    let (m, d) = batch.points.dim();
    if d != op.dim() {
        return Err(Error::Dimension {
            expected: op.dim(),
            got: d,
        });
    }
    if m == 0 {
        return Err(Error::Config("empty sample batch".into()));
    }
    let coeffs = batch
        .points
        .rows()
        .into_iter()
        .map(|x| op.coefficients(tau, x.as_slice().expect("row-major")))
        .collect::<Result<Vec<_>>>()?;
    let k = coeffs.iter().map(|c| c.factor.len()).max().unwrap_or(0);
    let mut dirs = vec![Array2::zeros((m, d)); k];
    let mut drift_dir = Array2::zeros((m, d));
    let mut rate = Vec::with_capacity(m);
    for (s, c) in coeffs.iter().enumerate() {
        for (dir, q) in dirs.iter_mut().zip(&c.factor) {
            dir.row_mut(s).assign(&ndarray::aview1(q));
        }
        drift_dir.row_mut(s).assign(&ndarray::aview1(&c.b));
        rate.push(c.rate);
    }
    let (prev_value, prev_drift) = prev.eval_along(batch.points.view(), drift_dir.view());

    let total: usize = faces.iter().map(|f| f.points.nrows()).sum();
    let mut face_points = Array2::zeros((total, d));
    let mut flux_dir = Array2::zeros((total, d));
    let mut face_weight = Vec::with_capacity(total);
    let mut row = 0;
    for face in faces {
        for y in face.points.rows() {
            let c = op.coefficients(tau, y.as_slice().expect("row-major"))?;
            face_points.row_mut(row).assign(&y);
            for j in 0..d {
                flux_dir[[row, j]] = face.normal * c.a_at(face.axis, j);
            }
            face_weight.push(face.weight);
            row += 1;
        }
    }
    let face_coef = if total == 0 {
        Vec::new()
    } else {
        let (_, flux) = prev.eval_along(face_points.view(), flux_dir.view());
        flux.iter().zip(&face_weight).map(|(f, w)| f * w).collect()
    };

    Ok(PreparedBatch {
        points: batch.points.clone(),
        dirs,
        rate,
        prev_value,
        prev_drift,
        weight: batch.volume / m as f64,
        face_points,
        face_coef,
    })
}

/// Energy density of one sample without the `|Ω|/M` weight:
/// `½(f − f_prev)² + h(½(Σ_k t_k² + r f²) + drift·f)`, where `t_k` are the
/// derivatives of `f` along the factor directions of `A`.
pub fn sample_energy(f: f64, f_prev: f64, tangents: &[f64], rate: f64, drift: f64, h: f64) -> f64 {
    let diff = f - f_prev;
    let grad_sq: f64 = tangents.iter().map(|t| t * t).sum();
    0.5 * diff * diff + h * (0.5 * (grad_sq + rate * f * f) + drift * f)
}

enum Work {
    Interior(Range<usize>),
    Faces(Range<usize>),
}

struct Partial {
    loss: f64,
    grad: Option<Vec<f64>>,
    bad_sample: Option<usize>,
}

fn interior_chunk(net: &NetworkParams, ctx: &EvalContext, h: f64, prep: &PreparedBatch, r: Range<usize>, want_grad: bool) -> Partial {
    let rows = s![r.clone(), ..];
    let views: Vec<_> = prep.dirs.iter().map(|d| d.slice(rows)).collect();
    let (out, cache) = jet_forward(net, ctx, prep.points.slice(rows), &views);
    let mu = prep.weight;
    let n = r.len();
    let mut loss = 0.0;
    let mut bad_sample = None;
    let mut value_adj = Vec::with_capacity(n);
    let mut tangent_adj = vec![Vec::with_capacity(n); prep.dirs.len()];
    let mut t = vec![0.0; prep.dirs.len()];
    for (i, s) in r.clone().enumerate() {
        let f = out.values[i];
        for (tk, src) in t.iter_mut().zip(&out.tangents) {
            *tk = src[i];
        }
        let (fp, rate, beta) = (prep.prev_value[s], prep.rate[s], prep.prev_drift[s]);
        let e = mu * sample_energy(f, fp, &t, rate, beta, h);
        if !e.is_finite() && bad_sample.is_none() {
            bad_sample = Some(s);
        }
        loss += e;
        if want_grad {
            value_adj.push(mu * ((f - fp) + h * (rate * f + beta)));
            for (adj, tk) in tangent_adj.iter_mut().zip(&t) {
                adj.push(mu * h * tk);
            }
        }
    }
    let grad = want_grad.then(|| {
        let mut g = vec![0.0; net.len()];
        jet_backward(net, &cache, &value_adj, &tangent_adj, &mut g);
        g
    });
    Partial { loss, grad, bad_sample }
}

fn face_chunk(net: &NetworkParams, ctx: &EvalContext, h: f64, prep: &PreparedBatch, r: Range<usize>, want_grad: bool) -> Partial {
    let (out, cache) = jet_forward(net, ctx, prep.face_points.slice(s![r.clone(), ..]), &[]);
    let coef = &prep.face_coef[r.clone()];
    let loss = -h * out.values.iter().zip(coef).map(|(f, c)| f * c).sum::<f64>();
    let bad_sample = (!loss.is_finite()).then_some(prep.len() + r.start);
    let grad = want_grad.then(|| {
        let adj: Vec<f64> = coef.iter().map(|c| -h * c).collect();
        let mut g = vec![0.0; net.len()];
        jet_backward(net, &cache, &adj, &[], &mut g);
        g
    });
    Partial { loss, grad, bad_sample }
}

fn evaluate(net: &NetworkParams, ctx: &EvalContext, h: f64, prep: &PreparedBatch, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let d = prep.points.ncols();
    if d != net.dims.inputs {
        return Err(Error::Dimension {
            expected: net.dims.inputs,
            got: d,
        });
    }
    let width = net.dims.width;
    let mut work: Vec<Work> = chunk_ranges(prep.len(), width, prep.dirs.len())
        .into_iter()
        .map(Work::Interior)
        .collect();
    if !prep.face_coef.is_empty() {
        work.extend(chunk_ranges(prep.face_coef.len(), width, 0).into_iter().map(Work::Faces));
    }
    let parts: Vec<Partial> = work
        .par_iter()
        .map(|w| match w {
            Work::Interior(r) => interior_chunk(net, ctx, h, prep, r.clone(), want_grad),
            Work::Faces(r) => face_chunk(net, ctx, h, prep, r.clone(), want_grad),
        })
        .collect();

    // Reduce in chunk order so the result does not depend on the worker count.
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; net.len()]);
    for p in parts {
        if let Some(s) = p.bad_sample {
            return Err(Error::NumericOverflow {
                sample: s,
                detail: format!("non-finite loss contribution, |theta| = {:.6e}", net.norm()),
            });
        }
        loss += p.loss;
        if let (Some(acc), Some(g)) = (grad.as_mut(), p.grad) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((loss, grad))
}

/// `L^k(θ)` on a prepared batch.
pub fn loss_value(net: &NetworkParams, ctx: &EvalContext, h: f64, prep: &PreparedBatch) -> Result<f64> {
    evaluate(net, ctx, h, prep, false).map(|(l, _)| l)
}

/// `L^k(θ)` and `∇_θ L^k`.
pub fn loss_and_grad(net: &NetworkParams, ctx: &EvalContext, h: f64, prep: &PreparedBatch) -> Result<(f64, Vec<f64>)> {
    evaluate(net, ctx, h, prep, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// The energy `L^k` exactly as written, without boundary terms.
pub fn step_loss(
    theta: &NetworkParams,
    ctx: &EvalContext,
    prev: &Previous,
    batch: &SampleBatch,
    op: &dyn Operator,
    h: f64,
    tau_k: f64,
) -> Result<f64> {
    let prep = prepare(op, tau_k, batch, &[], prev)?;
    loss_value(theta, ctx, h, &prep)
}
