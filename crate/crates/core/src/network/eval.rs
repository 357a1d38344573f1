use serde::{Deserialize, Serialize};

use super::params::{Dims, Gate, NetworkParams};
use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};

/// Per-step evaluation context of the output transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalContext {
    /// Strike in moneyness units; 1 unless a caller rescales.
    pub strike: f64,
    pub rate: f64,
    /// Time to maturity of the step the network represents.
    pub tau: f64,
    /// Moneyness beyond which the price is extended linearly.
    pub x_p: f64,
}

impl EvalContext {
    pub fn new(rate: f64, tau: f64, x_p: f64) -> Result<Self> {
        let ctx = Self {
            strike: 1.0,
            rate,
            tau,
            x_p,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_p > 0.0) || !(self.tau >= 0.0) || !self.strike.is_finite() {
            return Err(Error::Config(format!(
                "invalid eval context: x_p={} tau={} strike={}",
                self.x_p, self.tau, self.strike
            )));
        }
        Ok(())
    }

    /// Discounted strike `K e^{-r tau}` of the lower no-arbitrage bound.
    pub fn discounted_strike(&self) -> f64 {
        self.strike * (-self.rate * self.tau).exp()
    }
}

/// Evaluates the gated network on one state with scalar type `T`.
///
/// `param(i)` yields the `i`-th flat parameter lifted into `T`, so the same
/// code serves plain evaluation, forward-mode input tangents and tape
/// recording over parameters.
pub fn forward_with<T: Scalar>(
    dims: &Dims,
    param: impl Fn(usize) -> T,
    ctx: &EvalContext,
    x: &[T],
) -> T {
    let (d, w) = (dims.inputs, dims.width);
    debug_assert_eq!(x.len(), d);

    let x0 = x[0];
    let clamped = x0.min_const(ctx.x_p);
    let extension = (x0 + (-ctx.x_p)).relu();
    let mut input = x.to_vec();
    input[0] = clamped;

    let affine_u = |range_u: std::ops::Range<usize>, range_b: std::ops::Range<usize>, i: usize| {
        let mut acc = param(range_b.start + i);
        let row = range_u.start + i * d;
        for (j, xj) in input.iter().enumerate() {
            acc = acc + param(row + j) * *xj;
        }
        acc
    };

    let mut state: Vec<T> = (0..w)
        .map(|i| affine_u(dims.input_weight(), dims.input_bias(), i).tanh())
        .collect();

    let matvec = |range_w: std::ops::Range<usize>, v: &[T], i: usize| {
        let row = range_w.start + i * w;
        let mut acc = T::zero();
        for (j, vj) in v.iter().enumerate() {
            acc = acc + param(row + j) * *vj;
        }
        acc
    };

    for l in 0..dims.layers {
        let gate = |g: Gate, v: &[T], i: usize| {
            (affine_u(dims.gate_u(l, g), dims.gate_b(l, g), i) + matvec(dims.gate_w(l, g), v, i))
                .tanh()
        };
        let z: Vec<T> = (0..w).map(|i| gate(Gate::Z, &state, i)).collect();
        let g: Vec<T> = (0..w).map(|i| gate(Gate::G, &state, i)).collect();
        let r: Vec<T> = (0..w).map(|i| gate(Gate::R, &state, i)).collect();
        let sr: Vec<T> = state.iter().zip(&r).map(|(s, r)| *s * *r).collect();
        let h: Vec<T> = (0..w).map(|i| gate(Gate::H, &sr, i)).collect();
        state = (0..w)
            .map(|i| (-g[i] + 1.0) * h[i] + z[i] * state[i])
            .collect();
    }

    let out_w = dims.output_weight();
    let mut o = param(dims.output_bias());
    for (i, s) in state.iter().enumerate() {
        o = o + param(out_w.start + i) * *s;
    }

    (clamped + (-ctx.discounted_strike())).relu() + o.softplus() + extension
}

/// Network price at one state.
pub fn forward(net: &NetworkParams, ctx: &EvalContext, x: &[f64]) -> Result<f64> {
    check_input(net, x)?;
    Ok(forward_with(&net.dims, |i| net.data[i], ctx, x))
}

/// Exact input gradient `∂f/∂x_i`, one forward tangent sweep per coordinate.
pub fn grad_wrt_inputs(net: &NetworkParams, ctx: &EvalContext, x: &[f64]) -> Result<Vec<f64>> {
    check_input(net, x)?;
    let d = x.len();
    let mut grad = Vec::with_capacity(d);
    for j in 0..d {
        let xs: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
            .collect();
        let y = forward_with(&net.dims, |i| Dual::constant(net.data[i]), ctx, &xs);
        if !y.value.is_finite() || !y.tangent.is_finite() {
            return Err(Error::NumericOverflow {
                sample: 0,
                detail: format!("non-finite network output at x={x:?}"),
            });
        }
        grad.push(y.tangent);
    }
    Ok(grad)
}

fn check_input(net: &NetworkParams, x: &[f64]) -> Result<()> {
    if x.len() != net.dims.inputs {
        return Err(Error::Dimension {
            expected: net.dims.inputs,
            got: x.len(),
        });
    }
    if net.data.len() != net.dims.param_count() {
        return Err(Error::Dimension {
            expected: net.dims.param_count(),
            got: net.data.len(),
        });
    }
    Ok(())
}

/// The call payoff `(x₀ − K)^+` that seeds the time stepping.
pub fn initial_condition_eval(x: &[f64], ctx: &EvalContext) -> f64 {
    (x[0] - ctx.strike).max(0.0)
}

/// Gradient of the payoff: `(1_{x₀>K}, 0, …, 0)`.
pub fn initial_condition_grad(x: &[f64], ctx: &EvalContext) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    g[0] = if x[0] > ctx.strike { 1.0 } else { 0.0 };
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(rate: f64, tau: f64) -> EvalContext {
        EvalContext::new(rate, tau, 2.0).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_payoff_plus_log2() {
        let dims = Dims::new(1, 6, 2).unwrap();
        let mut net = NetworkParams::init(dims, 3);
        for i in dims.output_weight() {
            net.data[i] = 0.0;
        }
        net.data[dims.output_bias()] = 0.0;
        let y = forward(&net, &ctx(0.0, 1.0), &[1.5]).unwrap();
        assert!((y - (0.5 + std::f64::consts::LN_2)).abs() < 1e-15);
        assert!((y - 1.193147).abs() < 1e-6);
    }

    #[test]
    fn payoff_term_vanishes_at_zero_moneyness() {
        let dims = Dims::new(2, 5, 1).unwrap();
        let net = NetworkParams::init(dims, 11);
        let y = forward(&net, &ctx(0.05, 0.0), &[0.0, 0.03]).unwrap();
        assert!(y > 0.0);
        let o = forward_with(&dims, |i| net.data[i], &ctx(0.05, 0.0), &[0.0, 0.03]);
        assert_eq!(y, o);
    }

    #[test]
    fn linear_extension_beyond_x_p() {
        let dims = Dims::new(1, 7, 3).unwrap();
        let net = NetworkParams::init(dims, 5);
        let c = ctx(0.05, 0.4);
        let at = forward(&net, &c, &[2.0]).unwrap();
        let beyond = forward(&net, &c, &[2.5]).unwrap();
        assert!((beyond - at - 0.5).abs() < 1e-14);
    }

    #[test]
    fn softplus_network_slope_at_origin() {
        // Saturated Z and G gates pass X⁰ = tanh(x) straight through, so the
        // network is softplus(tanh(x)) and its slope at 0 is exactly 1/2.
        let dims = Dims::new(1, 1, 1).unwrap();
        let mut net = NetworkParams::zeros(dims);
        net.data[dims.input_weight().start] = 1.0;
        net.data[dims.gate_b(0, Gate::Z).start] = 50.0;
        net.data[dims.gate_b(0, Gate::G).start] = 50.0;
        net.data[dims.output_weight().start] = 1.0;
        let c = EvalContext::new(0.0, 0.0, 2.0).unwrap();
        let g = grad_wrt_inputs(&net, &c, &[0.0]).unwrap();
        assert_eq!(g[0], 0.5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dims = Dims::new(2, 3, 1).unwrap();
        let net = NetworkParams::init(dims, 1);
        assert!(matches!(
            forward(&net, &ctx(0.0, 1.0), &[1.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn payoff_and_its_gradient() {
        let c = ctx(0.0, 0.0);
        assert!((initial_condition_eval(&[1.4], &c) - 0.4).abs() < 1e-15);
        assert_eq!(initial_condition_eval(&[0.6], &c), 0.0);
        assert_eq!(initial_condition_grad(&[1.4, 0.02], &c), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn bound_extension_and_continuity(
            seed in 0u64..10_000,
            d in 1usize..4,
            x in 0.0f64..3.0,
            beyond in 1e-6f64..20.0,
            rate in 0.0f64..0.1,
            tau in 0.0f64..1.0,
        ) {
            let net = NetworkParams::init(Dims::new(d, 6, 2).unwrap(), seed);
            let c = ctx(rate, tau);
            let mut p = vec![0.02; d];
            p[0] = x;
            let f = forward(&net, &c, &p).unwrap();
            prop_assert!(f > (x - c.discounted_strike()).max(0.0));

            p[0] = c.x_p;
            let at = forward(&net, &c, &p).unwrap();
            p[0] = c.x_p + beyond;
            let far = forward(&net, &c, &p).unwrap();
            prop_assert!((far - at - beyond).abs() <= 4.0 * f64::EPSILON * far);

            p[0] = c.x_p * (1.0 - 1e-12);
            let below = forward(&net, &c, &p).unwrap();
            prop_assert!((below - at).abs() < 1e-9);
        }
    }
}
