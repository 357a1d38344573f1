use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            // with 1e-8 the softplus output saturates during the first step, the
            // gradients drop below ε and every later time step stays frozen
            epsilon: 1e-6,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.alpha.is_finite();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid adam hyperparameters {self:?}")))
        }
    }
}

/// First and second moment estimates and the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step in place. A nonzero weight decay is added to
/// the gradient as an L2 term.
pub fn adam_update(theta: &mut [f64], grad: &[f64], state: &mut AdamState, hyper: &AdamConfig) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i] + hyper.weight_decay * theta[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= hyper.alpha * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}
