use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

/// Numeric type the network and loss can be written against once and then
/// evaluated as plain `f64`, forward-mode [`Dual`](super::Dual), or reverse-mode
/// [`Var`](super::Var) (and nestings of those).
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;

    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `1 / (1 + e^{-x})`
    fn sigmoid(self) -> Self;
    /// `ln(1 + e^x)`
    fn softplus(self) -> Self;
    /// `max(x, c)`; the derivative is 1 where `x > c`, else 0.
    fn max_const(self, c: f64) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn relu(self) -> Self {
        self.max_const(0.0)
    }

    /// `min(x, c)`, built from `max_const` so it shares its subgradient rule.
    fn min_const(self, c: f64) -> Self {
        -((-self).max_const(-c))
    }
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn max_const(self, c: f64) -> Self {
        if self > c {
            self
        } else {
            c
        }
    }
}
