use std::ops::{Add, Mul, Neg, Sub};

use super::Scalar;

/// Forward-mode dual number `value + tangent·ε`, generic over the scalar
/// carrying both parts. `Dual<Var>` records the tangent arithmetic on a tape,
/// which is how input gradients become differentiable in the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T = f64> {
    pub value: T,
    pub tangent: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(value: T, tangent: T) -> Self {
        Self { value, tangent }
    }

    /// Independent variable seeded with unit tangent.
    pub fn variable(value: T) -> Self {
        Self {
            value,
            tangent: T::constant(1.0),
        }
    }

    pub fn constant_of(value: T) -> Self {
        Self {
            value,
            tangent: T::zero(),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.value * rhs.value,
            self.tangent * rhs.value + self.value * rhs.tangent,
        )
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.tangent)
    }
}

impl<T: Scalar> Add<f64> for Dual<T> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.value + rhs, self.tangent)
    }
}

impl<T: Scalar> Mul<f64> for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.value * rhs, self.tangent * rhs)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(c: f64) -> Self {
        Self::new(T::constant(c), T::zero())
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn tanh(self) -> Self {
        let y = self.value.tanh();
        Self::new(y, self.tangent * (-(y * y) + 1.0))
    }

    fn exp(self) -> Self {
        let y = self.value.exp();
        Self::new(y, self.tangent * y)
    }

    fn ln(self) -> Self {
        // 1/x as exp(-ln x) keeps the trait free of division.
        let l = self.value.ln();
        Self::new(l, self.tangent * (-l).exp())
    }

    fn sigmoid(self) -> Self {
        let s = self.value.sigmoid();
        Self::new(s, self.tangent * (s * (-s + 1.0)))
    }

    fn softplus(self) -> Self {
        Self::new(self.value.softplus(), self.tangent * self.value.sigmoid())
    }

    fn max_const(self, c: f64) -> Self {
        if self.value.value() > c {
            self
        } else {
            Self::new(T::constant(c), T::zero())
        }
    }
}
