//! Forward-mode automatic differentiation with dual numbers carrying a
//! gradient with respect to a declared seed set of primitives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value plus partials with respect to the seeded primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    /// Constant: zero gradient.
    pub fn constant(value: f64, n: usize) -> Self {
        Self {
            value,
            grad: vec![0.0; n],
        }
    }

    /// Seed variable: unit partial in slot `index`.
    pub fn variable(value: f64, n: usize, index: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[index] = 1.0;
        Self { value, grad }
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        Self {
            value: e,
            grad: self.grad.iter().map(|g| g * e).collect(),
        }
    }

    pub fn ln(&self) -> Self {
        Self {
            value: self.value.ln(),
            grad: self.grad.iter().map(|g| g / self.value).collect(),
        }
    }

    /// `max(self, c)` with the derivative at the kink taken as 0: the
    /// gradient passes through only where `value > c`.
    pub fn max_const(&self, c: f64) -> Self {
        if self.value > c {
            self.clone()
        } else {
            Self::constant(c, self.grad.len())
        }
    }
}

impl Add for &Dual {
    type Output = Dual;
    fn add(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value + rhs.value,
            grad: self
                .grad
                .iter()
                .zip(&rhs.grad)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Dual {
    type Output = Dual;
    fn sub(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value - rhs.value,
            grad: self
                .grad
                .iter()
                .zip(&rhs.grad)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Dual {
    type Output = Dual;
    // Product rule mixes + into Mul by nature.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: &Dual) -> Dual {
        Dual {
            value: self.value * rhs.value,
            grad: self
                .grad
                .iter()
                .zip(&rhs.grad)
                .map(|(a, b)| a * rhs.value + self.value * b)
                .collect(),
        }
    }
}

impl Div for &Dual {
    type Output = Dual;
    fn div(self, rhs: &Dual) -> Dual {
        let inv = 1.0 / rhs.value;
        Dual {
            value: self.value * inv,
            grad: self
                .grad
                .iter()
                .zip(&rhs.grad)
                .map(|(a, b)| (a - self.value * inv * b) * inv)
                .collect(),
        }
    }
}

impl Neg for &Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            value: -self.value,
            grad: self.grad.iter().map(|g| -g).collect(),
        }
    }
}

impl Mul<f64> for &Dual {
    type Output = Dual;
    fn mul(self, rhs: f64) -> Dual {
        Dual {
            value: self.value * rhs,
            grad: self.grad.iter().map(|g| g * rhs).collect(),
        }
    }
}

impl Add<f64> for &Dual {
    type Output = Dual;
    fn add(self, rhs: f64) -> Dual {
        Dual {
            value: self.value + rhs,
            grad: self.grad.clone(),
        }
    }
}

impl Sub<f64> for &Dual {
    type Output = Dual;
    fn sub(self, rhs: f64) -> Dual {
        Dual {
            value: self.value - rhs,
            grad: self.grad.clone(),
        }
    }
}
