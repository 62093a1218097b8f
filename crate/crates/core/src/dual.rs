//! Forward-mode dual numbers carrying a derivative with respect to the scalar
//! network input `t`.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dual {
    pub primal: f64,
    pub tangent: f64,
}

impl Dual {
    pub const fn new(primal: f64, tangent: f64) -> Self {
        Self { primal, tangent }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// The independent variable: unit tangent.
    pub const fn variable(value: f64) -> Self {
        Self::new(value, 1.0)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.primal * k, self.tangent * k)
    }

    pub fn tanh(self) -> Self {
        let y = libm::tanh(self.primal);
        Self::new(y, (1.0 - y * y) * self.tangent)
    }

    pub fn sin(self) -> Self {
        Self::new(
            libm::sin(self.primal),
            libm::cos(self.primal) * self.tangent,
        )
    }

    pub fn exp(self) -> Self {
        let e = libm::exp(self.primal);
        Self::new(e, e * self.tangent)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.primal * rhs.primal,
            self.primal * rhs.tangent + self.tangent * rhs.primal,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.primal, -self.tangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_variable_tangents() {
        assert_eq!(Dual::constant(3.0).tangent, 0.0);
        assert_eq!(Dual::variable(3.0).tangent, 1.0);
    }

    #[test]
    fn product_rule() {
        let t = Dual::variable(2.0);
        // d/dt t^3 = 3 t^2
        let y = t * t * t;
        assert_eq!(y.primal, 8.0);
        assert_eq!(y.tangent, 12.0);
    }

    #[test]
    fn chain_rule_matches_finite_difference() {
        let f = |t: f64| libm::tanh(libm::sin(3.0 * t) + 0.5);
        let t = 0.37;
        let d = (Dual::variable(t).scale(3.0).sin() + Dual::constant(0.5)).tanh();
        let h = 1e-6;
        let fd = (f(t + h) - f(t - h)) / (2.0 * h);
        assert!((d.tangent - fd).abs() < 1e-8);
        assert_eq!(d.primal, f(t));
    }
}
