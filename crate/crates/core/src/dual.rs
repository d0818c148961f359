//! Forward-mode automatic differentiation.
//!
//! Dynamics are written once, generic over [`Real`], and evaluated either on
//! plain `f64` or on [`Dual`] numbers. A dual evaluation seeded with a unit
//! tangent on one input yields the corresponding Jacobian column alongside the
//! exact primal value: the `re` part of every [`Dual`] operation performs the
//! same floating-point operations as the `f64` path, so the primal results are
//! bit-identical.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar type the dynamics are generic over.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(value: f64) -> Self;

    /// Primal value.
    fn value(self) -> f64;

    fn sin(self) -> Self;

    fn cos(self) -> Self;

    /// Clamp to `[lo, hi]`; the derivative is zero where the clamp is active.
    fn clamp_value(self, lo: f64, hi: f64) -> Self;

    /// Sign of the primal value as a constant (`0` at `0`).
    fn sign_constant(self) -> Self {
        let v = self.value();
        Self::from_f64(if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        })
    }
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(value: f64) -> Self {
        value
    }

    #[inline(always)]
    fn value(self) -> f64 {
        self
    }

    #[inline(always)]
    fn sin(self) -> Self {
        f64::sin(self)
    }

    #[inline(always)]
    fn cos(self) -> Self {
        f64::cos(self)
    }

    #[inline(always)]
    fn clamp_value(self, lo: f64, hi: f64) -> Self {
        if self > hi {
            hi
        } else if self < lo {
            lo
        } else {
            self
        }
    }
}

/// A dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    /// Independent variable with unit tangent.
    pub const fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline(always)]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl AddAssign for Dual {
    #[inline(always)]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline(always)]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline(always)]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline(always)]
    fn div(self, rhs: Dual) -> Dual {
        let re = self.re / rhs.re;
        Dual::new(re, (self.eps - re * rhs.eps) / rhs.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline(always)]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Real for Dual {
    #[inline(always)]
    fn from_f64(value: f64) -> Self {
        Dual::constant(value)
    }

    #[inline(always)]
    fn value(self) -> f64 {
        self.re
    }

    #[inline(always)]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }

    #[inline(always)]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.eps * self.re.sin())
    }

    #[inline(always)]
    fn clamp_value(self, lo: f64, hi: f64) -> Self {
        if self.re > hi {
            Dual::constant(hi)
        } else if self.re < lo {
            Dual::constant(lo)
        } else {
            self
        }
    }
}

impl fmt::Display for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}ε", self.re, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<T: Real>(x: T) -> T {
        x * x * x - T::from_f64(2.0) * x + T::from_f64(1.0)
    }

    #[test]
    fn derivative_of_polynomial() {
        let d = poly(Dual::variable(1.5));
        assert_eq!(d.re, poly(1.5));
        assert!((d.eps - (3.0 * 1.5 * 1.5 - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn quotient_and_trig_rules() {
        let x = Dual::variable(0.7);
        let y = x.sin() / x.cos();
        let sec2 = 1.0 / (0.7f64.cos() * 0.7f64.cos());
        assert!((y.eps - sec2).abs() < 1e-14);
    }

    #[test]
    fn clamp_kills_tangent_when_active() {
        assert_eq!(
            Dual::variable(5.0).clamp_value(-1.0, 1.0),
            Dual::constant(1.0)
        );
        assert_eq!(
            Dual::variable(0.5).clamp_value(-1.0, 1.0),
            Dual::variable(0.5)
        );
    }
}
