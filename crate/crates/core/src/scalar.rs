//! Scalar abstraction shared by primitive evaluation and value expressions.
//!
//! Primitives are written once against [`Scalar`] and evaluated at plain
//! floats (`f32`/`f64`) for execution and at [`Dual`] numbers for forward-mode
//! derivatives. Domain checks always look at the real part, so a dual number
//! sits in a primitive's domain exactly when its real part does.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive, One, ToPrimitive, Zero};

pub trait Scalar:
    Copy
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    fn from_f64(value: f64) -> Self;

    /// Real part as an `f64`.
    fn re(&self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
}

impl<T> Scalar for T
where
    T: Float + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static,
{
    fn from_f64(value: f64) -> Self {
        T::from_f64(value).expect("f64 is representable in every float type")
    }

    fn re(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn exp(self) -> Self {
        Float::exp(self)
    }

    fn ln(self) -> Self {
        Float::ln(self)
    }

    fn sqrt(self) -> Self {
        Float::sqrt(self)
    }

    fn abs(self) -> Self {
        Float::abs(self)
    }
}

/// Dual number `re + eps·ε` with `ε² = 0`.
///
/// Ordering and equality only look at the real part.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    /// Seeds `re` as the variable being differentiated.
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }

    fn chain(self, value: T, derivative: T) -> Self {
        Dual {
            re: value,
            eps: self.eps * derivative,
        }
    }
}

impl<T: Scalar> PartialEq for Dual<T> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<T: Scalar> PartialOrd for Dual<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        Dual::new(re, (self.eps - re * rhs.eps) / rhs.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::constant(T::zero())
    }

    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Scalar> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(value: f64) -> Self {
        Dual::constant(T::from_f64(value))
    }

    fn re(&self) -> f64 {
        self.re.re()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }

    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, T::one() / (T::from_f64(2.0) * r))
    }

    fn abs(self) -> Self {
        if self.re < T::zero() {
            -self
        } else {
            self
        }
    }
}

/// Derivative of a scalar function of one variable at `x`.
pub fn derivative<T, F>(x: T, f: F) -> T
where
    T: Scalar,
    F: FnOnce(Dual<T>) -> Dual<T>,
{
    f(Dual::variable(x)).eps
}
