use std::ops::{Add, Mul, Neg, Sub};

use super::tape::Var;

/// Arithmetic shared by plain `f64` evaluation and taped evaluation.
///
/// Network, residual and loss code is written once against this trait and
/// instantiated either with `f64` (values only) or with [`Var`] (values plus a
/// reverse sweep).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn square(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// A constant carried by the same context as `self`.
    fn lift(self, c: f64) -> Self;
    /// `candidates[chosen]`, with derivatives routed to that entry only.
    fn select(candidates: &[Self], chosen: usize) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn select(candidates: &[Self], chosen: usize) -> Self {
        candidates[chosen]
    }
}

impl Scalar for Var<'_> {
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
    fn powi(self, n: i32) -> Self {
        Var::powi(self, n)
    }
    fn lift(self, c: f64) -> Self {
        self.tape().constant(c)
    }
    fn select(candidates: &[Self], chosen: usize) -> Self {
        candidates[chosen].tape().select(candidates, chosen)
    }
}
