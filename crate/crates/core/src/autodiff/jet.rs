//! Second-order forward jets.
//!
//! A [`Jet2`] carries a value together with the first and the pure second
//! derivative along each tracked input axis. When `S` is a taped [`Var`], every
//! channel is itself a tape node, so a single reverse sweep differentiates
//! through the jet arithmetic.
//!
//! [`Var`]: super::Var

use super::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Jet2<S> {
    pub value: S,
    pub d1: Vec<S>,
    pub d2: Vec<S>,
}

impl<S: Scalar> Jet2<S> {
    /// A jet with zero derivatives on `axes` axes.
    pub fn constant(value: S, axes: usize) -> Self {
        let zero = value.lift(0.0);
        Self {
            value,
            d1: vec![zero; axes],
            d2: vec![zero; axes],
        }
    }

    /// The identity jet of coordinate `axis`: d1 is the unit vector, d2 is 0.
    pub fn coordinate(value: S, axis: usize, axes: usize) -> Self {
        let mut jet = Self::constant(value, axes);
        jet.d1[axis] = value.lift(1.0);
        jet
    }

    pub fn axes(&self) -> usize {
        self.d1.len()
    }

    fn check_axes(&self, other: &Self) {
        assert_eq!(
            self.axes(),
            other.axes(),
            "jet axis-count mismatch: {} vs {}",
            self.axes(),
            other.axes()
        );
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_axes(other);
        Self {
            value: self.value + other.value,
            d1: zip_map(&self.d1, &other.d1, |a, b| a + b),
            d2: zip_map(&self.d2, &other.d2, |a, b| a + b),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.check_axes(other);
        Self {
            value: self.value - other.value,
            d1: zip_map(&self.d1, &other.d1, |a, b| a - b),
            d2: zip_map(&self.d2, &other.d2, |a, b| a - b),
        }
    }

    /// Product rule up to second order: (fg)'' = f''g + 2f'g' + fg''.
    pub fn mul(&self, other: &Self) -> Self {
        self.check_axes(other);
        let (f, g) = (self.value, other.value);
        let d1 = zip_map(&self.d1, &other.d1, |df, dg| df * g + f * dg);
        let d2 = (0..self.axes())
            .map(|a| {
                self.d2[a] * g + (self.d1[a] * other.d1[a]) * 2.0 + f * other.d2[a]
            })
            .collect();
        Self {
            value: f * g,
            d1,
            d2,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            value: self.value * c,
            d1: self.d1.iter().map(|&d| d * c).collect(),
            d2: self.d2.iter().map(|&d| d * c).collect(),
        }
    }

    /// Chain rule through tanh, with tanh'' = -2 tanh (1 - tanh^2).
    pub fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let slope = (t.square() - 1.0) * -1.0;
        let curvature = (t * slope) * -2.0;
        let d1 = self.d1.iter().map(|&d| slope * d).collect();
        let d2 = (0..self.axes())
            .map(|a| slope * self.d2[a] + curvature * self.d1[a].square())
            .collect();
        Self { value: t, d1, d2 }
    }

    /// Sum of the pure second derivatives (the Laplacian).
    pub fn laplacian(&self) -> S {
        let mut acc = self.d2[0];
        for &d in &self.d2[1..] {
            acc = acc + d;
        }
        acc
    }

    pub fn map_values(&self) -> Jet2<f64> {
        Jet2 {
            value: self.value.value(),
            d1: self.d1.iter().map(|d| d.value()).collect(),
            d2: self.d2.iter().map(|d| d.value()).collect(),
        }
    }
}

fn zip_map<S: Copy>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
