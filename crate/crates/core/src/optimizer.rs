//! Adam over the concatenated trainable vector `[θ, λ]`.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimizerError {
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("dimension mismatch: state {state}, gradient {grad}, trainables {params}")]
    Dimension { state: usize, grad: usize, params: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            hyper,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// One bias-corrected Adam update with the shared learning rate.
    pub fn step(&mut self, grad: &[f64], x: &mut [f64]) -> Result<(), OptimizerError> {
        self.step_with_rates(grad, x, None)
    }

    /// As [`step`](Self::step), with an optional per-coordinate learning rate.
    pub fn step_with_rates(
        &mut self,
        grad: &[f64],
        x: &mut [f64],
        rates: Option<&[f64]>,
    ) -> Result<(), OptimizerError> {
        let dim = self.dim();
        if grad.len() != dim || x.len() != dim || rates.is_some_and(|r| r.len() != dim) {
            return Err(OptimizerError::Dimension {
                state: dim,
                grad: grad.len(),
                params: x.len(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimizerError::NonFiniteGradient { index });
        }
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..dim {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let rate = rates.map_or(lr, |r| r[i]);
            x[i] -= rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, grad: &[f64], trainables: &mut [f64]) -> Result<(), OptimizerError> {
    state.step(grad, trainables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_has_unit_normalised_magnitude() {
        let mut s = AdamState::new(3, AdamHyper::default());
        let mut x = vec![0.0, 1.0, -2.0];
        adam_step(&mut s, &[2.0; 3], &mut x).unwrap();
        for (after, before) in x.iter().zip([0.0, 1.0, -2.0]) {
            let step = before - after;
            assert!((step - 1e-3).abs() < 1e-3 * 1e-8 + 1e-15, "{step}");
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = AdamState::new(2, AdamHyper::default());
        let mut x = vec![0.5, -0.5];
        s.step(&[0.0, 0.0], &mut x).unwrap();
        assert_eq!(x, vec![0.5, -0.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn minimises_a_parabola() {
        let mut s = AdamState::new(1, AdamHyper { lr: 0.1, ..Default::default() });
        let mut x = vec![1.0];
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            s.step(&g, &mut x).unwrap();
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut s = AdamState::new(3, AdamHyper::default());
        let mut x = vec![0.0; 3];
        assert_eq!(
            s.step(&[0.0, f64::NAN, 1.0], &mut x),
            Err(OptimizerError::NonFiniteGradient { index: 1 })
        );
        assert_eq!(s.t, 0);
        assert!(s.step(&[0.0; 2], &mut x).is_err());
    }

    #[test]
    fn per_coordinate_rates() {
        let mut s = AdamState::new(2, AdamHyper::default());
        let mut x = vec![0.0, 0.0];
        s.step_with_rates(&[1.0, 1.0], &mut x, Some(&[1e-3, 1e-6])).unwrap();
        assert!((x[0] + 1e-3).abs() < 1e-10);
        assert!((x[1] + 1e-6).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn first_step_is_scale_equivariant(g in prop::collection::vec(-10.0f64..10.0, 1..8), c in 0.01f64..100.0) {
            let dim = g.len();
            let mut a = AdamState::new(dim, AdamHyper::default());
            let mut b = AdamState::new(dim, AdamHyper::default());
            let mut xa = vec![0.0; dim];
            let mut xb = vec![0.0; dim];
            a.step(&g, &mut xa).unwrap();
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            b.step(&scaled, &mut xb).unwrap();
            // equivariance holds up to ε, so only entries well above it count
            for i in 0..dim {
                let smallest = g[i].abs().min((g[i] * c).abs());
                if smallest > 1e-6 {
                    // |η g/(|g|+ε) − η sign g| ≤ η ε / |g|
                    let tol = 2.0 * 1e-3 * 1e-8 / smallest + 1e-15;
                    prop_assert!((xa[i] - xb[i]).abs() <= tol);
                    prop_assert!((xa[i] + 1e-3 * g[i].signum()).abs() <= tol);
                }
            }
        }
    }
}
