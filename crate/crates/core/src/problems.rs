//! The three benchmark boundary value problems.
//!
//! | name                     | equation                                   | boundary            |
//! |--------------------------|--------------------------------------------|---------------------|
//! | `ex1-bratu-quartic`      | u'' = -λ (1 + u⁴) on (0, 1)                | u'(0) = u(1) = 0    |
//! | `ex2-quartic-quadratic`  | u'' = u⁴ - λ u² on (0, 1)                  | u'(0) = u(1) = 0    |
//! | `gray-scott-steady`      | D_A ΔA + S A² - (μ+ρ) A = 0,               | zero flux on ∂[0,1]²|
//! |                          | D_S ΔS - S A² + ρ (1 - S) = 0              |                     |
//!
//! Residuals are written against [`Scalar`] so the same code runs on plain
//! values and on the tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Scalar};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("point {0:?} is not on the boundary")]
    NotOnBoundary(Vec<f64>),
    #[error("expected {expected} parameters, got {got}")]
    LambdaDim { expected: usize, got: usize },
}

const BOUNDARY_TOL: f64 = 1e-12;

/// Lower clamp applied to the Gray-Scott diffusion coefficients.
pub const MIN_DIFFUSION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "ex1-bratu-quartic")]
    Ex1BratuQuartic,
    #[serde(rename = "ex2-quartic-quadratic")]
    Ex2QuarticQuadratic,
    #[serde(rename = "gray-scott-steady")]
    GrayScottSteady,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [
        ProblemKind::Ex1BratuQuartic,
        ProblemKind::Ex2QuarticQuadratic,
        ProblemKind::GrayScottSteady,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Ex1BratuQuartic => "ex1-bratu-quartic",
            ProblemKind::Ex2QuarticQuadratic => "ex2-quartic-quadratic",
            ProblemKind::GrayScottSteady => "gray-scott-steady",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ProblemError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| ProblemError::UnknownProblem(name.to_string()))
    }

    pub fn problem(self) -> DeProblem {
        DeProblem { kind: self }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    DirichletZero,
    NeumannZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryCondition {
    pub kind: ConditionKind,
    pub component: usize,
    /// Axis of the outward normal (Neumann only).
    pub axis: usize,
}

/// A differential-equation problem: domain, residual operator, boundary rows
/// and parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeProblem {
    kind: ProblemKind,
}

impl DeProblem {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ProblemKind::GrayScottSteady => 2,
            _ => 1,
        }
    }

    pub fn components(&self) -> usize {
        match self.kind {
            ProblemKind::GrayScottSteady => 2,
            _ => 1,
        }
    }

    pub fn lambda_dim(&self) -> usize {
        match self.kind {
            ProblemKind::GrayScottSteady => 4,
            _ => 1,
        }
    }

    pub fn lambda_labels(&self) -> &'static [&'static str] {
        match self.kind {
            ProblemKind::GrayScottSteady => &["D_A", "D_S", "rho", "mu"],
            _ => &["lambda"],
        }
    }

    pub fn component_labels(&self) -> &'static [&'static str] {
        match self.kind {
            ProblemKind::GrayScottSteady => &["A", "S"],
            _ => &["u"],
        }
    }

    /// Parameter values used to generate ground truth.
    pub fn reference_lambda(&self) -> Vec<f64> {
        match self.kind {
            ProblemKind::Ex1BratuQuartic => vec![1.2],
            ProblemKind::Ex2QuarticQuadratic => vec![18.0],
            ProblemKind::GrayScottSteady => vec![2.5e-4, 5e-4, 0.04, 0.065],
        }
    }

    /// Starting guess for the inverse problem.
    pub fn default_lambda_init(&self) -> Vec<f64> {
        match self.kind {
            ProblemKind::Ex1BratuQuartic => vec![1.0],
            ProblemKind::Ex2QuarticQuadratic => vec![10.0],
            ProblemKind::GrayScottSteady => vec![1e-5, 2e-5, 1e-3, 1e-3],
        }
    }

    /// Axis-aligned box; every problem lives on the unit interval or square.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.dim()]
    }

    pub fn check_lambda<S>(&self, lambda: &[S]) -> Result<(), ProblemError> {
        if lambda.len() != self.lambda_dim() {
            return Err(ProblemError::LambdaDim {
                expected: self.lambda_dim(),
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// Residuals of all `C` equations for one output group.
    ///
    /// Panics if `u` or `lambda` do not match the problem's layout.
    pub fn residual<S: Scalar>(&self, u: &[Jet2<S>], x: &[f64], lambda: &[S]) -> Vec<S> {
        assert_eq!(u.len(), self.components(), "component count");
        assert_eq!(lambda.len(), self.lambda_dim(), "parameter count");
        match self.kind {
            ProblemKind::Ex1BratuQuartic => vec![residual_ex1(&u[0], x[0], lambda)],
            ProblemKind::Ex2QuarticQuadratic => vec![residual_ex2(&u[0], x[0], lambda)],
            ProblemKind::GrayScottSteady => {
                let (ra, rs) = residual_gs(&u[0], &u[1], [x[0], x[1]], lambda);
                vec![ra, rs]
            }
        }
    }

    /// Boundary conditions active at `x`, or `None` in the interior.
    pub fn conditions_at(&self, x: &[f64]) -> Option<Vec<BoundaryCondition>> {
        let on = |v: f64, b: f64| (v - b).abs() <= BOUNDARY_TOL;
        let mut out = Vec::new();
        match self.kind {
            ProblemKind::Ex1BratuQuartic | ProblemKind::Ex2QuarticQuadratic => {
                if on(x[0], 0.0) {
                    out.push(BoundaryCondition {
                        kind: ConditionKind::NeumannZero,
                        component: 0,
                        axis: 0,
                    });
                } else if on(x[0], 1.0) {
                    out.push(BoundaryCondition {
                        kind: ConditionKind::DirichletZero,
                        component: 0,
                        axis: 0,
                    });
                }
            }
            ProblemKind::GrayScottSteady => {
                for axis in 0..2 {
                    if on(x[axis], 0.0) || on(x[axis], 1.0) {
                        for component in 0..2 {
                            out.push(BoundaryCondition {
                                kind: ConditionKind::NeumannZero,
                                component,
                                axis,
                            });
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            None
        } else {
            Some(out)
        }
    }

    /// Boundary residuals of one output group at a boundary point: the value
    /// for Dirichlet rows, the normal-axis derivative for zero-flux rows.
    pub fn boundary_residual<S: Scalar>(
        &self,
        u: &[Jet2<S>],
        x: &[f64],
    ) -> Result<Vec<S>, ProblemError> {
        let conditions = self
            .conditions_at(x)
            .ok_or_else(|| ProblemError::NotOnBoundary(x.to_vec()))?;
        Ok(conditions
            .iter()
            .map(|c| match c.kind {
                ConditionKind::DirichletZero => u[c.component].value,
                ConditionKind::NeumannZero => u[c.component].d1[c.axis],
            })
            .collect())
    }

    /// Keeps parameters admissible after an optimizer step.
    pub fn project_lambda(&self, lambda: &mut [f64]) {
        if self.kind == ProblemKind::GrayScottSteady {
            for d in &mut lambda[..2] {
                if *d < MIN_DIFFUSION {
                    *d = MIN_DIFFUSION;
                }
            }
        }
    }

    /// Default collocation points: `n` cell midpoints per axis.
    pub fn collocation_grid(&self, n: usize) -> Vec<Vec<f64>> {
        let mid = |i: usize| (i as f64 + 0.5) / n as f64;
        match self.dim() {
            1 => (0..n).map(|i| vec![mid(i)]).collect(),
            _ => (0..n)
                .flat_map(|j| (0..n).map(move |i| vec![mid(i), mid(j)]))
                .collect(),
        }
    }

    /// Default boundary points: both end points in 1D; `n` midpoints per side
    /// of the unit square in 2D.
    pub fn boundary_points(&self, n: usize) -> Vec<Vec<f64>> {
        match self.dim() {
            1 => vec![vec![0.0], vec![1.0]],
            _ => {
                let mid = |i: usize| (i as f64 + 0.5) / n as f64;
                let mut pts = Vec::with_capacity(4 * n);
                for i in 0..n {
                    pts.push(vec![0.0, mid(i)]);
                    pts.push(vec![1.0, mid(i)]);
                    pts.push(vec![mid(i), 0.0]);
                    pts.push(vec![mid(i), 1.0]);
                }
                pts
            }
        }
    }
}

/// r = u'' + λ (1 + u⁴)
pub fn residual_ex1<S: Scalar>(u: &Jet2<S>, _x: f64, lambda: &[S]) -> S {
    u.d2[0] + lambda[0] * (u.value.powi(4) + 1.0)
}

/// r = u'' - (u⁴ - λ u²)
pub fn residual_ex2<S: Scalar>(u: &Jet2<S>, _x: f64, lambda: &[S]) -> S {
    u.d2[0] - (u.value.powi(4) - lambda[0] * u.value.square())
}

/// (r_A, r_S) with λ = [D_A, D_S, ρ, μ].
pub fn residual_gs<S: Scalar>(a: &Jet2<S>, s: &Jet2<S>, _x: [f64; 2], lambda: &[S]) -> (S, S) {
    let (da, ds, rho, mu) = (lambda[0], lambda[1], lambda[2], lambda[3]);
    let sa2 = s.value * a.value.square();
    let ra = da * a.laplacian() + sa2 - (mu + rho) * a.value;
    let rs = ds * s.laplacian() - sa2 + rho * ((s.value - 1.0) * -1.0);
    (ra, rs)
}
