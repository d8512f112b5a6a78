//! Classical ground truth: finite-difference solution tables for each problem
//! and the observation sampler built on top of them.

mod banded;
mod bvp;
mod gray_scott;
mod reference;
mod sampling;

pub use banded::BandedMatrix;
pub use bvp::{default_guesses_1d, polish_1d, solve_multisolution_1d, BvpOptions, InitialGuess};
pub use gray_scott::{
    default_seed_library, solve_gray_scott_steady, GrayScottOptions, Seed, STEADY_TOL,
};
pub use reference::{oracle_table, reference_subset, reference_table, OracleOptions};
pub use sampling::{
    sample_observations, test_split, Interpolation, ObservationMeta, ObservationSet,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, Tape};
use crate::problems::{DeProblem, ProblemKind};

/// Relative L2 threshold under which two solutions count as the same.
pub const DEDUP_THRESHOLD: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("singular Jacobian at row {row}")]
    SingularJacobian { row: usize },
    #[error("Newton did not converge: residual RMS {rms:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, rms: f64 },
    #[error("trajectory did not settle: residual RMS {rms:e} at t = {time}")]
    NotSteady { time: f64, rms: f64 },
}

/// Uniform vertex grid on the unit interval or square, end points included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Grid {
    Line { n: usize },
    Square { n: usize },
}

impl Grid {
    pub fn dim(&self) -> usize {
        match self {
            Grid::Line { .. } => 1,
            Grid::Square { .. } => 2,
        }
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        match *self {
            Grid::Line { n } | Grid::Square { n } => n,
        }
    }

    pub fn len(&self) -> usize {
        self.n().pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n() - 1) as f64
    }

    /// Coordinates of node `idx`; x varies fastest in 2D.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        match *self {
            Grid::Line { .. } => vec![idx as f64 * h],
            Grid::Square { n } => vec![(idx % n) as f64 * h, (idx / n) as f64 * h],
        }
    }
}

/// One discrete solution, stored component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub values: Vec<f64>,
    pub residual_rms: f64,
}

impl SolutionField {
    pub fn component<'a>(&'a self, grid: &Grid, c: usize) -> &'a [f64] {
        let len = grid.len();
        &self.values[c * len..(c + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub problem: ProblemKind,
    pub lambda: Vec<f64>,
    pub grid: Grid,
    pub components: usize,
    pub solutions: Vec<SolutionField>,
}

/// RMS level below which a field counts as zero when comparing solutions.
pub const ZERO_FLOOR: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with the scale floored at an RMS of
/// [`ZERO_FLOOR`] so that numerically-zero fields compare equal.
pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let floor = ZERO_FLOOR * (a.len().max(1) as f64).sqrt();
    diff / norm(a).max(norm(b)).max(floor)
}

impl SolutionTable {
    pub fn new(problem: ProblemKind, lambda: Vec<f64>, grid: Grid) -> Self {
        Self {
            problem,
            lambda,
            grid,
            components: problem.problem().components(),
            solutions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    /// Index of a stored solution within `threshold` of `values`.
    pub fn find(&self, values: &[f64], threshold: f64) -> Option<usize> {
        self.solutions
            .iter()
            .position(|s| relative_distance(&s.values, values) < threshold)
    }

    /// Adds `field` unless an equivalent solution is already stored. Returns
    /// whether it was added.
    pub fn insert_distinct(&mut self, field: SolutionField, threshold: f64) -> bool {
        if self.find(&field.values, threshold).is_some() {
            return false;
        }
        self.solutions.push(field);
        true
    }

    /// Union of two tables over the same problem and grid.
    pub fn merge(&mut self, other: &SolutionTable, threshold: f64) -> Result<(), OracleError> {
        if other.problem != self.problem || other.grid != self.grid || other.lambda != self.lambda {
            return Err(OracleError::Contract("merging incompatible solution tables".into()));
        }
        for s in &other.solutions {
            self.insert_distinct(s.clone(), threshold);
        }
        Ok(())
    }

    /// Solution `source`, component `c`, interpolated at `x`: cubic Lagrange
    /// in 1D, bilinear in 2D.
    pub fn interpolate(&self, source: usize, c: usize, x: &[f64]) -> f64 {
        let u = self.solutions[source].component(&self.grid, c);
        let n = self.grid.n();
        let h = self.grid.spacing();
        let cell = |t: f64| ((t.clamp(0.0, 1.0) / h).floor() as usize).min(n - 2);
        match self.grid {
            Grid::Line { .. } => {
                let t = x[0].clamp(0.0, 1.0);
                let base = cell(t).saturating_sub(1).min(n.saturating_sub(4));
                let top = (base + 4).min(n);
                let mut acc = 0.0;
                for i in base..top {
                    let mut w = 1.0;
                    for j in base..top {
                        if j != i {
                            w *= (t - j as f64 * h) / ((i as f64 - j as f64) * h);
                        }
                    }
                    acc += w * u[i];
                }
                acc
            }
            Grid::Square { .. } => {
                let (tx, ty) = (x[0].clamp(0.0, 1.0), x[1].clamp(0.0, 1.0));
                let (i, j) = (cell(tx), cell(ty));
                let fx = tx / h - i as f64;
                let fy = ty / h - j as f64;
                let at = |i: usize, j: usize| u[j * n + i];
                (1.0 - fy) * ((1.0 - fx) * at(i, j) + fx * at(i + 1, j))
                    + fy * ((1.0 - fx) * at(i, j + 1) + fx * at(i + 1, j + 1))
            }
        }
    }

    /// Finite-difference jets of every component at node `idx`. In 2D the
    /// zero-flux condition is built in through mirrored ghost nodes; in 1D
    /// only interior nodes are meaningful.
    pub fn fd_jets(&self, source: usize, idx: usize) -> Vec<Jet2<f64>> {
        let field = &self.solutions[source];
        (0..self.components)
            .map(|c| fd_jet(&self.grid, field.component(&self.grid, c), idx))
            .collect()
    }

    /// Residual RMS of stored solution `source` as seen by the problem's own
    /// residual operator on finite-difference jets. 1D tables are checked at
    /// interior nodes, 2D tables at every node.
    pub fn residual_check(&self, source: usize) -> f64 {
        let problem = self.problem.problem();
        let nodes: Vec<usize> = match self.grid {
            Grid::Line { n } => (1..n - 1).collect(),
            Grid::Square { .. } => (0..self.grid.len()).collect(),
        };
        let mut sum = 0.0;
        let mut count = 0usize;
        for &idx in &nodes {
            let jets = self.fd_jets(source, idx);
            for r in problem.residual(&jets, &self.grid.node(idx), &self.lambda) {
                sum += r * r;
                count += 1;
            }
        }
        (sum / count as f64).sqrt()
    }
}

pub(crate) fn fd_jet(grid: &Grid, u: &[f64], idx: usize) -> Jet2<f64> {
    let h = grid.spacing();
    let n = grid.n();
    match grid {
        Grid::Line { .. } => {
            let (l, r) = (u[idx.saturating_sub(1)], u[(idx + 1).min(n - 1)]);
            Jet2 {
                value: u[idx],
                d1: vec![(r - l) / (2.0 * h)],
                d2: vec![(l - 2.0 * u[idx] + r) / (h * h)],
            }
        }
        Grid::Square { .. } => {
            let (i, j) = (idx % n, idx / n);
            let mirror = |k: usize, step: isize| -> usize {
                let m = k as isize + step;
                if m < 0 {
                    1
                } else if m as usize >= n {
                    n - 2
                } else {
                    m as usize
                }
            };
            let at = |i: usize, j: usize| u[j * n + i];
            let c = at(i, j);
            let (xl, xr) = (at(mirror(i, -1), j), at(mirror(i, 1), j));
            let (yl, yr) = (at(i, mirror(j, -1)), at(i, mirror(j, 1)));
            Jet2 {
                value: c,
                d1: vec![(xr - xl) / (2.0 * h), (yr - yl) / (2.0 * h)],
                d2: vec![(xl - 2.0 * c + xr) / (h * h), (yl - 2.0 * c + yr) / (h * h)],
            }
        }
    }
}

/// Residuals at one node together with their partials with respect to the
/// local jet entries, obtained by one reverse sweep per equation.
pub(crate) struct LocalLinearisation {
    pub residual: Vec<f64>,
    /// `[e][c]`: d r_e / d u_c.
    pub d_value: Vec<Vec<f64>>,
    /// `[e][c][axis]`: d r_e / d (∂_axis u_c).
    pub d_d1: Vec<Vec<Vec<f64>>>,
    /// `[e][c][axis]`: d r_e / d (∂²_axis u_c).
    pub d_d2: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn linearise(
    problem: &DeProblem,
    jets: &[Jet2<f64>],
    x: &[f64],
    lambda: &[f64],
) -> LocalLinearisation {
    let tape = Tape::with_capacity(64);
    let axes = jets[0].axes();
    let vars: Vec<Jet2<_>> = jets
        .iter()
        .map(|j| Jet2 {
            value: tape.var(j.value),
            d1: j.d1.iter().map(|&v| tape.var(v)).collect(),
            d2: j.d2.iter().map(|&v| tape.var(v)).collect(),
        })
        .collect();
    let lam: Vec<_> = lambda.iter().map(|&l| tape.constant(l)).collect();
    let rs = problem.residual(&vars, x, &lam);
    let mut out = LocalLinearisation {
        residual: rs.iter().map(|r| r.value()).collect(),
        d_value: Vec::new(),
        d_d1: Vec::new(),
        d_d2: Vec::new(),
    };
    for r in rs {
        let g = tape.backward(r).expect("oracle residuals are finite");
        out.d_value.push(vars.iter().map(|j| g.wrt(j.value)).collect());
        out.d_d1
            .push(vars.iter().map(|j| (0..axes).map(|a| g.wrt(j.d1[a])).collect()).collect());
        out.d_d2
            .push(vars.iter().map(|j| (0..axes).map(|a| g.wrt(j.d2[a])).collect()).collect());
    }
    out
}
