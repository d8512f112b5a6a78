//! Multi-solution finite-difference Newton for the 1D problems.
//!
//! Unknowns are u_0..u_{n-2}; u_{n-1} = 0 is eliminated. Row 0 is the
//! one-sided second-order stencil for u'(0) = 0, rows 1..n-2 the equation at
//! each interior node with central differences.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{linearise, BandedMatrix, Grid, OracleError, SolutionField, SolutionTable};
use crate::autodiff::Jet2;
use crate::problems::{DeProblem, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialGuess {
    Constant { c: f64 },
    /// `amplitude * cos((2 mode + 1) π x / 2)`; every mode already satisfies
    /// both boundary conditions.
    Cosine { amplitude: f64, mode: usize },
}

impl InitialGuess {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialGuess::Constant { c } => c,
            InitialGuess::Cosine { amplitude, mode } => {
                amplitude * ((2 * mode + 1) as f64 * PI * x / 2.0).cos()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BvpOptions {
    pub grid_n: usize,
    /// Residual RMS target.
    pub tol: f64,
    /// Accepted instead of `tol` once Newton steps stall at roundoff level.
    pub roundoff_tol: f64,
    pub max_iter: usize,
    pub dedup_threshold: f64,
    /// Deflate already-found solutions out of later Newton solves.
    pub deflation: bool,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            grid_n: 1001,
            tol: 1e-10,
            roundoff_tol: 1e-8,
            max_iter: 100,
            dedup_threshold: super::DEDUP_THRESHOLD,
            deflation: false,
        }
    }
}

/// Constant levels plus scaled cosine modes of both signs.
pub fn default_guesses_1d(_kind: ProblemKind) -> Vec<InitialGuess> {
    let mut g: Vec<InitialGuess> = (-2..=4).map(|c| InitialGuess::Constant { c: c as f64 }).collect();
    for mode in 0..6 {
        for &a in &[0.2, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0] {
            for sign in [1.0, -1.0] {
                g.push(InitialGuess::Cosine { amplitude: sign * a, mode });
            }
        }
    }
    g
}

/// Runs damped Newton from every guess and collects the distinct converged
/// solutions. Guesses that fail are skipped.
pub fn solve_multisolution_1d(
    kind: ProblemKind,
    lambda: &[f64],
    options: &BvpOptions,
    guesses: &[InitialGuess],
) -> Result<SolutionTable, OracleError> {
    let problem = kind.problem();
    if problem.dim() != 1 {
        return Err(OracleError::Contract(format!("{kind} is not a 1D problem")));
    }
    problem
        .check_lambda(lambda)
        .map_err(|e| OracleError::Contract(e.to_string()))?;
    if options.grid_n < 101 {
        return Err(OracleError::Contract(format!("grid_n = {} < 101", options.grid_n)));
    }
    if guesses.is_empty() {
        return Err(OracleError::Contract("no initial guesses".into()));
    }
    let n = options.grid_n;
    let grid = Grid::Line { n };
    let h = grid.spacing();
    let mut table = SolutionTable::new(kind, lambda.to_vec(), grid);
    let mut found: Vec<Vec<f64>> = Vec::new();
    for (gi, guess) in guesses.iter().enumerate() {
        let u0: Vec<f64> = (0..n - 1).map(|i| guess.eval(i as f64 * h)).collect();
        let deflate = if options.deflation { found.as_slice() } else { &[] };
        match newton(&problem, lambda, h, u0, deflate, options) {
            Ok((u, rms)) => {
                let mut values = u;
                values.push(0.0);
                if table.insert_distinct(SolutionField { values: values.clone(), residual_rms: rms }, options.dedup_threshold) {
                    log::debug!("guess {gi} ({guess:?}) -> new solution, rms {rms:e}");
                    values.pop();
                    found.push(values);
                }
            }
            Err(e) => log::debug!("guess {gi} ({guess:?}) skipped: {e}"),
        }
    }
    // canonical order, independent of which guess found what
    table.solutions.sort_by(|a, b| a.values[0].total_cmp(&b.values[0]));
    Ok(table)
}

/// Newton from an arbitrary start curve given at all `options.grid_n`
/// nodes (the last value is ignored; u(1) = 0 is imposed).
pub fn polish_1d(
    kind: ProblemKind,
    lambda: &[f64],
    options: &BvpOptions,
    start: &[f64],
) -> Result<SolutionField, OracleError> {
    let problem = kind.problem();
    if problem.dim() != 1 {
        return Err(OracleError::Contract(format!("{kind} is not a 1D problem")));
    }
    problem
        .check_lambda(lambda)
        .map_err(|e| OracleError::Contract(e.to_string()))?;
    let n = options.grid_n;
    if n < 101 || start.len() != n {
        return Err(OracleError::Contract(format!(
            "start curve has {} values, grid needs {n} (>= 101)",
            start.len()
        )));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Contract("start curve is not finite".into()));
    }
    let h = Grid::Line { n }.spacing();
    let (mut values, residual_rms) = newton(&problem, lambda, h, start[..n - 1].to_vec(), &[], options)?;
    values.push(0.0);
    Ok(SolutionField { values, residual_rms })
}

struct System {
    f: Vec<f64>,
    jac: BandedMatrix,
}

fn assemble(problem: &DeProblem, lambda: &[f64], h: f64, u: &[f64], with_jacobian: bool) -> System {
    let m = u.len();
    let at = |i: usize| if i < m { u[i] } else { 0.0 };
    let mut f = vec![0.0; m];
    let mut jac = BandedMatrix::zeros(if with_jacobian { m } else { 0 }, 1, 2);
    f[0] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
    if with_jacobian {
        jac.add(0, 0, -1.5 / h);
        if m > 1 {
            jac.add(0, 1, 2.0 / h);
        }
        if m > 2 {
            jac.add(0, 2, -0.5 / h);
        }
    }
    for i in 1..m {
        let (l, c, r) = (at(i - 1), at(i), at(i + 1));
        let jet = Jet2 {
            value: c,
            d1: vec![(r - l) / (2.0 * h)],
            d2: vec![(l - 2.0 * c + r) / (h * h)],
        };
        let x = [i as f64 * h];
        if !with_jacobian {
            f[i] = problem.residual(std::slice::from_ref(&jet), &x, lambda)[0];
            continue;
        }
        let lin = linearise(problem, std::slice::from_ref(&jet), &x, lambda);
        f[i] = lin.residual[0];
        let dv = lin.d_value[0][0];
        let d1 = lin.d_d1[0][0][0];
        let d2 = lin.d_d2[0][0][0];
        jac.add(i, i - 1, d2 / (h * h) - d1 / (2.0 * h));
        jac.add(i, i, dv - 2.0 * d2 / (h * h));
        if i + 1 < m {
            jac.add(i, i + 1, d2 / (h * h) + d1 / (2.0 * h));
        }
    }
    System { f, jac }
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Deflation factor `Π (1/‖u − u_k‖² + 1)` and the gradient of its log, with
/// the grid-weighted norm.
fn deflation(u: &[f64], found: &[Vec<f64>], h: f64) -> (f64, Vec<f64>) {
    let mut factor = 1.0;
    let mut grad = vec![0.0; u.len()];
    for k in found {
        let d2: f64 = h * u.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let term = 1.0 / d2 + 1.0;
        factor *= term;
        // d log(1/d² + 1) / du = -2h (u - u_k) / (d⁴ term)
        let s = -2.0 * h / (d2 * d2 * term);
        for (g, (a, b)) in grad.iter_mut().zip(u.iter().zip(k)) {
            *g += s * (a - b);
        }
    }
    (factor, grad)
}

fn newton(
    problem: &DeProblem,
    lambda: &[f64],
    h: f64,
    mut u: Vec<f64>,
    found: &[Vec<f64>],
    opts: &BvpOptions,
) -> Result<(Vec<f64>, f64), OracleError> {
    let merit = |u: &[f64], r: f64| -> f64 {
        if found.is_empty() {
            r
        } else {
            deflation(u, found, h).0 * r
        }
    };
    let mut sys = assemble(problem, lambda, h, &u, true);
    let mut r = rms(&sys.f);
    for iter in 0..opts.max_iter {
        if !r.is_finite() {
            return Err(OracleError::NoConvergence { iterations: iter, rms: r });
        }
        if r <= opts.tol {
            return Ok((u, r));
        }
        sys.jac.factor()?;
        let mut delta: Vec<f64> = sys.f.iter().map(|v| -v).collect();
        sys.jac.solve(&mut delta);
        if !found.is_empty() {
            let (_, g) = deflation(&u, found, h);
            let gd: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
            let scale = 1.0 / (1.0 - gd);
            if scale.is_finite() {
                delta.iter_mut().for_each(|d| *d *= scale);
            }
        }
        let step_max = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let u_max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step_max <= 1e-12 * (1.0 + u_max) && r <= opts.roundoff_tol {
            return Ok((u, r));
        }
        let current = merit(&u, r);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let f = assemble(problem, lambda, h, &trial, false).f;
            let tr = rms(&f);
            if tr.is_finite() && merit(&trial, tr) < (1.0 - 1e-4 * t) * current {
                u = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                if r <= opts.roundoff_tol {
                    return Ok((u, r));
                }
                return Err(OracleError::NoConvergence { iterations: iter, rms: r });
            }
        }
        sys = assemble(problem, lambda, h, &u, true);
        r = rms(&sys.f);
    }
    if r <= opts.roundoff_tol {
        return Ok((u, r));
    }
    Err(OracleError::NoConvergence { iterations: opts.max_iter, rms: r })
}
