//! Steady states of the Gray-Scott system on the unit square.
//!
//! Each seed is marched in time (explicit diffusion, implicit linear decay)
//! until the steady residual is small, then polished with Newton on the full
//! coupled system. Unknowns are interleaved (A, S) per node, which keeps the
//! Jacobian inside a band of half-width 2n + 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fd_jet, linearise, BandedMatrix, Grid, OracleError, SolutionField, SolutionTable};
use crate::problems::ProblemKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Seed {
    /// The trivial state A = 0, S = 1.
    Homogeneous,
    /// Gaussian bumps of A (with matching dips of S) at the given centres.
    Spots { centres: Vec<[f64; 2]>, radius: f64 },
    /// Sparse random bumps.
    Noise { seed: u64, count: usize, radius: f64 },
}

impl Seed {
    /// Initial (A, S), component-major on `grid`.
    pub fn initial_state(&self, grid: &Grid) -> Vec<f64> {
        let len = grid.len();
        let mut state = vec![0.0; 2 * len];
        state[len..].iter_mut().for_each(|s| *s = 1.0);
        let centres: Vec<[f64; 2]> = match self {
            Seed::Homogeneous => return state,
            Seed::Spots { centres, .. } => centres.clone(),
            Seed::Noise { seed, count, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
            }
        };
        let radius = match self {
            Seed::Spots { radius, .. } | Seed::Noise { radius, .. } => *radius,
            Seed::Homogeneous => unreachable!(),
        };
        for idx in 0..len {
            let p = grid.node(idx);
            let bump: f64 = centres
                .iter()
                .map(|c| {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                    (-d2 / (radius * radius)).exp()
                })
                .sum::<f64>()
                .min(1.0);
            state[idx] = 0.5 * bump;
            state[len + idx] = 1.0 - 0.5 * bump;
        }
        state
    }
}

/// Ten seeds: homogeneous, single spots at centre, corners and edges, a
/// diagonal corner pair and three random layouts.
pub fn default_seed_library() -> Vec<Seed> {
    let r = 0.1;
    let spots = |c: &[[f64; 2]]| Seed::Spots { centres: c.to_vec(), radius: r };
    vec![
        Seed::Homogeneous,
        spots(&[[0.5, 0.5]]),
        spots(&[[0.0, 0.0]]),
        spots(&[[0.5, 0.0]]),
        spots(&[[0.0, 0.0], [1.0, 1.0]]),
        spots(&[[1.0, 0.0]]),
        spots(&[[0.0, 0.5]]),
        Seed::Noise { seed: 1, count: 6, radius: 0.06 },
        Seed::Noise { seed: 3, count: 3, radius: 0.06 },
        Seed::Noise { seed: 4, count: 4, radius: 0.06 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrayScottOptions {
    pub grid_n: usize,
    /// Requested step; capped at 90% of the explicit diffusion limit.
    pub dt: f64,
    pub max_time: f64,
    /// Residual RMS at which marching hands over to Newton.
    pub march_tol: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub dedup_threshold: f64,
}

impl Default for GrayScottOptions {
    fn default() -> Self {
        Self {
            grid_n: 64,
            dt: 0.1,
            max_time: 20_000.0,
            march_tol: 1e-5,
            newton_tol: 1e-10,
            max_newton: 30,
            dedup_threshold: super::DEDUP_THRESHOLD,
        }
    }
}

/// Residual bound every stored 2D state satisfies.
pub const STEADY_TOL: f64 = 1e-6;

pub fn solve_gray_scott_steady(
    lambda: &[f64],
    options: &GrayScottOptions,
    seeds: &[Seed],
) -> Result<SolutionTable, OracleError> {
    let kind = ProblemKind::GrayScottSteady;
    kind.problem()
        .check_lambda(lambda)
        .map_err(|e| OracleError::Contract(e.to_string()))?;
    if options.grid_n < 32 {
        return Err(OracleError::Contract(format!("grid_n = {} < 32", options.grid_n)));
    }
    if lambda[0] <= 0.0 || lambda[1] <= 0.0 {
        return Err(OracleError::Contract("diffusion coefficients must be positive".into()));
    }
    let grid = Grid::Square { n: options.grid_n };
    let results: Vec<Result<SolutionField, OracleError>> = seeds
        .par_iter()
        .map(|seed| steady_state_from(lambda, &grid, options, seed))
        .collect();
    let mut table = SolutionTable::new(kind, lambda.to_vec(), grid);
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(field) => {
                let rms = field.residual_rms;
                let added = table.insert_distinct(field, options.dedup_threshold);
                log::debug!("seed {seed:?}: steady, rms {rms:e}, new = {added}");
            }
            Err(e) => log::debug!("seed {seed:?} skipped: {e}"),
        }
    }
    Ok(table)
}

fn steady_state_from(
    lambda: &[f64],
    grid: &Grid,
    options: &GrayScottOptions,
    seed: &Seed,
) -> Result<SolutionField, OracleError> {
    let mut state = seed.initial_state(grid);
    march(lambda, grid, options, &mut state)?;
    let rms = newton_polish(lambda, grid, options, &mut state)?;
    if rms > STEADY_TOL {
        return Err(OracleError::NoConvergence { iterations: options.max_newton, rms });
    }
    Ok(SolutionField { values: state, residual_rms: rms })
}

fn laplacian(u: &[f64], n: usize, h2: f64, out: &mut [f64]) {
    for j in 0..n {
        let jd = if j == 0 { 1 } else { j - 1 };
        let ju = if j == n - 1 { n - 2 } else { j + 1 };
        for i in 0..n {
            let il = if i == 0 { 1 } else { i - 1 };
            let ir = if i == n - 1 { n - 2 } else { i + 1 };
            let c = u[j * n + i];
            out[j * n + i] =
                (u[j * n + il] + u[j * n + ir] + u[jd * n + i] + u[ju * n + i] - 4.0 * c) / h2;
        }
    }
}

/// Steady residual RMS; fills the Laplacian buffers as a side effect.
fn steady_rms(lambda: &[f64], state: &[f64], n: usize, h2: f64, la: &mut [f64], ls: &mut [f64]) -> f64 {
    let len = n * n;
    let (a, s) = state.split_at(len);
    laplacian(a, n, h2, la);
    laplacian(s, n, h2, ls);
    let (da, ds, rho, mu) = (lambda[0], lambda[1], lambda[2], lambda[3]);
    let mut sum = 0.0;
    for k in 0..len {
        let sa2 = s[k] * a[k] * a[k];
        let ra = da * la[k] + sa2 - (mu + rho) * a[k];
        let rs = ds * ls[k] - sa2 + rho * (1.0 - s[k]);
        sum += ra * ra + rs * rs;
    }
    (sum / (2 * len) as f64).sqrt()
}

fn march(lambda: &[f64], grid: &Grid, options: &GrayScottOptions, state: &mut [f64]) -> Result<(), OracleError> {
    let n = grid.n();
    let len = n * n;
    let h2 = grid.spacing().powi(2);
    let (da, ds, rho, mu) = (lambda[0], lambda[1], lambda[2], lambda[3]);
    let dt = options.dt.min(0.9 * h2 / (4.0 * da.max(ds)));
    let mut la = vec![0.0; len];
    let mut ls = vec![0.0; len];
    let check_every = 200usize;
    let mut time = 0.0;
    let mut step = 0usize;
    loop {
        if step % check_every == 0 {
            let rms = steady_rms(lambda, state, n, h2, &mut la, &mut ls);
            if !rms.is_finite() {
                return Err(OracleError::NotSteady { time, rms });
            }
            if rms <= options.march_tol {
                return Ok(());
            }
            // oscillating or slowly drifting trajectories end up here
            if time >= options.max_time {
                return Err(OracleError::NotSteady { time, rms });
            }
        } else {
            let (a, s) = state.split_at(len);
            laplacian(a, n, h2, &mut la);
            laplacian(s, n, h2, &mut ls);
        }
        let (a, s) = state.split_at_mut(len);
        for k in 0..len {
            let sa2 = s[k] * a[k] * a[k];
            a[k] = (a[k] + dt * (da * la[k] + sa2)) / (1.0 + dt * (mu + rho));
            s[k] = (s[k] + dt * (ds * ls[k] - sa2 + rho)) / (1.0 + dt * rho);
        }
        time += dt;
        step += 1;
    }
}

fn assemble(lambda: &[f64], grid: &Grid, state: &[f64], with_jacobian: bool) -> (Vec<f64>, BandedMatrix) {
    let problem = ProblemKind::GrayScottSteady.problem();
    let n = grid.n();
    let len = n * n;
    let h = grid.spacing();
    let band = 2 * n + 1;
    let mut f = vec![0.0; 2 * len];
    let mut jac = BandedMatrix::zeros(if with_jacobian { 2 * len } else { 0 }, band, band);
    let (a, s) = state.split_at(len);
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
    for idx in 0..len {
        let jets = [fd_jet(grid, a, idx), fd_jet(grid, s, idx)];
        let x = grid.node(idx);
        if !with_jacobian {
            let r = problem.residual(&jets, &x, lambda);
            f[2 * idx] = r[0];
            f[2 * idx + 1] = r[1];
            continue;
        }
        let lin = linearise(&problem, &jets, &x, lambda);
        let (i, j) = (idx % n, idx / n);
        let neighbours = [
            (0, j * n + mirror(i, -1), j * n + mirror(i, 1)),
            (1, mirror(j, -1) * n + i, mirror(j, 1) * n + i),
        ];
        for e in 0..2 {
            let row = 2 * idx + e;
            f[row] = lin.residual[e];
            for c in 0..2 {
                jac.add(row, 2 * idx + c, lin.d_value[e][c]);
                for &(axis, lo, hi) in &neighbours {
                    let d1 = lin.d_d1[e][c][axis] / (2.0 * h);
                    let d2 = lin.d_d2[e][c][axis] / (h * h);
                    jac.add(row, 2 * lo + c, d2 - d1);
                    jac.add(row, 2 * hi + c, d2 + d1);
                    jac.add(row, 2 * idx + c, -2.0 * d2);
                }
            }
        }
    }
    (f, jac)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Newton on the interleaved system; `state` stays component-major.
fn newton_polish(
    lambda: &[f64],
    grid: &Grid,
    options: &GrayScottOptions,
    state: &mut [f64],
) -> Result<f64, OracleError> {
    let len = grid.len();
    for iter in 0..options.max_newton {
        let (f, mut jac) = assemble(lambda, grid, state, true);
        let r = rms(&f);
        if r <= options.newton_tol {
            return Ok(r);
        }
        jac.factor()?;
        let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
        jac.solve(&mut delta);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = (0..2 * len)
                .map(|k| {
                    let (c, idx) = (k / len, k % len);
                    state[k] + t * delta[2 * idx + c]
                })
                .collect();
            let tr = rms(&assemble(lambda, grid, &trial, false).0);
            if tr.is_finite() && tr < (1.0 - 1e-4 * t) * r {
                state.copy_from_slice(&trial);
                break;
            }
            t *= 0.5;
            if t < 1e-4 {
                if r <= STEADY_TOL {
                    return Ok(r);
                }
                return Err(OracleError::NoConvergence { iterations: iter, rms: r });
            }
        }
    }
    let r = rms(&assemble(lambda, grid, state, false).0);
    if r <= STEADY_TOL {
        Ok(r)
    } else {
        Err(OracleError::NoConvergence { iterations: options.max_newton, rms: r })
    }
}
