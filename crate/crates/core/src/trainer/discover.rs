//! Residual-only solution discovery at a known λ.
//!
//! Each restart first fits every output group to its own random trial curve
//! (a scaled cosine mode that satisfies the boundary conditions), then drops
//! all data and descends the residual and boundary terms alone. Every group
//! that ends near a solution is confirmed by a Newton polish on the finite
//! difference grid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::studies::run_ordered;
use super::{TrainConfig, TrainError};
use crate::autodiff::Jet2;
use crate::loss::HomotopyObjective;
use crate::network::{BatchedMlp, MlpConfig, NetworkParams};
use crate::optimizer::{AdamHyper, AdamState};
use crate::oracle::{polish_1d, relative_distance, BvpOptions, Grid, InitialGuess, SolutionField, SolutionTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryOptions {
    pub restarts: usize,
    /// Output groups per restart.
    pub output_groups: usize,
    pub warmup_iterations: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Trial curve amplitudes are uniform on this interval.
    pub amplitude_range: (f64, f64),
    /// Trial curves use cosine modes `0..modes`.
    pub modes: usize,
    /// Relative L2 distance under which two curves are the same solution,
    /// and under which a curve counts as matching its polished solution.
    pub match_threshold: f64,
    pub workers: usize,
}

impl Default for DiscoveryOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            output_groups: 7,
            warmup_iterations: 2_000,
            iterations: 10_000,
            seed: 0,
            amplitude_range: (-7.0, 5.0),
            modes: 3,
            match_threshold: 1e-2,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryOutcome {
    /// Distinct confirmed solutions, polished on the oracle grid and sorted
    /// by u(0).
    pub table: SolutionTable,
    /// The network curve behind each table entry, on the same grid.
    pub network_curves: Vec<Vec<f64>>,
    /// RMS residual of each of those network curves at the collocation points.
    pub network_residual: Vec<f64>,
    /// Output groups examined over all restarts.
    pub candidates: usize,
    /// Groups whose polish failed or landed too far from the curve.
    pub rejected: usize,
}

struct Candidate {
    curve: Vec<f64>,
    network_rms: f64,
    polished: Option<SolutionField>,
}

/// Searches for distinct solutions of the 1D problem at `lambda`; `cfg`
/// supplies the network shape, collocation points, seeds and Adam settings.
pub fn discover_solutions(
    cfg: &TrainConfig,
    lambda: &[f64],
    options: &DiscoveryOptions,
) -> Result<DiscoveryOutcome, TrainError> {
    let problem = cfg.problem();
    if problem.dim() != 1 {
        return Err(TrainError::Config(format!("discovery supports 1D problems only, not {}", problem.name())));
    }
    if options.restarts == 0 || options.output_groups == 0 || options.modes == 0 {
        return Err(TrainError::Config("restarts, output_groups and modes must be >= 1".into()));
    }
    let (lo, hi) = options.amplitude_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(TrainError::Config("amplitude_range must be a finite interval".into()));
    }
    problem.check_lambda(lambda).map_err(crate::loss::LossError::from)?;
    let mut cfg = cfg.clone();
    cfg.output_groups = options.output_groups;
    cfg.validate()?;
    let net = cfg.network()?;
    let objective = HomotopyObjective::new(
        net.clone(),
        problem.clone(),
        None,
        &cfg.collocation_points(),
        &cfg.boundary_points(),
    )?;
    let bvp = BvpOptions::default();
    let grid = Grid::Line { n: bvp.grid_n };
    let nodes: Vec<f64> = (0..bvp.grid_n).map(|i| grid.node(i)[0]).collect();
    let colloc = cfg.collocation_points();

    let restarts: Vec<usize> = (0..options.restarts).collect();
    let per_restart = run_ordered(&restarts, options.workers, |r| -> Result<Vec<Candidate>, TrainError> {
        let seed = options.seed.wrapping_add(r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trials: Vec<InitialGuess> = (0..options.output_groups)
            .map(|_| InitialGuess::Cosine {
                amplitude: rng.random_range(lo..hi),
                mode: rng.random_range(0..options.modes),
            })
            .collect();
        let mut theta = NetworkParams::init_he(net.clone(), cfg.network_seed.wrapping_add(seed))?.into_values();
        warm_up(&net, &mut theta, &trials, &colloc, options.warmup_iterations, cfg.adam)?;
        let mut adam = AdamState::new(theta.len(), cfg.adam);
        let mut grad = vec![0.0; theta.len()];
        let mut grad_lambda = vec![0.0; lambda.len()];
        for _ in 0..options.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let b = objective.evaluate(&theta, lambda, 1.0, Some((&mut grad, &mut grad_lambda)))?;
            if !b.total.is_finite() || adam.step(&grad, &mut theta).is_err() {
                log::debug!("restart {r} diverged");
                return Ok(Vec::new());
            }
        }
        let mlp = BatchedMlp::new(net.clone());
        let pts = Array2::from_shape_vec((nodes.len(), 1), nodes.clone()).expect("column of nodes");
        let on_grid = mlp.forward(&theta, &pts, false);
        let cpts = Array2::from_shape_fn((colloc.len(), 1), |(i, _)| colloc[i][0]);
        let at_colloc = mlp.forward(&theta, &cpts, true);
        Ok((0..options.output_groups)
            .map(|m| {
                let curve: Vec<f64> = (0..nodes.len()).map(|i| on_grid.value(i, m)).collect();
                let network_rms = (0..colloc.len())
                    .map(|i| {
                        let jet = Jet2 {
                            value: at_colloc.value(i, m),
                            d1: vec![at_colloc.d1(i, 0, m)],
                            d2: vec![at_colloc.d2(i, 0, m)],
                        };
                        problem.residual(&[jet], &colloc[i], lambda)[0].powi(2)
                    })
                    .sum::<f64>()
                    / colloc.len() as f64;
                let polished = polish_1d(problem.kind(), lambda, &bvp, &curve)
                    .ok()
                    .filter(|p| relative_distance(&p.values, &curve) <= options.match_threshold);
                Candidate {
                    curve,
                    network_rms: network_rms.sqrt(),
                    polished,
                }
            })
            .collect())
    })?;

    let mut table = SolutionTable::new(problem.kind(), lambda.to_vec(), grid);
    let mut curves = Vec::new();
    let mut residuals = Vec::new();
    let (mut candidates, mut rejected) = (0, 0);
    for restart in per_restart {
        for c in restart? {
            candidates += 1;
            match c.polished {
                Some(field) => {
                    if table.insert_distinct(field, options.match_threshold) {
                        curves.push(c.curve);
                        residuals.push(c.network_rms);
                    }
                }
                None => rejected += 1,
            }
        }
    }
    let mut order: Vec<usize> = (0..table.solutions.len()).collect();
    order.sort_by(|&a, &b| table.solutions[a].values[0].total_cmp(&table.solutions[b].values[0]));
    let solutions = order.iter().map(|&i| table.solutions[i].clone()).collect();
    table.solutions = solutions;
    Ok(DiscoveryOutcome {
        table,
        network_curves: order.iter().map(|&i| curves[i].clone()).collect(),
        network_residual: order.iter().map(|&i| residuals[i]).collect(),
        candidates,
        rejected,
    })
}

/// Least-squares fit of group m to `trials[m]` at `points`.
fn warm_up(
    net: &MlpConfig,
    theta: &mut [f64],
    trials: &[InitialGuess],
    points: &[Vec<f64>],
    iterations: usize,
    hyper: AdamHyper,
) -> Result<(), TrainError> {
    let mlp = BatchedMlp::new(net.clone());
    let n = points.len();
    let pts = Array2::from_shape_fn((n, 1), |(i, _)| points[i][0]);
    let targets = Array2::from_shape_fn((n, trials.len()), |(i, m)| trials[m].eval(points[i][0]));
    let scale = 2.0 / (n * trials.len()) as f64;
    let mut adam = AdamState::new(theta.len(), hyper);
    let mut grad = vec![0.0; theta.len()];
    for _ in 0..iterations {
        let fwd = mlp.forward(theta, &pts, false);
        let adj = (fwd.output() - &targets) * scale;
        grad.iter_mut().for_each(|g| *g = 0.0);
        mlp.backward(theta, &fwd, adj, &mut grad);
        adam.step(&grad, theta)?;
    }
    Ok(())
}
