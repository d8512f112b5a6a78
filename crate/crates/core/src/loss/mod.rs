//! The homotopy objective
//!
//! ```text
//! L_k = 1/N_o Σ_i min_m ‖û_m(x_i) − u_i‖²
//!     + α_k/(M N_c) Σ_j Σ_m ‖r(û_m; x_j, λ)‖²
//!     + α_k/(M N_b) Σ_b Σ_m ‖B(û_m; x_b)‖²
//! ```
//!
//! with `α_k = α_0 r^(k−1)`. The generic functions here are the reference
//! definition and run on `f64` or on the tape; [`HomotopyObjective`] is the
//! batched evaluator used for training.

mod objective;

pub use objective::HomotopyObjective;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Scalar, Tape};
use crate::network::{forward_jets, forward_values, MlpConfig, NetworkParams};
use crate::oracle::ObservationSet;
use crate::problems::{DeProblem, ProblemError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomotopySchedule {
    pub alpha0: f64,
    pub ratio: f64,
    pub steps: usize,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            ratio: 0.6,
            steps: 11,
        }
    }
}

impl HomotopySchedule {
    pub fn new(alpha0: f64, ratio: f64, steps: usize) -> Result<Self, LossError> {
        let s = Self { alpha0, ratio, steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(LossError::Contract(format!("alpha0 = {} must be positive", self.alpha0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(LossError::Contract(format!("ratio = {} outside (0, 1)", self.ratio)));
        }
        if self.steps == 0 {
            return Err(LossError::Contract("schedule needs at least one step".into()));
        }
        Ok(())
    }

    /// `α_0 r^(k−1)` for the 1-based step `k`.
    pub fn alpha_at(&self, k: usize) -> Result<f64, LossError> {
        if k == 0 || k > self.steps {
            return Err(LossError::Contract(format!("step {k} outside 1..={}", self.steps)));
        }
        Ok(self.alpha0 * self.ratio.powi(k as i32 - 1))
    }
}

/// Value of each loss term at one parameter state. `assignment[i]` is the
/// 0-based output group closest to observation `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_term: f64,
    pub residual_term: f64,
    pub boundary_term: f64,
    pub alpha: f64,
    pub total: f64,
    pub assignment: Vec<usize>,
}

impl LossBreakdown {
    pub fn combine(data_term: f64, residual_term: f64, boundary_term: f64, alpha: f64, assignment: Vec<usize>) -> Self {
        Self {
            data_term,
            residual_term,
            boundary_term,
            alpha,
            total: data_term + alpha * (residual_term + boundary_term),
            assignment,
        }
    }
}

fn check_obs(config: &MlpConfig, obs: &ObservationSet) -> Result<(), LossError> {
    if obs.is_empty() {
        return Err(LossError::Contract("empty observation set".into()));
    }
    if obs.components() != config.components_per_group || obs.dim() != config.input_dim {
        return Err(LossError::Contract(format!(
            "observations are {}-dimensional with {} components, network expects {} and {}",
            obs.dim(),
            obs.components(),
            config.input_dim,
            config.components_per_group
        )));
    }
    Ok(())
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Min-assignment data term and the chosen group per observation.
pub fn data_term<S: Scalar>(
    config: &MlpConfig,
    params: &[S],
    obs: &ObservationSet,
) -> Result<(S, Vec<usize>), LossError> {
    check_obs(config, obs)?;
    let (m_count, c_count) = (config.output_groups, config.components_per_group);
    let mut assignment = Vec::with_capacity(obs.len());
    let mut total = params[0].lift(0.0);
    for i in 0..obs.len() {
        let out = forward_values(config, params, obs.point(i));
        let target = obs.value(i);
        let dists: Vec<S> = (0..m_count)
            .map(|m| {
                let mut d = params[0].lift(0.0);
                for c in 0..c_count {
                    d = d + (out[m * c_count + c] - target[c]).square();
                }
                d
            })
            .collect();
        let primal: Vec<f64> = dists.iter().map(|d| d.value()).collect();
        let chosen = argmin(&primal);
        assignment.push(chosen);
        total = total + S::select(&dists, chosen);
    }
    Ok((total * (1.0 / obs.len() as f64), assignment))
}

/// Mean squared residual over collocation points and output groups; the
/// squares of all equations are summed per (point, group).
pub fn residual_term<S: Scalar>(
    config: &MlpConfig,
    params: &[S],
    lambda: &[S],
    problem: &DeProblem,
    collocation: &[Vec<f64>],
) -> Result<S, LossError> {
    problem.check_lambda(lambda)?;
    if collocation.is_empty() {
        return Err(LossError::Contract("no collocation points".into()));
    }
    let (m_count, c_count) = (config.output_groups, config.components_per_group);
    let mut total = params[0].lift(0.0);
    for x in collocation {
        let jets = forward_jets(config, params, x);
        for m in 0..m_count {
            for r in problem.residual(&jets[m * c_count..(m + 1) * c_count], x, lambda) {
                total = total + r.square();
            }
        }
    }
    Ok(total * (1.0 / (m_count * collocation.len()) as f64))
}

/// Mean squared boundary residual over boundary points and output groups.
pub fn boundary_term<S: Scalar>(
    config: &MlpConfig,
    params: &[S],
    problem: &DeProblem,
    boundary: &[Vec<f64>],
) -> Result<S, LossError> {
    let (m_count, c_count) = (config.output_groups, config.components_per_group);
    let mut total = params[0].lift(0.0);
    if boundary.is_empty() {
        return Ok(total);
    }
    for x in boundary {
        let jets = forward_jets(config, params, x);
        for m in 0..m_count {
            for r in problem.boundary_residual(&jets[m * c_count..(m + 1) * c_count], x)? {
                total = total + r.square();
            }
        }
    }
    Ok(total * (1.0 / (m_count * boundary.len()) as f64))
}

/// Data term on plain values.
pub fn data_loss(params: &NetworkParams, obs: &ObservationSet) -> Result<(f64, Vec<usize>), LossError> {
    data_term(params.config(), params.values(), obs)
}

pub fn residual_loss(
    params: &NetworkParams,
    lambda: &[f64],
    problem: &DeProblem,
    collocation: &[Vec<f64>],
) -> Result<f64, LossError> {
    residual_term(params.config(), params.values(), lambda, problem, collocation)
}

pub fn boundary_loss(
    params: &NetworkParams,
    problem: &DeProblem,
    boundary: &[Vec<f64>],
) -> Result<f64, LossError> {
    boundary_term(params.config(), params.values(), problem, boundary)
}

/// All terms at one state. `obs = None` drops the data term.
pub fn total_loss(
    params: &NetworkParams,
    lambda: &[f64],
    problem: &DeProblem,
    obs: Option<&ObservationSet>,
    collocation: &[Vec<f64>],
    boundary: &[Vec<f64>],
    alpha: f64,
) -> Result<LossBreakdown, LossError> {
    let (data, assignment) = match obs {
        Some(o) => data_loss(params, o)?,
        None => (0.0, Vec::new()),
    };
    let res = residual_loss(params, lambda, problem, collocation)?;
    let bnd = boundary_loss(params, problem, boundary)?;
    Ok(LossBreakdown::combine(data, res, bnd, alpha, assignment))
}

/// [`total_loss`] on the tape. Returns the breakdown and the gradient with
/// respect to the concatenation `[θ, λ]`.
pub fn total_loss_taped(
    params: &NetworkParams,
    lambda: &[f64],
    problem: &DeProblem,
    obs: Option<&ObservationSet>,
    collocation: &[Vec<f64>],
    boundary: &[Vec<f64>],
    alpha: f64,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    let config = params.config();
    let tape = Tape::new();
    let theta = tape.vars(params.values());
    let lam = tape.vars(lambda);
    let (data, assignment) = match obs {
        Some(o) => data_term(config, &theta, o)?,
        None => (tape.constant(0.0), Vec::new()),
    };
    let res = residual_term(config, &theta, &lam, problem, collocation)?;
    let bnd = boundary_term(config, &theta, problem, boundary)?;
    let total = data + (res + bnd) * alpha;
    let grads = tape.backward(total)?;
    let mut grad: Vec<f64> = theta.iter().map(|v| grads.wrt(*v)).collect();
    grad.extend(lam.iter().map(|v| grads.wrt(*v)));
    let breakdown = LossBreakdown::combine(data.value(), res.value(), bnd.value(), alpha, assignment);
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;
    use proptest::prelude::*;

    fn obs_1d(xs: &[f64], us: &[f64]) -> ObservationSet {
        ObservationSet::new(1, 1, xs.to_vec(), us.to_vec()).unwrap()
    }

    /// Output layer only feeds from a zero trunk, so every group is its bias.
    fn constant_outputs(outputs: &[f64]) -> NetworkParams {
        let config = MlpConfig::new(1, vec![1], outputs.len(), 1).unwrap();
        let mut p = NetworkParams::zeros(config.clone()).unwrap();
        let last = *config.layers().last().unwrap();
        p.values_mut()[last.bias()].copy_from_slice(outputs);
        p
    }

    /// u = 2x + 1 through a near-linear tanh unit.
    fn affine_net() -> NetworkParams {
        let config = MlpConfig::new(1, vec![1], 1, 1).unwrap();
        let eps = 1e-6;
        NetworkParams::from_values(config, vec![eps, 0.0, 2.0 / eps, 1.0]).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = HomotopySchedule::default();
        assert_eq!(s.alpha_at(1).unwrap(), 1.0);
        assert_eq!(s.alpha_at(2).unwrap(), 0.6);
        assert!((s.alpha_at(11).unwrap() - 6.0466176e-3).abs() < 1e-10);
        assert!(s.alpha_at(0).is_err());
        assert!(s.alpha_at(12).is_err());
        assert!(HomotopySchedule::new(1.0, 1.0, 3).is_err());
        assert!(HomotopySchedule::new(0.0, 0.5, 3).is_err());
    }

    #[test]
    fn data_loss_examples() {
        let (l, a) = data_loss(&constant_outputs(&[1.0, 3.0]), &obs_1d(&[0.5], &[2.9])).unwrap();
        assert!((l - 0.01).abs() < 1e-12);
        assert_eq!(a, vec![1]);
        let (l, _) = data_loss(&constant_outputs(&[1.0]), &obs_1d(&[0.5], &[2.9])).unwrap();
        assert!((l - 3.61).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_group() {
        let (_, a) = data_loss(&constant_outputs(&[1.0, 3.0, 1.0]), &obs_1d(&[0.2], &[2.0])).unwrap();
        assert_eq!(a, vec![0]);
    }

    #[test]
    fn mismatched_or_empty_observations_rejected() {
        let p = constant_outputs(&[1.0]);
        let empty = ObservationSet::new(1, 1, vec![], vec![]).unwrap();
        assert!(data_loss(&p, &empty).is_err());
        let two = ObservationSet::new(1, 2, vec![0.1], vec![0.0, 1.0]).unwrap();
        assert!(data_loss(&p, &two).is_err());
    }

    #[test]
    fn zero_network_residual_and_boundary() {
        let ex1 = ProblemKind::Ex1BratuQuartic.problem();
        let ex2 = ProblemKind::Ex2QuarticQuadratic.problem();
        for m in [1, 3] {
            let p = NetworkParams::zeros(MlpConfig::new(1, vec![4, 4], m, 1).unwrap()).unwrap();
            for nc in [1, 7] {
                let coll = ex1.collocation_grid(nc);
                assert!((residual_loss(&p, &[1.2], &ex1, &coll).unwrap() - 1.44).abs() < 1e-12);
                assert_eq!(residual_loss(&p, &[18.0], &ex2, &coll).unwrap(), 0.0);
            }
            assert_eq!(boundary_loss(&p, &ex1, &ex1.boundary_points(0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn boundary_loss_of_affine_net() {
        let ex1 = ProblemKind::Ex1BratuQuartic.problem();
        let b = boundary_loss(&affine_net(), &ex1, &[vec![0.0], vec![1.0]]).unwrap();
        assert!((b - 6.5).abs() < 1e-6, "{b}");
    }

    #[test]
    fn total_loss_examples() {
        let ex1 = ProblemKind::Ex1BratuQuartic.problem();
        let p = NetworkParams::zeros(MlpConfig::new(1, vec![3], 1, 1).unwrap()).unwrap();
        let obs = obs_1d(&[0.5], &[0.0]);
        let coll = vec![vec![0.4]];
        let bnd = ex1.boundary_points(0);
        let full = total_loss(&p, &[1.2], &ex1, Some(&obs), &coll, &bnd, 1.0).unwrap();
        assert!((full.total - 1.44).abs() < 1e-12);
        let damped = total_loss(&p, &[1.2], &ex1, Some(&obs), &coll, &bnd, 0.6).unwrap();
        assert!((damped.total - 0.864).abs() < 1e-12);
    }

    #[test]
    fn taped_total_matches_plain() {
        let ex2 = ProblemKind::Ex2QuarticQuadratic.problem();
        let p = NetworkParams::init_he(MlpConfig::new(1, vec![5, 4], 3, 1).unwrap(), 2).unwrap();
        let obs = obs_1d(&[0.1, 0.5, 0.9], &[1.0, -2.0, 0.3]);
        let coll = ex2.collocation_grid(6);
        let bnd = ex2.boundary_points(0);
        let plain = total_loss(&p, &[17.0], &ex2, Some(&obs), &coll, &bnd, 0.3).unwrap();
        let (taped, _) = total_loss_taped(&p, &[17.0], &ex2, Some(&obs), &coll, &bnd, 0.3).unwrap();
        assert_eq!(plain, taped);
    }

    fn random_instance(seed: u64, kind: ProblemKind, m: usize) -> (NetworkParams, Vec<f64>, ObservationSet, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        use rand::{Rng, SeedableRng};
        let problem = kind.problem();
        let d = problem.dim();
        let c = problem.components();
        let config = MlpConfig::new(d, vec![4, 3], m, c).unwrap();
        let params = NetworkParams::init_he(config, seed).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = 4;
        let points: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let values: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obs = ObservationSet::new(d, c, points, values).unwrap();
        let lambda: Vec<f64> = problem.reference_lambda().iter().map(|l| l * rng.random_range(0.5..1.5)).collect();
        let coll = problem.collocation_grid(3);
        let bnd = problem.boundary_points(2);
        (params, lambda, obs, coll, bnd)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn assignment_ignores_alpha(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let (p, lam, obs, coll, bnd) = random_instance(seed, ProblemKind::Ex1BratuQuartic, 3);
            let problem = ProblemKind::Ex1BratuQuartic.problem();
            let a = total_loss(&p, &lam, &problem, Some(&obs), &coll, &bnd, 0.7).unwrap();
            let b = total_loss(&p, &lam, &problem, Some(&obs), &coll, &bnd, 0.7 * scale).unwrap();
            prop_assert_eq!(a.assignment, b.assignment);
        }

        #[test]
        fn single_group_data_loss_is_mse(seed in 0u64..1000) {
            let (p, _, obs, _, _) = random_instance(seed, ProblemKind::Ex2QuarticQuadratic, 1);
            let (l, _) = data_loss(&p, &obs).unwrap();
            let mse = (0..obs.len())
                .map(|i| (p.forward(obs.point(i)).unwrap()[0] - obs.value(i)[0]).powi(2))
                .sum::<f64>() / obs.len() as f64;
            prop_assert!((l - mse).abs() <= 1e-14 * mse.max(1.0));
        }

        #[test]
        fn schedule_is_monotone(alpha0 in 1e-3f64..1e3, ratio in 0.01f64..0.99, steps in 2usize..30) {
            let s = HomotopySchedule::new(alpha0, ratio, steps).unwrap();
            for k in 1..steps {
                prop_assert!(s.alpha_at(k + 1).unwrap() < s.alpha_at(k).unwrap());
            }
        }

        #[test]
        fn breakdown_recombines(seed in 0u64..1000, alpha in 1e-4f64..2.0) {
            let (p, lam, obs, coll, bnd) = random_instance(seed, ProblemKind::GrayScottSteady, 2);
            let problem = ProblemKind::GrayScottSteady.problem();
            let b = total_loss(&p, &lam, &problem, Some(&obs), &coll, &bnd, alpha).unwrap();
            prop_assert_eq!(b.total, b.data_term + alpha * (b.residual_term + b.boundary_term));
            prop_assert!(b.assignment.iter().all(|&a| a < 2));
        }

        #[test]
        fn gradient_matches_central_differences(seed in 0u64..1000, kind_idx in 0usize..3) {
            let kind = ProblemKind::ALL[kind_idx];
            let (p, lam, obs, coll, bnd) = random_instance(seed, kind, 2);
            let problem = kind.problem();
            let alpha = 0.6;
            let (base, grad) = total_loss_taped(&p, &lam, &problem, Some(&obs), &coll, &bnd, alpha).unwrap();
            let n_theta = p.values().len();
            let eval = |theta: &[f64], l: &[f64]| {
                let q = NetworkParams::from_values(p.config().clone(), theta.to_vec()).unwrap();
                total_loss(&q, l, &problem, Some(&obs), &coll, &bnd, alpha).unwrap()
            };
            for k in 0..n_theta + lam.len() {
                let mut theta = p.values().to_vec();
                let mut l = lam.clone();
                let h = if k < n_theta { 1e-5 } else { 1e-5 * lam[k - n_theta].abs().max(1e-8) };
                let bump = |theta: &mut Vec<f64>, l: &mut Vec<f64>, d: f64| {
                    if k < n_theta { theta[k] += d } else { l[k - n_theta] += d }
                };
                bump(&mut theta, &mut l, h);
                let up = eval(&theta, &l);
                bump(&mut theta, &mut l, -2.0 * h);
                let down = eval(&theta, &l);
                // skip coordinates where the argmin flips inside the stencil
                if up.assignment != base.assignment || down.assignment != base.assignment {
                    continue;
                }
                let fd = (up.total - down.total) / (2.0 * h);
                let err = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
                prop_assert!(err <= 1e-5, "coord {}: fd {} vs {}", k, fd, grad[k]);
            }
        }
    }
}
