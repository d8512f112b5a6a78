//! Training orchestration: the homotopy loop, λ-frozen forward mode, the
//! two-process refinement and the studies built on them.

mod discover;
mod studies;

pub use discover::{discover_solutions, DiscoveryOptions, DiscoveryOutcome};
pub use studies::{
    m_selection_sweep, recommend_m, robustness_study, RobustnessOutcome, SweepOutcome, SweepRow, SWEEP_LOSS_FLOOR,
    TrialResult,
};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::io::Checkpoint;
use crate::loss::{data_term, HomotopyObjective, HomotopySchedule, LossError};
use crate::network::{MlpConfig, NetworkError, NetworkParams};
use crate::optimizer::{AdamHyper, AdamState, OptimizerError};
use crate::oracle::ObservationSet;
use crate::problems::{DeProblem, ProblemKind};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{0}")]
    Diverged(Box<DivergenceReport>),
}

/// Where and how a run diverged, with the last finite state.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub process: usize,
    pub k: usize,
    pub iteration: usize,
    pub reason: String,
    pub last_params: Vec<f64>,
    pub last_lambda: Vec<f64>,
    /// Rows completed before the failure.
    pub record: TrainingRecord,
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training diverged in process {} at step k = {}, iteration {}: {}",
            self.process, self.k, self.iteration, self.reason
        )
    }
}

/// Starting value of λ: fixed, or drawn per component from a normal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LambdaInit {
    Fixed { values: Vec<f64> },
    Normal { mean: Vec<f64>, std: Vec<f64> },
}

impl LambdaInit {
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>, TrainError> {
        match self {
            LambdaInit::Fixed { values } => Ok(values.clone()),
            LambdaInit::Normal { mean, std } => {
                if mean.len() != std.len() {
                    return Err(TrainError::Config("lambda mean and std lengths differ".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(TrainError::Config("lambda std must be finite and >= 0".into()));
                }
                mean.iter()
                    .zip(std)
                    .map(|(&m, &s)| {
                        let d = Normal::new(m, s).map_err(|e| TrainError::Config(e.to_string()))?;
                        Ok(d.sample(&mut rng))
                    })
                    .collect()
            }
        }
    }
}

/// Early exit from a homotopy step once the loss stops moving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauExit {
    pub window: usize,
    pub rel_change: f64,
}

impl Default for PlateauExit {
    fn default() -> Self {
        Self {
            window: 500,
            rel_change: 1e-9,
        }
    }
}

/// Step decay of every learning rate inside each homotopy step: after a
/// fraction `f` of the T iterations has passed, for each `f` in
/// `milestones`, the rates are multiplied by `factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            milestones: vec![0.8, 0.9],
            factor: 0.1,
        }
    }
}

impl LrDecay {
    fn validate(&self) -> Result<(), TrainError> {
        let ok = self.factor > 0.0
            && self.factor <= 1.0
            && self.milestones.iter().all(|m| (0.0..=1.0).contains(m))
            && self.milestones.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!(
                "lr_decay needs increasing milestones in [0, 1] and a factor in (0, 1], got {self:?}"
            )))
        }
    }

    /// Rate multiplier at `iteration` of `total`.
    pub fn scale(&self, iteration: usize, total: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| iteration as f64 >= m * total as f64)
            .count();
        self.factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub hidden_widths: Vec<usize>,
    /// M, the number of output groups.
    pub output_groups: usize,
    pub schedule: HomotopySchedule,
    /// Adam iterations per homotopy step (T).
    pub iterations: usize,
    pub lambda_init: LambdaInit,
    /// Ground truth for the error columns, when known.
    pub lambda_true: Option<Vec<f64>>,
    pub network_seed: u64,
    pub lambda_seed: u64,
    /// Collocation points per axis.
    pub collocation: usize,
    /// Boundary points per side of the square (2D only).
    pub boundary_per_side: usize,
    /// 1 or 2 inverse processes.
    pub processes: usize,
    pub adam: AdamHyper,
    /// Per-component learning rates for λ; defaults to `adam.lr`.
    pub lambda_lr: Option<Vec<f64>>,
    /// Fresh Adam moments at every homotopy step.
    pub reset_moments: bool,
    /// Without a decay, Adam's fixed step size leaves the loss on a noise
    /// floor around 1e-6.
    pub lr_decay: Option<LrDecay>,
    pub plateau: Option<PlateauExit>,
    /// Write real timings into the record; off keeps records reproducible
    /// byte for byte.
    pub record_wall_time: bool,
}

impl TrainConfig {
    /// Defaults for `kind`.
    pub fn for_problem(kind: ProblemKind) -> Self {
        let problem = kind.problem();
        let two_d = problem.dim() == 2;
        Self {
            problem: kind,
            hidden_widths: if two_d { vec![128; 6] } else { vec![30; 3] },
            output_groups: match kind {
                ProblemKind::Ex1BratuQuartic => 2,
                ProblemKind::Ex2QuarticQuadratic => 7,
                ProblemKind::GrayScottSteady => 4,
            },
            // Example 2's residual is ~1e3 times Example 1's, so α must fall
            // further before the data term can pull the groups apart.
            schedule: HomotopySchedule {
                steps: if kind == ProblemKind::Ex2QuarticQuadratic { 21 } else { 11 },
                ..HomotopySchedule::default()
            },
            iterations: if two_d { 20_000 } else { 5_000 },
            lambda_init: LambdaInit::Fixed {
                values: problem.default_lambda_init(),
            },
            lambda_true: Some(problem.reference_lambda()),
            network_seed: 0,
            lambda_seed: 0,
            collocation: if two_d { 32 } else { 200 },
            boundary_per_side: 32,
            processes: if kind == ProblemKind::Ex1BratuQuartic { 1 } else { 2 },
            adam: AdamHyper::default(),
            lambda_lr: if two_d {
                Some(vec![1e-5, 1e-5, 1e-4, 1e-4])
            } else {
                None
            },
            reset_moments: true,
            lr_decay: Some(LrDecay::default()),
            plateau: None,
            record_wall_time: false,
        }
    }

    pub fn problem(&self) -> DeProblem {
        self.problem.problem()
    }

    pub fn network(&self) -> Result<MlpConfig, TrainError> {
        let p = self.problem();
        Ok(MlpConfig::new(
            p.dim(),
            self.hidden_widths.clone(),
            self.output_groups,
            p.components(),
        )?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let p = self.problem();
        self.network()?;
        self.schedule.validate()?;
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.iterations == 0 {
            return bad("iterations per step must be >= 1".into());
        }
        if let Some(d) = &self.lr_decay {
            d.validate()?;
        }
        if !(1..=2).contains(&self.processes) {
            return bad(format!("processes = {} (must be 1 or 2)", self.processes));
        }
        if self.collocation == 0 || (p.dim() == 2 && self.boundary_per_side == 0) {
            return bad("point counts must be positive".into());
        }
        let lam_len = match &self.lambda_init {
            LambdaInit::Fixed { values } => values.len(),
            LambdaInit::Normal { mean, std } => {
                if mean.len() != std.len() {
                    return bad("lambda mean and std lengths differ".into());
                }
                mean.len()
            }
        };
        if lam_len != p.lambda_dim() {
            return bad(format!("lambda_init has {lam_len} entries, {} expects {}", p.name(), p.lambda_dim()));
        }
        for (name, v) in [("lambda_true", &self.lambda_true), ("lambda_lr", &self.lambda_lr)] {
            if let Some(v) = v {
                if v.len() != p.lambda_dim() {
                    return bad(format!("{name} has {} entries, expected {}", v.len(), p.lambda_dim()));
                }
            }
        }
        Ok(())
    }

    pub fn collocation_points(&self) -> Vec<Vec<f64>> {
        self.problem().collocation_grid(self.collocation)
    }

    pub fn boundary_points(&self) -> Vec<Vec<f64>> {
        self.problem().boundary_points(self.boundary_per_side)
    }

    pub fn initial_params(&self) -> Result<NetworkParams, TrainError> {
        Ok(NetworkParams::init_he(self.network()?, self.network_seed)?)
    }

    pub fn initial_lambda(&self) -> Result<Vec<f64>, TrainError> {
        let mut l = self.lambda_init.sample(self.lambda_seed)?;
        self.problem().project_lambda(&mut l);
        Ok(l)
    }
}

/// One row per (process, homotopy step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub process: usize,
    pub k: usize,
    pub alpha: f64,
    pub lambda: Vec<f64>,
    /// `|λ_k − λ_true|`, empty without ground truth.
    pub err: Vec<f64>,
    pub train_loss: f64,
    /// None when no test set was given.
    pub test_loss: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub lambda_labels: Vec<String>,
    pub rows: Vec<RecordRow>,
}

impl TrainingRecord {
    pub fn new(problem: &DeProblem) -> Self {
        Self {
            lambda_labels: problem.lambda_labels().iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&RecordRow> {
        self.rows.last()
    }

    pub fn extend(&mut self, other: TrainingRecord) {
        self.rows.extend(other.rows);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    pub params: NetworkParams,
    pub lambda: Vec<f64>,
    pub record: TrainingRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub params: NetworkParams,
    pub lambda: Vec<f64>,
    /// Rows of the inverse processes.
    pub record: TrainingRecord,
    /// λ-frozen refinement between the two processes.
    pub forward: Option<ProcessOutcome>,
}

/// Test loss: min-assignment data term on held-out observations.
pub fn test_loss(params: &NetworkParams, test: &ObservationSet) -> Result<f64, TrainError> {
    Ok(data_term(params.config(), params.values(), test)?.0)
}

/// Called with the state at the end of every homotopy step.
pub type StepObserver<'a> = &'a mut dyn FnMut(&Checkpoint);

/// Shared loop of the inverse and forward modes.
struct Homotopy<'a> {
    cfg: &'a TrainConfig,
    objective: HomotopyObjective,
    test: Option<&'a ObservationSet>,
    process: usize,
    train_lambda: bool,
}

impl Homotopy<'_> {
    fn run(
        &self,
        init: &NetworkParams,
        init_lambda: &[f64],
        observer: StepObserver<'_>,
    ) -> Result<ProcessOutcome, TrainError> {
        let cfg = self.cfg;
        let problem = cfg.problem();
        problem.check_lambda(init_lambda).map_err(LossError::from)?;
        if init.config() != self.objective.config() {
            return Err(TrainError::Config("initial parameters do not match the network".into()));
        }
        let n_theta = init.values().len();
        let n_lambda = init_lambda.len();
        let dim = if self.train_lambda { n_theta + n_lambda } else { n_theta };
        let mut x: Vec<f64> = init.values().iter().chain(init_lambda).copied().collect();
        let mut grad = vec![0.0; n_theta + n_lambda];
        let base_rates: Vec<f64> = match (&cfg.lambda_lr, self.train_lambda) {
            (Some(lr), true) => std::iter::repeat_n(cfg.adam.lr, n_theta)
                .chain(lr.iter().copied())
                .collect(),
            _ => vec![cfg.adam.lr; dim],
        };
        let mut rates = base_rates.clone();
        let mut rate_scale = 1.0;
        let mut record = TrainingRecord::new(&problem);
        let start = Instant::now();
        let mut adam = AdamState::new(dim, cfg.adam);
        for k in 1..=cfg.schedule.steps {
            let alpha = cfg.schedule.alpha_at(k)?;
            if cfg.reset_moments || k == 1 {
                adam = AdamState::new(dim, cfg.adam);
            }
            let mut recent: std::collections::VecDeque<f64> = Default::default();
            for iteration in 0..cfg.iterations {
                let scale = cfg.lr_decay.as_ref().map_or(1.0, |d| d.scale(iteration, cfg.iterations));
                if scale != rate_scale {
                    rate_scale = scale;
                    rates.iter_mut().zip(&base_rates).for_each(|(r, b)| *r = b * scale);
                }
                grad.iter_mut().for_each(|g| *g = 0.0);
                let (theta, lambda) = x.split_at(n_theta);
                let (g_theta, g_lambda) = grad.split_at_mut(n_theta);
                let diverged = |reason: String, record: &TrainingRecord, x: &[f64]| {
                    TrainError::Diverged(Box::new(DivergenceReport {
                        process: self.process,
                        k,
                        iteration,
                        reason,
                        last_params: x[..n_theta].to_vec(),
                        last_lambda: x[n_theta..].to_vec(),
                        record: record.clone(),
                    }))
                };
                let b = self
                    .objective
                    .evaluate(theta, lambda, alpha, Some((g_theta, g_lambda)))?;
                if !b.total.is_finite() {
                    return Err(diverged(format!("non-finite loss {}", b.total), &record, &x));
                }
                let before = x.clone();
                if let Err(e) = adam.step_with_rates(&grad[..dim], &mut x[..dim], Some(&rates)) {
                    return Err(diverged(e.to_string(), &record, &before));
                }
                problem.project_lambda(&mut x[n_theta..]);
                if let Some(p) = cfg.plateau {
                    recent.push_back(b.total);
                    if recent.len() > p.window {
                        let old = recent.pop_front().unwrap_or(b.total);
                        if (old - b.total).abs() <= p.rel_change * old.abs() {
                            break;
                        }
                    }
                }
            }
            let (theta, lambda) = x.split_at(n_theta);
            let end = self.objective.evaluate(theta, lambda, alpha, None)?;
            if !end.total.is_finite() {
                return Err(TrainError::Diverged(Box::new(DivergenceReport {
                    process: self.process,
                    k,
                    iteration: cfg.iterations,
                    reason: format!("non-finite loss {} at end of step", end.total),
                    last_params: theta.to_vec(),
                    last_lambda: lambda.to_vec(),
                    record,
                })));
            }
            let params = NetworkParams::from_values(init.config().clone(), theta.to_vec())?;
            observer(&Checkpoint {
                process: self.process,
                k,
                params: params.clone(),
                lambda: lambda.to_vec(),
                adam: Some(adam.clone()),
            });
            let test = match self.test {
                Some(t) => Some(test_loss(&params, t)?),
                None => None,
            };
            let err = cfg
                .lambda_true
                .as_ref()
                .map(|t| lambda.iter().zip(t).map(|(a, b)| (a - b).abs()).collect())
                .unwrap_or_default();
            if let Some(prev) = record.last() {
                if cfg.problem == ProblemKind::Ex1BratuQuartic && cfg.output_groups >= 2 && end.total > prev.train_loss {
                    log::warn!(
                        "train loss rose from {:e} to {:e} at step {k} of process {}",
                        prev.train_loss,
                        end.total,
                        self.process
                    );
                }
            }
            record.rows.push(RecordRow {
                process: self.process,
                k,
                alpha,
                lambda: lambda.to_vec(),
                err,
                train_loss: end.total,
                test_loss: test,
                wall_time_s: if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
            });
            log::info!(
                "process {} step {k}/{}: alpha {alpha:.4e} lambda {:?} loss {:.3e}",
                self.process,
                cfg.schedule.steps,
                lambda,
                end.total
            );
        }
        let params = NetworkParams::from_values(init.config().clone(), x[..n_theta].to_vec())?;
        Ok(ProcessOutcome {
            params,
            lambda: x[n_theta..].to_vec(),
            record,
        })
    }
}

fn objective_for(cfg: &TrainConfig, obs: &ObservationSet) -> Result<HomotopyObjective, TrainError> {
    Ok(HomotopyObjective::new(
        cfg.network()?,
        cfg.problem(),
        Some(obs),
        &cfg.collocation_points(),
        &cfg.boundary_points(),
    )?)
}

/// One homotopy process with θ and λ trained jointly (`process` labels the
/// record rows).
pub fn run_homotopy_process(
    cfg: &TrainConfig,
    init: &NetworkParams,
    init_lambda: &[f64],
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
    process: usize,
) -> Result<ProcessOutcome, TrainError> {
    run_homotopy_process_observed(cfg, init, init_lambda, obs, test, process, &mut |_| {})
}

pub fn run_homotopy_process_observed(
    cfg: &TrainConfig,
    init: &NetworkParams,
    init_lambda: &[f64],
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
    process: usize,
    observer: StepObserver<'_>,
) -> Result<ProcessOutcome, TrainError> {
    cfg.validate()?;
    Homotopy {
        cfg,
        objective: objective_for(cfg, obs)?,
        test,
        process,
        train_lambda: true,
    }
    .run(init, init_lambda, observer)
}

/// The same loop with λ frozen at `lambda`.
pub fn run_forward_mode(
    cfg: &TrainConfig,
    init: &NetworkParams,
    lambda: &[f64],
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
) -> Result<ProcessOutcome, TrainError> {
    run_forward_mode_observed(cfg, init, lambda, obs, test, &mut |_| {})
}

/// Forward-mode checkpoints carry `process = 0`.
pub fn run_forward_mode_observed(
    cfg: &TrainConfig,
    init: &NetworkParams,
    lambda: &[f64],
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
    observer: StepObserver<'_>,
) -> Result<ProcessOutcome, TrainError> {
    cfg.validate()?;
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(TrainError::Config("frozen lambda must be finite".into()));
    }
    Homotopy {
        cfg,
        objective: objective_for(cfg, obs)?,
        test,
        process: 0,
        train_lambda: false,
    }
    .run(init, lambda, observer)
}

/// One process, or inverse → forward (λ frozen) → inverse when
/// `cfg.processes == 2`.
pub fn run_inverse_pipeline(
    cfg: &TrainConfig,
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
) -> Result<PipelineOutcome, TrainError> {
    run_inverse_pipeline_observed(cfg, obs, test, &mut |_| {})
}

pub fn run_inverse_pipeline_observed(
    cfg: &TrainConfig,
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
    observer: StepObserver<'_>,
) -> Result<PipelineOutcome, TrainError> {
    cfg.validate()?;
    let init = cfg.initial_params()?;
    let lambda0 = cfg.initial_lambda()?;
    let first = run_homotopy_process_observed(cfg, &init, &lambda0, obs, test, 1, &mut *observer)?;
    if cfg.processes == 1 {
        return Ok(PipelineOutcome {
            params: first.params,
            lambda: first.lambda,
            record: first.record,
            forward: None,
        });
    }
    let forward = run_forward_mode_observed(cfg, &first.params, &first.lambda, obs, test, &mut *observer)?;
    let second = run_homotopy_process_observed(cfg, &forward.params, &first.lambda, obs, test, 2, observer)?;
    let mut record = first.record;
    record.extend(second.record);
    Ok(PipelineOutcome {
        params: second.params,
        lambda: second.lambda,
        record,
        forward: Some(forward),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ProblemKind) -> TrainConfig {
        let mut cfg = TrainConfig::for_problem(kind);
        cfg.hidden_widths = vec![6, 6];
        cfg.iterations = 20;
        cfg.schedule.steps = 3;
        cfg.collocation = if kind == ProblemKind::GrayScottSteady { 4 } else { 16 };
        cfg.boundary_per_side = 3;
        cfg.output_groups = 2;
        cfg
    }

    fn obs(kind: ProblemKind) -> ObservationSet {
        let p = kind.problem();
        let (d, c) = (p.dim(), p.components());
        let n = 12;
        let points: Vec<f64> = (0..n * d).map(|i| ((i * 7 % 13) as f64 + 0.5) / 13.0).collect();
        let values: Vec<f64> = (0..n * c).map(|i| 0.1 * ((i * 5 % 9) as f64)).collect();
        ObservationSet::new(d, c, points, values).unwrap()
    }

    #[test]
    fn validation_catches_bad_configs() {
        let good = tiny(ProblemKind::Ex1BratuQuartic);
        assert!(good.validate().is_ok());
        let mut c = good.clone();
        c.processes = 3;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.lambda_init = LambdaInit::Fixed { values: vec![1.0, 2.0] };
        assert!(c.validate().is_err());
        let mut c = good;
        c.lambda_lr = Some(vec![]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn record_shape_and_alpha_column() {
        let cfg = tiny(ProblemKind::Ex1BratuQuartic);
        let o = obs(ProblemKind::Ex1BratuQuartic);
        let out = run_inverse_pipeline(&cfg, &o, Some(&o)).unwrap();
        assert_eq!(out.record.rows.len(), 3);
        for (i, row) in out.record.rows.iter().enumerate() {
            assert_eq!((row.process, row.k), (1, i + 1));
            assert_eq!(row.alpha, cfg.schedule.alpha_at(i + 1).unwrap());
            assert_eq!(row.err, vec![(row.lambda[0] - 1.2).abs()]);
            assert_eq!(row.wall_time_s, 0.0);
            assert!(row.test_loss.is_some_and(f64::is_finite));
        }
        assert_eq!(out.lambda, out.record.last().unwrap().lambda);
    }

    #[test]
    fn warm_start_contract() {
        // Running K steps equals running the first K-1 steps and then one
        // more step started from the recorded end state.
        let mut cfg = tiny(ProblemKind::Ex2QuarticQuadratic);
        cfg.processes = 1;
        let o = obs(ProblemKind::Ex2QuarticQuadratic);
        let full = run_inverse_pipeline(&cfg, &o, None).unwrap();
        let mut short = cfg.clone();
        short.schedule.steps = 2;
        let first = run_inverse_pipeline(&short, &o, None).unwrap();
        assert_eq!(first.record.rows[..], full.record.rows[..2]);
        let mut last = cfg.clone();
        last.schedule = HomotopySchedule::new(cfg.schedule.alpha_at(3).unwrap(), cfg.schedule.ratio, 1).unwrap();
        let tail = run_homotopy_process(&last, &first.params, &first.lambda, &o, None, 1).unwrap();
        assert_eq!(tail.lambda, full.lambda);
        assert_eq!(tail.params, full.params);
    }

    #[test]
    fn deterministic_records() {
        let cfg = tiny(ProblemKind::GrayScottSteady);
        let o = obs(ProblemKind::GrayScottSteady);
        let a = run_inverse_pipeline(&cfg, &o, Some(&o)).unwrap();
        let b = run_inverse_pipeline(&cfg, &o, Some(&o)).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.record.rows.len(), 6);
        assert!(a.forward.is_some());
        assert!(a.record.rows.iter().all(|r| r.lambda[0] >= crate::problems::MIN_DIFFUSION));
    }

    #[test]
    fn observer_sees_every_step_end() {
        let cfg = tiny(ProblemKind::Ex2QuarticQuadratic);
        let o = obs(ProblemKind::Ex2QuarticQuadratic);
        let mut seen = Vec::new();
        let out = run_inverse_pipeline_observed(&cfg, &o, None, &mut |cp| seen.push(cp.clone())).unwrap();
        let tags: Vec<(usize, usize)> = seen.iter().map(|c| (c.process, c.k)).collect();
        assert_eq!(tags, vec![(1, 1), (1, 2), (1, 3), (0, 1), (0, 2), (0, 3), (2, 1), (2, 2), (2, 3)]);
        let last = seen.last().unwrap();
        assert_eq!(last.params, out.params);
        assert_eq!(last.lambda, out.lambda);
        assert_eq!(last.adam.as_ref().unwrap().t, cfg.iterations as u64);
    }

    #[test]
    fn forward_mode_keeps_lambda() {
        let cfg = tiny(ProblemKind::Ex1BratuQuartic);
        let o = obs(ProblemKind::Ex1BratuQuartic);
        let init = cfg.initial_params().unwrap();
        let out = run_forward_mode(&cfg, &init, &[1.3], &o, None).unwrap();
        assert!(out.record.rows.iter().all(|r| r.lambda == vec![1.3]));
        assert_ne!(out.params, init);
        assert!(run_forward_mode(&cfg, &init, &[f64::NAN], &o, None).is_err());
    }

    #[test]
    fn single_process_pipeline_is_one_homotopy_process() {
        let cfg = tiny(ProblemKind::Ex1BratuQuartic);
        let o = obs(ProblemKind::Ex1BratuQuartic);
        let pipe = run_inverse_pipeline(&cfg, &o, None).unwrap();
        let direct = run_homotopy_process(&cfg, &cfg.initial_params().unwrap(), &cfg.initial_lambda().unwrap(), &o, None, 1).unwrap();
        assert_eq!(pipe.record, direct.record);
    }

    #[test]
    fn divergence_is_reported_with_last_state() {
        let mut cfg = tiny(ProblemKind::Ex1BratuQuartic);
        cfg.lambda_init = LambdaInit::Fixed { values: vec![1e300] };
        let o = obs(ProblemKind::Ex1BratuQuartic);
        match run_inverse_pipeline(&cfg, &o, None) {
            Err(TrainError::Diverged(report)) => {
                assert!(report.last_params.iter().all(|v| v.is_finite()));
                assert_eq!(report.process, 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn lr_decay_steps_at_milestones() {
        let d = LrDecay::default();
        assert_eq!(d.scale(0, 100), 1.0);
        assert_eq!(d.scale(79, 100), 1.0);
        assert_eq!(d.scale(80, 100), 0.1);
        assert_eq!(d.scale(95, 100), 0.1 * 0.1);
        let mut c = TrainConfig::for_problem(ProblemKind::Ex1BratuQuartic);
        c.lr_decay = Some(LrDecay { milestones: vec![0.9, 0.5], factor: 0.1 });
        assert!(c.validate().is_err());
        c.lr_decay = Some(LrDecay { milestones: vec![0.5], factor: 0.0 });
        assert!(c.validate().is_err());
    }

    #[test]
    fn lambda_init_sampling() {
        let n = LambdaInit::Normal { mean: vec![0.0], std: vec![10.0] };
        assert_eq!(n.sample(3).unwrap(), n.sample(3).unwrap());
        assert_ne!(n.sample(3).unwrap(), n.sample(4).unwrap());
        let bad = LambdaInit::Normal { mean: vec![0.0], std: vec![-1.0] };
        assert!(bad.sample(0).is_err());
    }
}
