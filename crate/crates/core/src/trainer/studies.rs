//! M-selection sweep and initialization-robustness study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_homotopy_process, run_inverse_pipeline, LambdaInit, TrainConfig, TrainError};
use crate::oracle::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub lambda: Vec<f64>,
    pub err: Vec<f64>,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    /// Set when the run for this M failed; the numbers are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub recommended: Option<usize>,
}

/// Smallest M after which every further increment improves the train loss
/// by less than `factor`. Losses at or below `floor` count as converged, so
/// optimisation noise there cannot move the recommendation. Failed rows
/// are skipped.
pub fn recommend_m(rows: &[SweepRow], factor: f64, floor: f64) -> Option<usize> {
    let ok: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.failure.is_none() && r.train_loss.is_finite())
        .collect();
    (0..ok.len())
        .find(|&i| {
            ok[i + 1..].iter().zip(&ok[i..]).all(|(next, prev)| {
                prev.train_loss <= floor || next.train_loss * factor > prev.train_loss
            })
        })
        .map(|i| ok[i].m)
}

/// Loss level below which M-to-M improvements are treated as noise.
pub const SWEEP_LOSS_FLOOR: f64 = 1e-7;

/// Runs the full pipeline once per M. Rows come back in `m_range` order
/// regardless of how many workers ran them.
pub fn m_selection_sweep(
    cfg: &TrainConfig,
    obs: &ObservationSet,
    test: Option<&ObservationSet>,
    m_range: &[usize],
    workers: usize,
) -> Result<SweepOutcome, TrainError> {
    if m_range.is_empty() || m_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::Config("M range must be nonempty and strictly ascending".into()));
    }
    let one = |m: usize| {
        let mut c = cfg.clone();
        c.output_groups = m;
        match run_inverse_pipeline(&c, obs, test) {
            Ok(out) => {
                let last = out.record.last().cloned();
                SweepRow {
                    m,
                    err: last.as_ref().map(|r| r.err.clone()).unwrap_or_default(),
                    train_loss: last.as_ref().map_or(f64::NAN, |r| r.train_loss),
                    test_loss: last.as_ref().and_then(|r| r.test_loss),
                    lambda: out.lambda,
                    failure: None,
                }
            }
            Err(e) => {
                log::warn!("M = {m} failed: {e}");
                SweepRow {
                    m,
                    lambda: Vec::new(),
                    err: Vec::new(),
                    train_loss: f64::NAN,
                    test_loss: None,
                    failure: Some(e.to_string()),
                }
            }
        }
    };
    let rows = run_ordered(m_range, workers, one)?;
    let recommended = recommend_m(&rows, 10.0, SWEEP_LOSS_FLOOR);
    Ok(SweepOutcome { rows, recommended })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub lambda0: Vec<f64>,
    /// λ at the end of each homotopy step.
    pub trajectory: Vec<Vec<f64>>,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessOutcome {
    pub trials: Vec<TrialResult>,
    pub tolerance: f64,
}

impl RobustnessOutcome {
    pub fn converged_fraction(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.converged).count() as f64 / self.trials.len() as f64
    }
}

/// One homotopy process per λ₀ drawn from `distribution`; trial `i` uses
/// seed `cfg.lambda_seed + i`. A trial converges when every component ends
/// within `tolerance` of the ground truth. Diverged trials count as not
/// converged.
pub fn robustness_study(
    cfg: &TrainConfig,
    obs: &ObservationSet,
    trials: usize,
    distribution: &LambdaInit,
    tolerance: f64,
    workers: usize,
) -> Result<RobustnessOutcome, TrainError> {
    if trials == 0 {
        return Err(TrainError::Config("trials must be >= 1".into()));
    }
    let truth = cfg
        .lambda_true
        .clone()
        .ok_or_else(|| TrainError::Config("robustness study needs lambda_true".into()))?;
    cfg.validate()?;
    let problem = cfg.problem();
    let init = cfg.initial_params()?;
    let indices: Vec<usize> = (0..trials).collect();
    let one = |trial: usize| {
        let mut lambda0 = match distribution.sample(cfg.lambda_seed.wrapping_add(trial as u64)) {
            Ok(l) => l,
            Err(e) => return Err(e),
        };
        problem.project_lambda(&mut lambda0);
        Ok(match run_homotopy_process(cfg, &init, &lambda0, obs, None, 1) {
            Ok(out) => {
                let converged = out
                    .lambda
                    .iter()
                    .zip(&truth)
                    .all(|(l, t)| (l - t).abs() <= tolerance);
                TrialResult {
                    trial,
                    trajectory: out.record.rows.iter().map(|r| r.lambda.clone()).collect(),
                    lambda0,
                    converged,
                    failure: None,
                }
            }
            Err(e) => TrialResult {
                trial,
                lambda0,
                trajectory: Vec::new(),
                converged: false,
                failure: Some(e.to_string()),
            },
        })
    };
    let results = run_ordered(&indices, workers, one)?;
    let trials = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RobustnessOutcome { trials, tolerance })
}

/// Maps `f` over `items` on a pool of `workers` threads (1 runs inline) and
/// returns results in input order.
pub(crate) fn run_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, TrainError>
where
    T: Sync + Copy,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if workers <= 1 {
        return Ok(items.iter().map(|&i| f(i)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(|&i| f(i)).collect()))
}
