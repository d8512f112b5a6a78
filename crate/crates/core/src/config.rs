//! Experiment configuration.
//!
//! An [`ExperimentConfig`] is the JSON document users write: every field
//! except `problem` is optional and unknown keys are rejected. Resolving it
//! fills in the problem defaults and yields a [`ResolvedConfig`], whose
//! [`echo`](ResolvedConfig::echo) is again a complete `ExperimentConfig`
//! that resolves to itself.

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};

use crate::loss::HomotopySchedule;
use crate::optimizer::AdamHyper;
use crate::oracle::{
    oracle_table, reference_subset, sample_observations, ObservationSet, OracleError, OracleOptions, SolutionTable,
};
use crate::problems::ProblemKind;
use crate::trainer::{DiscoveryOptions, LambdaInit, LrDecay, PlateauExit, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Distinguishes an absent key (`None`) from an explicit `null`
/// (`Some(None)`).
fn explicit<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden_widths: Option<Vec<usize>>,
    pub output_groups: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub iterations: Option<usize>,
    pub processes: Option<usize>,
    pub lambda_init: Option<LambdaInit>,
    pub lambda_seed: Option<u64>,
    /// Absent: the data λ. `null`: no ground truth.
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub lambda_true: Option<Option<Vec<f64>>>,
    pub collocation: Option<usize>,
    pub boundary_per_side: Option<usize>,
    pub adam: Option<AdamHyper>,
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub lambda_lr: Option<Option<Vec<f64>>>,
    pub reset_moments: Option<bool>,
    /// `null` turns the decay off.
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<Option<LrDecay>>,
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub plateau: Option<Option<PlateauExit>>,
    pub record_wall_time: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Parameters the observations are generated at.
    pub lambda: Option<Vec<f64>>,
    pub n_obs: Option<usize>,
    /// Size of the independent test set; 0 disables it.
    pub n_test: Option<usize>,
    pub seed: Option<u64>,
    pub test_seed: Option<u64>,
    /// Indices into the oracle table (sorted by u(0) in 1D).
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub subset: Option<Option<Vec<usize>>>,
    /// Read observations from this CSV instead of generating them.
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub observations: Option<Option<PathBuf>>,
    #[serde(deserialize_with = "explicit", skip_serializing_if = "Option::is_none")]
    pub test_observations: Option<Option<PathBuf>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudiesSection {
    pub m_range: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub lambda_distribution: Option<LambdaInit>,
    pub tolerance: Option<f64>,
    pub discovery: Option<DiscoveryOptions>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub schedule: Option<HomotopySchedule>,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub oracle: Option<OracleOptions>,
    #[serde(default)]
    pub studies: StudiesSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub lambda: Vec<f64>,
    pub n_obs: usize,
    pub n_test: usize,
    pub seed: u64,
    pub test_seed: u64,
    pub subset: Option<Vec<usize>>,
    pub observations: Option<PathBuf>,
    pub test_observations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudiesConfig {
    pub m_range: Vec<usize>,
    pub trials: usize,
    pub lambda_distribution: LambdaInit,
    pub tolerance: f64,
    pub discovery: DiscoveryOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub oracle: OracleOptions,
    pub studies: StudiesConfig,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// A document with nothing but the problem set.
    pub fn minimal(problem: ProblemKind) -> Self {
        Self {
            problem,
            network: Default::default(),
            schedule: None,
            trainer: Default::default(),
            data: Default::default(),
            oracle: None,
            studies: Default::default(),
            output: Default::default(),
            workers: None,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let kind = self.problem;
        let problem = kind.problem();
        let mut train = TrainConfig::for_problem(kind);
        let n = &self.network;
        let t = &self.trainer;
        let d = &self.data;
        if let Some(v) = &n.hidden_widths {
            train.hidden_widths = v.clone();
        }
        set(&mut train.output_groups, n.output_groups);
        set(&mut train.network_seed, n.seed);
        set(&mut train.schedule, self.schedule);
        set(&mut train.iterations, t.iterations);
        set(&mut train.processes, t.processes);
        if let Some(v) = &t.lambda_init {
            train.lambda_init = v.clone();
        }
        set(&mut train.lambda_seed, t.lambda_seed);
        set(&mut train.collocation, t.collocation);
        set(&mut train.boundary_per_side, t.boundary_per_side);
        set(&mut train.adam, t.adam);
        if let Some(v) = &t.lambda_lr {
            train.lambda_lr = v.clone();
        }
        set(&mut train.reset_moments, t.reset_moments);
        if let Some(v) = &t.lr_decay {
            train.lr_decay = v.clone();
        }
        if let Some(v) = t.plateau {
            train.plateau = v;
        }
        set(&mut train.record_wall_time, t.record_wall_time);

        let seed = d.seed.unwrap_or(1);
        let data = DataConfig {
            lambda: d.lambda.clone().unwrap_or_else(|| problem.reference_lambda()),
            n_obs: d.n_obs.unwrap_or(match kind {
                ProblemKind::Ex1BratuQuartic => 80,
                ProblemKind::Ex2QuarticQuadratic => 210,
                ProblemKind::GrayScottSteady => 1000,
            }),
            n_test: d.n_test.unwrap_or(40),
            seed,
            test_seed: d.test_seed.unwrap_or(seed.wrapping_add(1)),
            subset: d.subset.clone().flatten(),
            observations: d.observations.clone().flatten(),
            test_observations: d.test_observations.clone().flatten(),
        };
        train.lambda_true = match &t.lambda_true {
            Some(v) => v.clone(),
            None => Some(data.lambda.clone()),
        };
        problem
            .check_lambda(&data.lambda)
            .map_err(|e| ConfigError::Invalid(format!("data.lambda: {e}")))?;
        if data.n_obs == 0 {
            return Err(ConfigError::Invalid("data.n_obs must be >= 1".into()));
        }
        train.validate()?;

        let s = &self.studies;
        let studies = StudiesConfig {
            m_range: s.m_range.clone().unwrap_or_else(|| {
                let m = train.output_groups;
                (m.saturating_sub(2).max(1)..=m + 1).collect()
            }),
            trials: s.trials.unwrap_or(50),
            lambda_distribution: s.lambda_distribution.clone().unwrap_or_else(|| LambdaInit::Normal {
                mean: vec![0.0; problem.lambda_dim()],
                std: vec![10.0; problem.lambda_dim()],
            }),
            tolerance: s.tolerance.unwrap_or(0.01),
            discovery: s.discovery.clone().unwrap_or_else(|| DiscoveryOptions {
                output_groups: train.output_groups,
                ..Default::default()
            }),
        };
        if studies.m_range.is_empty() || studies.m_range.windows(2).any(|w| w[0] >= w[1]) || studies.m_range[0] == 0 {
            return Err(ConfigError::Invalid("studies.m_range must be nonempty, positive and ascending".into()));
        }
        if !(studies.tolerance > 0.0) {
            return Err(ConfigError::Invalid("studies.tolerance must be positive".into()));
        }
        Ok(ResolvedConfig {
            train,
            data,
            oracle: self.oracle.clone().unwrap_or_else(|| OracleOptions::for_problem(kind)),
            studies,
            output_dir: self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            workers: self.workers.unwrap_or(1).max(1),
        })
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl ResolvedConfig {
    /// Complete document that resolves back to `self`.
    pub fn echo(&self) -> ExperimentConfig {
        let t = &self.train;
        ExperimentConfig {
            problem: t.problem,
            network: NetworkSection {
                hidden_widths: Some(t.hidden_widths.clone()),
                output_groups: Some(t.output_groups),
                seed: Some(t.network_seed),
            },
            schedule: Some(t.schedule),
            trainer: TrainerSection {
                iterations: Some(t.iterations),
                processes: Some(t.processes),
                lambda_init: Some(t.lambda_init.clone()),
                lambda_seed: Some(t.lambda_seed),
                lambda_true: Some(t.lambda_true.clone()),
                collocation: Some(t.collocation),
                boundary_per_side: Some(t.boundary_per_side),
                adam: Some(t.adam),
                lambda_lr: Some(t.lambda_lr.clone()),
                reset_moments: Some(t.reset_moments),
                lr_decay: Some(t.lr_decay.clone()),
                plateau: Some(t.plateau),
                record_wall_time: Some(t.record_wall_time),
            },
            data: DataSection {
                lambda: Some(self.data.lambda.clone()),
                n_obs: Some(self.data.n_obs),
                n_test: Some(self.data.n_test),
                seed: Some(self.data.seed),
                test_seed: Some(self.data.test_seed),
                subset: Some(self.data.subset.clone()),
                observations: Some(self.data.observations.clone()),
                test_observations: Some(self.data.test_observations.clone()),
            },
            oracle: Some(self.oracle.clone()),
            studies: StudiesSection {
                m_range: Some(self.studies.m_range.clone()),
                trials: Some(self.studies.trials),
                lambda_distribution: Some(self.studies.lambda_distribution.clone()),
                tolerance: Some(self.studies.tolerance),
                discovery: Some(self.studies.discovery.clone()),
            },
            output: OutputSection {
                dir: Some(self.output_dir.clone()),
            },
            workers: Some(self.workers),
        }
    }

    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(&self.echo()).expect("config serializes")
    }

    /// Overrides every seed with `seed`; the test set uses `seed + 1`.
    pub fn reseed(&mut self, seed: u64) {
        self.train.network_seed = seed;
        self.train.lambda_seed = seed;
        self.data.seed = seed;
        self.data.test_seed = seed.wrapping_add(1);
        self.studies.discovery.seed = seed;
    }

    /// Ground-truth table at the data λ.
    pub fn oracle_table(&self) -> Result<SolutionTable, ConfigError> {
        Ok(oracle_table(self.train.problem, &self.data.lambda, &self.oracle)?)
    }

    /// The configured subset, or the default one for the problem.
    pub fn subset_for(&self, table: &SolutionTable) -> Vec<usize> {
        self.data.subset.clone().unwrap_or_else(|| reference_subset(table))
    }

    /// Training and test observations drawn from `table`.
    pub fn sample(&self, table: &SolutionTable) -> Result<(ObservationSet, Option<ObservationSet>), ConfigError> {
        let subset = self.subset_for(table);
        let obs = sample_observations(table, self.data.n_obs, self.data.seed, Some(&subset))?;
        let test = match self.data.n_test {
            0 => None,
            n => Some(sample_observations(table, n, self.data.test_seed, Some(&subset))?),
        };
        Ok((obs, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_resolves_to_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"problem": "ex1-bratu-quartic"}"#).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.train.output_groups, 2);
        assert_eq!(r.train.lambda_true, Some(vec![1.2]));
        assert_eq!(r.data.n_obs, 80);
        assert_eq!(r.data.test_seed, 2);
        assert_eq!(r.studies.m_range, vec![1, 2, 3]);
        assert_eq!(r.workers, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"problem": "ex1-bratu-quartic", "extra": 1}"#,
            r#"{"problem": "ex1-bratu-quartic", "trainer": {"iters": 5}}"#,
            r#"{"problem": "ex1-bratu-quartic", "schedule": {"alpha0": 1, "rate": 0.5}}"#,
            r#"{"problem": "ex1-bratu-quartic", "oracle": {"bvp": {"grid": 5}, "gray_scott": {}}}"#,
            r#"{"problem": "ex3"}"#,
            r#"{}"#,
        ] {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn invalid_values_are_rejected_at_resolution() {
        for doc in [
            r#"{"problem": "ex1-bratu-quartic", "trainer": {"processes": 3}}"#,
            r#"{"problem": "ex1-bratu-quartic", "trainer": {"iterations": 0}}"#,
            r#"{"problem": "ex1-bratu-quartic", "schedule": {"ratio": 1.5}}"#,
            r#"{"problem": "ex1-bratu-quartic", "data": {"lambda": [1, 2]}}"#,
            r#"{"problem": "ex1-bratu-quartic", "data": {"n_obs": 0}}"#,
            r#"{"problem": "ex1-bratu-quartic", "studies": {"m_range": [2, 1]}}"#,
            r#"{"problem": "ex1-bratu-quartic", "network": {"hidden_widths": []}}"#,
        ] {
            let cfg = ExperimentConfig::from_json(doc).unwrap();
            assert!(cfg.resolve().is_err(), "{doc}");
        }
    }

    #[test]
    fn explicit_null_differs_from_absent() {
        let absent = ExperimentConfig::from_json(r#"{"problem": "gray-scott-steady"}"#).unwrap().resolve().unwrap();
        assert!(absent.train.lambda_lr.is_some());
        assert!(absent.train.lambda_true.is_some());
        let null = ExperimentConfig::from_json(
            r#"{"problem": "gray-scott-steady", "trainer": {"lambda_lr": null, "lambda_true": null}}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(null.train.lambda_lr, None);
        assert_eq!(null.train.lambda_true, None);
    }

    #[test]
    fn echo_resolves_to_itself() {
        for doc in [
            r#"{"problem": "ex1-bratu-quartic"}"#,
            r#"{"problem": "ex2-quartic-quadratic", "data": {"subset": [1, 2, 3], "n_obs": 180}, "trainer": {"lambda_true": null, "plateau": {"window": 10, "rel_change": 1e-6}}}"#,
            r#"{"problem": "gray-scott-steady", "trainer": {"lambda_init": {"kind": "normal", "mean": [1e-4, 1e-4, 0.04, 0.06], "std": [0, 0, 0.01, 0.01]}}}"#,
        ] {
            let r = ExperimentConfig::from_json(doc).unwrap().resolve().unwrap();
            let echoed = r.echo_json();
            let again = ExperimentConfig::from_json(&echoed).unwrap().resolve().unwrap();
            assert_eq!(again, r, "{echoed}");
            assert_eq!(again.echo_json(), echoed);
        }
    }

    #[test]
    fn reseed_touches_every_seed() {
        let mut r = ExperimentConfig::minimal(ProblemKind::Ex1BratuQuartic).resolve().unwrap();
        r.reseed(42);
        assert_eq!(
            (r.train.network_seed, r.train.lambda_seed, r.data.seed, r.data.test_seed, r.studies.discovery.seed),
            (42, 42, 42, 43, 42)
        );
    }
}
