//! The ground-truth tables and observation subsets used by the standard
//! experiments.

use super::{
    default_guesses_1d, default_seed_library, solve_gray_scott_steady, solve_multisolution_1d,
    BvpOptions, GrayScottOptions, OracleError, SolutionTable,
};
use serde::{Deserialize, Serialize};

use crate::problems::ProblemKind;

/// Amplitude below which a nonzero Example-2 solution belongs to the
/// small-amplitude branch near u = 0.
const SMALL_BRANCH_AMPLITUDE: f64 = 0.5;

/// Solver settings for building a ground-truth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOptions {
    pub bvp: BvpOptions,
    pub gray_scott: GrayScottOptions,
}

impl OracleOptions {
    /// Defaults; Example 2 turns on deflation, which the plain guess sweep
    /// needs to reach every branch.
    pub fn for_problem(kind: ProblemKind) -> Self {
        Self {
            bvp: BvpOptions {
                deflation: kind == ProblemKind::Ex2QuarticQuadratic,
                ..Default::default()
            },
            gray_scott: GrayScottOptions::default(),
        }
    }
}

/// All solutions found at `lambda` with the default guesses or seeds.
pub fn oracle_table(kind: ProblemKind, lambda: &[f64], options: &OracleOptions) -> Result<SolutionTable, OracleError> {
    match kind {
        ProblemKind::Ex1BratuQuartic | ProblemKind::Ex2QuarticQuadratic => {
            solve_multisolution_1d(kind, lambda, &options.bvp, &default_guesses_1d(kind))
        }
        ProblemKind::GrayScottSteady => solve_gray_scott_steady(lambda, &options.gray_scott, &default_seed_library()),
    }
}

/// Solution table at the reference parameters with the default settings.
pub fn reference_table(kind: ProblemKind) -> Result<SolutionTable, OracleError> {
    oracle_table(kind, &kind.problem().reference_lambda(), &OracleOptions::for_problem(kind))
}

/// Solutions observations are drawn from by default.
///
/// * Example 1: both solutions.
/// * Example 2: every solution except the small-amplitude branch (nonzero but
///   below 0.5 everywhere), leaving the seven-solution set.
/// * Gray-Scott: the first four non-homogeneous states.
pub fn reference_subset(table: &SolutionTable) -> Vec<usize> {
    let amplitude = |i: usize| {
        table.solutions[i]
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let all = 0..table.solutions.len();
    match table.problem {
        ProblemKind::Ex1BratuQuartic => all.collect(),
        ProblemKind::Ex2QuarticQuadratic => all
            .filter(|&i| {
                let a = amplitude(i);
                a < super::ZERO_FLOOR || a >= SMALL_BRANCH_AMPLITUDE
            })
            .collect(),
        ProblemKind::GrayScottSteady => all
            .filter(|&i| {
                let a = table.solutions[i].component(&table.grid, 0);
                a.iter().any(|v| v.abs() > 1e-3)
            })
            .take(4)
            .collect(),
    }
}
