use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Grid, OracleError, SolutionTable};

/// How observation values were produced from the grid solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Cubic,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub seed: u64,
    pub subset: Vec<usize>,
    pub n_obs: usize,
    pub interpolation: Interpolation,
    /// Index of the solution each observation was drawn from. Kept for
    /// verification only; training never reads it.
    pub source_labels: Vec<usize>,
}

/// Unlabelled samples `(x_i, u_i)`, stored flat: `points` is `n x dim`,
/// `values` is `n x components`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: usize,
    components: usize,
    points: Vec<f64>,
    values: Vec<f64>,
    pub meta: Option<ObservationMeta>,
}

impl ObservationSet {
    pub fn new(
        dim: usize,
        components: usize,
        points: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, OracleError> {
        if dim == 0 || components == 0 {
            return Err(OracleError::Contract("dim and components must be >= 1".into()));
        }
        if points.len() % dim != 0
            || values.len() % components != 0
            || points.len() / dim != values.len() / components
        {
            return Err(OracleError::Contract(format!(
                "inconsistent observation arrays: {} coordinates, {} values",
                points.len(),
                values.len()
            )));
        }
        Ok(Self {
            dim,
            components,
            points,
            values,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.components..(i + 1) * self.components]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    fn pick(&self, indices: &[usize]) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut values = Vec::with_capacity(indices.len() * self.components);
        for &i in indices {
            points.extend_from_slice(self.point(i));
            values.extend_from_slice(self.value(i));
        }
        let meta = self.meta.as_ref().map(|m| ObservationMeta {
            n_obs: indices.len(),
            source_labels: indices
                .iter()
                .filter_map(|&i| m.source_labels.get(i).copied())
                .collect(),
            ..m.clone()
        });
        Self {
            dim: self.dim,
            components: self.components,
            points,
            values,
            meta,
        }
    }
}

/// Draws `n_obs` observations: locations uniform on the domain, each value
/// taken from a solution chosen uniformly from `subset` (all solutions when
/// `None`), interpolated at the location.
pub fn sample_observations(
    table: &SolutionTable,
    n_obs: usize,
    seed: u64,
    subset: Option<&[usize]>,
) -> Result<ObservationSet, OracleError> {
    if n_obs == 0 {
        return Err(OracleError::Contract("n_obs must be >= 1".into()));
    }
    let subset: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..table.solutions.len()).collect(),
    };
    if subset.is_empty() {
        return Err(OracleError::Contract("solution subset is empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&s| s >= table.solutions.len()) {
        return Err(OracleError::Contract(format!(
            "solution index {bad} out of range ({} available)",
            table.solutions.len()
        )));
    }
    let dim = table.grid.dim();
    let comps = table.components;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_obs * dim);
    let mut values = Vec::with_capacity(n_obs * comps);
    let mut labels = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let source = subset[rng.random_range(0..subset.len())];
        for c in 0..comps {
            values.push(table.interpolate(source, c, &x));
        }
        points.extend_from_slice(&x);
        labels.push(source);
    }
    let mut obs = ObservationSet::new(dim, comps, points, values)?;
    obs.meta = Some(ObservationMeta {
        seed,
        subset,
        n_obs,
        interpolation: match table.grid {
            Grid::Line { .. } => Interpolation::Cubic,
            Grid::Square { .. } => Interpolation::Bilinear,
        },
        source_labels: labels,
    });
    Ok(obs)
}

/// Deterministic disjoint split; `fraction` of the observations (rounded)
/// go to the test part.
pub fn test_split(
    obs: &ObservationSet,
    fraction: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet), OracleError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(OracleError::Contract(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let n = obs.len();
    let n_test = (fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(OracleError::Contract(format!(
            "split of {n} observations at {fraction} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = order.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((obs.pick(&train), obs.pick(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::SolutionField;
    use crate::problems::ProblemKind;

    fn toy_table(k: usize) -> SolutionTable {
        let n = 101;
        let solutions = (0..k)
            .map(|s| SolutionField {
                values: (0..n).map(|i| (s + 1) as f64 * (1.0 - (i as f64 / 100.0).powi(2))).collect(),
                residual_rms: 0.0,
            })
            .collect();
        SolutionTable {
            problem: ProblemKind::Ex1BratuQuartic,
            lambda: vec![1.2],
            grid: Grid::Line { n },
            components: 1,
            solutions,
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_domain() {
        let t = toy_table(3);
        let a = sample_observations(&t, 50, 9, None).unwrap();
        let b = sample_observations(&t, 50, 9, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        for i in 0..a.len() {
            let x = a.point(i)[0];
            assert!((0.0..=1.0).contains(&x));
            let label = a.meta.as_ref().unwrap().source_labels[i];
            let exact = (label + 1) as f64 * (1.0 - x * x);
            assert!((a.value(i)[0] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn single_solution_subset() {
        let t = toy_table(3);
        let o = sample_observations(&t, 40, 1, Some(&[2])).unwrap();
        assert!(o.meta.unwrap().source_labels.iter().all(|&l| l == 2));
    }

    #[test]
    fn bad_subsets_rejected() {
        let t = toy_table(2);
        assert!(sample_observations(&t, 10, 1, Some(&[])).is_err());
        assert!(sample_observations(&t, 10, 1, Some(&[5])).is_err());
        assert!(sample_observations(&t, 0, 1, None).is_err());
    }

    #[test]
    fn per_solution_counts_are_binomial() {
        let t = toy_table(4);
        let n = 20_000;
        let o = sample_observations(&t, n, 3, None).unwrap();
        let mut counts = [0usize; 4];
        for &l in &o.meta.unwrap().source_labels {
            counts[l] += 1;
        }
        let p = 0.25;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let t = toy_table(2);
        let o = sample_observations(&t, 80, 4, None).unwrap();
        let (train, test) = test_split(&o, 0.25, 5).unwrap();
        assert_eq!((train.len(), test.len()), (60, 20));
        let (train2, test2) = test_split(&o, 0.25, 5).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // disjoint: every original point appears exactly once
        let mut xs: Vec<f64> = (0..60).map(|i| train.point(i)[0]).chain((0..20).map(|i| test.point(i)[0])).collect();
        xs.sort_by(f64::total_cmp);
        let mut orig: Vec<f64> = (0..80).map(|i| o.point(i)[0]).collect();
        orig.sort_by(f64::total_cmp);
        assert_eq!(xs, orig);

        let two = sample_observations(&t, 2, 4, None).unwrap();
        let (a, b) = test_split(&two, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(test_split(&two, 0.1, 1).is_err());
        assert!(test_split(&two, 1.0, 1).is_err());
    }
}
