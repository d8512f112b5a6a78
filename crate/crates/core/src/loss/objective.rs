use ndarray::Array2;

use super::{argmin, check_obs, LossBreakdown, LossError};
use crate::autodiff::{Jet2, Tape};
use crate::network::{BatchForward, BatchedMlp, MlpConfig};
use crate::oracle::ObservationSet;
use crate::problems::{BoundaryCondition, ConditionKind, DeProblem};

/// Batched evaluator of the homotopy loss and its gradient.
///
/// Point sets are fixed at construction. The network runs through
/// [`BatchedMlp`]; the residual of each (point, group) pair is differentiated
/// with respect to its local jet entries on a small scratch tape, so the
/// residual code is shared with the reference path.
#[derive(Debug, Clone)]
pub struct HomotopyObjective {
    mlp: BatchedMlp,
    problem: DeProblem,
    obs_points: Option<Array2<f64>>,
    obs_values: Vec<f64>,
    collocation: Array2<f64>,
    boundary: Array2<f64>,
    boundary_rows: Vec<Vec<BoundaryCondition>>,
}

fn to_array(points: &[Vec<f64>], dim: usize) -> Result<Array2<f64>, LossError> {
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(LossError::Contract(format!("point {p:?} is not {dim}-dimensional")));
    }
    Ok(Array2::from_shape_vec(
        (points.len(), dim),
        points.iter().flatten().copied().collect(),
    )
    .expect("shape checked"))
}

impl HomotopyObjective {
    /// `obs = None` builds the residual-only objective.
    pub fn new(
        config: MlpConfig,
        problem: DeProblem,
        obs: Option<&ObservationSet>,
        collocation: &[Vec<f64>],
        boundary: &[Vec<f64>],
    ) -> Result<Self, LossError> {
        if config.input_dim != problem.dim() || config.components_per_group != problem.components() {
            return Err(LossError::Contract(format!(
                "network ({} inputs, {} components) does not match {}",
                config.input_dim,
                config.components_per_group,
                problem.name()
            )));
        }
        if collocation.is_empty() {
            return Err(LossError::Contract("no collocation points".into()));
        }
        let dim = problem.dim();
        let (obs_points, obs_values) = match obs {
            Some(o) => {
                check_obs(&config, o)?;
                let pts = Array2::from_shape_vec((o.len(), dim), o.points_flat().to_vec())
                    .expect("observation layout");
                (Some(pts), o.values_flat().to_vec())
            }
            None => (None, Vec::new()),
        };
        let boundary_rows = boundary
            .iter()
            .map(|x| {
                problem
                    .conditions_at(x)
                    .ok_or_else(|| LossError::Problem(crate::problems::ProblemError::NotOnBoundary(x.clone())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            mlp: BatchedMlp::new(config),
            problem,
            obs_points,
            obs_values,
            collocation: to_array(collocation, dim)?,
            boundary: to_array(boundary, dim)?,
            boundary_rows,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        self.mlp.config()
    }

    pub fn problem(&self) -> &DeProblem {
        &self.problem
    }

    pub fn has_data(&self) -> bool {
        self.obs_points.is_some()
    }

    /// Loss at `(params, lambda)` with weight `alpha`. When `grad` is given,
    /// the gradients are *added* to `(grad_theta, grad_lambda)`.
    pub fn evaluate(
        &self,
        params: &[f64],
        lambda: &[f64],
        alpha: f64,
        mut grad: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<LossBreakdown, LossError> {
        self.problem.check_lambda(lambda)?;
        let (data, assignment) = self.data(params, grad.as_mut().map(|(g, _)| &mut **g))?;
        let residual = self.residual(params, lambda, alpha, grad.as_mut().map(|(g, l)| (&mut **g, &mut **l)))?;
        let boundary = self.boundary(params, alpha, grad.as_mut().map(|(g, _)| &mut **g));
        Ok(LossBreakdown::combine(data, residual, boundary, alpha, assignment))
    }

    fn data(&self, params: &[f64], grad: Option<&mut [f64]>) -> Result<(f64, Vec<usize>), LossError> {
        let Some(points) = &self.obs_points else {
            return Ok((0.0, Vec::new()));
        };
        let config = self.mlp.config();
        let (m_count, c_count) = (config.output_groups, config.components_per_group);
        let n = points.nrows();
        let fwd = self.mlp.forward(params, points, false);
        let mut assignment = Vec::with_capacity(n);
        let mut total = 0.0;
        let mut adj = grad.as_ref().map(|_| Array2::<f64>::zeros(fwd.output().raw_dim()));
        let mut dists = vec![0.0; m_count];
        let scale = 1.0 / n as f64;
        for i in 0..n {
            let target = &self.obs_values[i * c_count..(i + 1) * c_count];
            for (m, d) in dists.iter_mut().enumerate() {
                *d = (0..c_count)
                    .map(|c| (fwd.value(i, m * c_count + c) - target[c]).powi(2))
                    .sum();
            }
            let chosen = argmin(&dists);
            assignment.push(chosen);
            total += dists[chosen];
            if let Some(adj) = adj.as_mut() {
                for c in 0..c_count {
                    let o = chosen * c_count + c;
                    adj[[i, o]] = 2.0 * scale * (fwd.value(i, o) - target[c]);
                }
            }
        }
        if let (Some(adj), Some(g)) = (adj, grad) {
            self.mlp.backward(params, &fwd, adj, g);
        }
        Ok((total * scale, assignment))
    }

    fn residual(
        &self,
        params: &[f64],
        lambda: &[f64],
        alpha: f64,
        grad: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<f64, LossError> {
        let config = self.mlp.config();
        let (m_count, c_count) = (config.output_groups, config.components_per_group);
        let axes = config.input_dim;
        let n = self.collocation.nrows();
        let fwd = self.mlp.forward(params, &self.collocation, true);
        let mut total = 0.0;
        let scale = 1.0 / (m_count * n) as f64;
        let Some((g_theta, g_lambda)) = grad else {
            for j in 0..n {
                let x = self.collocation.row(j).to_vec();
                for m in 0..m_count {
                    let jets: Vec<Jet2<f64>> = (0..c_count)
                        .map(|c| local_jet(&fwd, j, m * c_count + c, axes, |v| v))
                        .collect();
                    total += self.problem.residual(&jets, &x, lambda).iter().map(|r| r * r).sum::<f64>();
                }
            }
            return Ok(total * scale);
        };
        let mut adj = Array2::<f64>::zeros(fwd.output().raw_dim());
        let mut tape = Tape::with_capacity(256);
        let w = alpha * scale;
        for j in 0..n {
            let x = self.collocation.row(j).to_vec();
            for m in 0..m_count {
                tape.clear();
                let t = &tape;
                let jets: Vec<Jet2<_>> = (0..c_count)
                    .map(|c| local_jet(&fwd, j, m * c_count + c, axes, |v| t.var(v)))
                    .collect();
                let lam = t.vars(lambda);
                let rs = self.problem.residual(&jets, &x, &lam);
                let mut sq = rs[0].square();
                for r in &rs[1..] {
                    sq = sq + r.square();
                }
                total += sq.value();
                let g = t.backward(sq)?;
                for (c, jet) in jets.iter().enumerate() {
                    let o = m * c_count + c;
                    adj[[j, o]] += w * g.wrt(jet.value);
                    for a in 0..axes {
                        adj[[(1 + a) * n + j, o]] += w * g.wrt(jet.d1[a]);
                        adj[[(1 + axes + a) * n + j, o]] += w * g.wrt(jet.d2[a]);
                    }
                }
                for (gl, l) in g_lambda.iter_mut().zip(&lam) {
                    *gl += w * g.wrt(*l);
                }
            }
        }
        self.mlp.backward(params, &fwd, adj, g_theta);
        Ok(total * scale)
    }

    fn boundary(&self, params: &[f64], alpha: f64, grad: Option<&mut [f64]>) -> f64 {
        let n = self.boundary.nrows();
        if n == 0 {
            return 0.0;
        }
        let config = self.mlp.config();
        let (m_count, c_count) = (config.output_groups, config.components_per_group);
        let fwd = self.mlp.forward(params, &self.boundary, true);
        let scale = 1.0 / (m_count * n) as f64;
        let mut adj = grad.as_ref().map(|_| Array2::<f64>::zeros(fwd.output().raw_dim()));
        let mut total = 0.0;
        for (b, rows) in self.boundary_rows.iter().enumerate() {
            for m in 0..m_count {
                for cond in rows {
                    let o = m * c_count + cond.component;
                    let (row, r) = match cond.kind {
                        ConditionKind::DirichletZero => (b, fwd.value(b, o)),
                        ConditionKind::NeumannZero => ((1 + cond.axis) * n + b, fwd.d1(b, cond.axis, o)),
                    };
                    total += r * r;
                    if let Some(adj) = adj.as_mut() {
                        adj[[row, o]] += 2.0 * alpha * scale * r;
                    }
                }
            }
        }
        if let (Some(adj), Some(g)) = (adj, grad) {
            self.mlp.backward(params, &fwd, adj, g);
        }
        total * scale
    }
}

fn local_jet<S>(fwd: &BatchForward, point: usize, out: usize, axes: usize, lift: impl Fn(f64) -> S) -> Jet2<S> {
    Jet2 {
        value: lift(fwd.value(point, out)),
        d1: (0..axes).map(|a| lift(fwd.d1(point, a, out))).collect(),
        d2: (0..axes).map(|a| lift(fwd.d2(point, a, out))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::total_loss_taped;
    use crate::network::NetworkParams;
    use crate::problems::ProblemKind;

    fn check_against_tape(kind: ProblemKind, m: usize, with_obs: bool) {
        let problem = kind.problem();
        let (d, c) = (problem.dim(), problem.components());
        let config = MlpConfig::new(d, vec![6, 5], m, c).unwrap();
        let p = NetworkParams::init_he(config.clone(), 17).unwrap();
        let n = 5;
        let points: Vec<f64> = (0..n * d).map(|k| ((k * 37 % 11) as f64 + 0.5) / 11.0).collect();
        let values: Vec<f64> = (0..n * c).map(|k| ((k * 13 % 7) as f64 - 3.0) / 4.0).collect();
        let obs = ObservationSet::new(d, c, points, values).unwrap();
        let obs_ref = if with_obs { Some(&obs) } else { None };
        let coll = problem.collocation_grid(4);
        let bnd = problem.boundary_points(3);
        let lam: Vec<f64> = problem.reference_lambda().iter().map(|v| v * 1.1).collect();
        let alpha = 0.36;
        let (reference, grad_ref) = total_loss_taped(&p, &lam, &problem, obs_ref, &coll, &bnd, alpha).unwrap();
        let objective = HomotopyObjective::new(config.clone(), problem, obs_ref, &coll, &bnd).unwrap();
        let mut g_theta = vec![0.0; config.parameter_count()];
        let mut g_lambda = vec![0.0; lam.len()];
        let got = objective
            .evaluate(p.values(), &lam, alpha, Some((&mut g_theta, &mut g_lambda)))
            .unwrap();
        let plain = objective.evaluate(p.values(), &lam, alpha, None).unwrap();
        assert_eq!(got.assignment, reference.assignment);
        assert_eq!(got, plain);
        for (a, b) in [
            (got.data_term, reference.data_term),
            (got.residual_term, reference.residual_term),
            (got.boundary_term, reference.boundary_term),
        ] {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
        }
        let all: Vec<f64> = g_theta.iter().chain(&g_lambda).copied().collect();
        for (k, (a, b)) in all.iter().zip(&grad_ref).enumerate() {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-6), "coord {k}: {a} vs {b}");
        }
    }

    #[test]
    fn matches_taped_reference_ex1() {
        check_against_tape(ProblemKind::Ex1BratuQuartic, 2, true);
    }

    #[test]
    fn matches_taped_reference_ex2_without_data() {
        check_against_tape(ProblemKind::Ex2QuarticQuadratic, 3, false);
    }

    #[test]
    fn matches_taped_reference_gray_scott() {
        check_against_tape(ProblemKind::GrayScottSteady, 2, true);
    }

    #[test]
    fn rejects_mismatched_network() {
        let config = MlpConfig::new(2, vec![3], 1, 1).unwrap();
        let p = ProblemKind::Ex1BratuQuartic.problem();
        assert!(HomotopyObjective::new(config, p, None, &p.collocation_grid(3), &[]).is_err());
    }
}
