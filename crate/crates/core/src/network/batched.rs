//! Batched jet propagation with a hand-written adjoint.
//!
//! This is the training-time counterpart of [`forward_jets`](super::forward_jets)
//! over a tape: the same second-order jet arithmetic, laid out as stacked
//! matrices so each layer is a single GEMM. Rows are organised in channel
//! blocks of `n` points each: block 0 holds values, blocks `1..=axes` the first
//! derivatives and blocks `axes+1..=2*axes` the pure second derivatives.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::{LayerSlot, MlpConfig};

#[derive(Debug, Clone)]
pub struct BatchedMlp {
    config: MlpConfig,
    layers: Vec<LayerSlot>,
}

/// Forward-pass cache for one batch of points.
#[derive(Debug, Clone)]
pub struct BatchForward {
    n: usize,
    axes: usize,
    inputs: Array2<f64>,
    /// Pre-activation stacks of the hidden layers.
    pre: Vec<Array2<f64>>,
    /// Post-activation stacks of the hidden layers.
    post: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl BatchForward {
    pub fn points(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn channels(&self) -> usize {
        1 + 2 * self.axes
    }

    /// Output stack, `channels * n` rows by `M * C` columns.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn value(&self, point: usize, out: usize) -> f64 {
        self.output[[point, out]]
    }

    pub fn d1(&self, point: usize, axis: usize, out: usize) -> f64 {
        self.output[[(1 + axis) * self.n + point, out]]
    }

    pub fn d2(&self, point: usize, axis: usize, out: usize) -> f64 {
        self.output[[(1 + self.axes + axis) * self.n + point, out]]
    }
}

fn weights<'a>(params: &'a [f64], slot: &LayerSlot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.fan_in, slot.fan_out), &params[slot.weights()])
        .expect("layer slot matches parameter layout")
}

impl BatchedMlp {
    pub fn new(config: MlpConfig) -> Self {
        let layers = config.layers();
        Self { config, layers }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// Forward pass over `points` (n x input_dim). With `jets == false` only
    /// the value channel is propagated.
    pub fn forward(&self, params: &[f64], points: &Array2<f64>, jets: bool) -> BatchForward {
        let n = points.nrows();
        let axes = if jets { self.config.input_dim } else { 0 };
        let ch = 1 + 2 * axes;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post = Vec::with_capacity(last);
        let mut output = None;

        for (l, slot) in self.layers.iter().enumerate() {
            let w = weights(params, slot);
            let bias = &params[slot.bias()];
            let mut z = if l == 0 {
                let mut z = Array2::<f64>::zeros((ch * n, slot.fan_out));
                z.slice_mut(s![0..n, ..]).assign(&points.dot(&w));
                for a in 0..axes {
                    let row = w.row(a);
                    z.slice_mut(s![(1 + a) * n..(2 + a) * n, ..])
                        .axis_iter_mut(Axis(0))
                        .for_each(|mut r| r.assign(&row));
                }
                z
            } else {
                let h: &Array2<f64> = &post[l - 1];
                standard(h.dot(&w))
            };
            z.slice_mut(s![0..n, ..])
                .axis_iter_mut(Axis(0))
                .for_each(|mut r| {
                    r.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
                });
            if l < last {
                let h = tanh_jet(&z, n, axes);
                pre.push(z);
                post.push(h);
            } else {
                output = Some(z);
            }
        }

        BatchForward {
            n,
            axes,
            inputs: points.clone(),
            pre,
            post,
            output: output.expect("network has an output layer"),
        }
    }

    /// Accumulates d(loss)/d(params) into `grad`, given the adjoint of the
    /// output stack.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &BatchForward,
        output_adjoint: Array2<f64>,
        grad: &mut [f64],
    ) {
        let n = cache.n;
        let axes = cache.axes;
        let mut g = output_adjoint;
        for l in (0..self.layers.len()).rev() {
            let slot = &self.layers[l];
            let gb = g.slice(s![0..n, ..]).sum_axis(Axis(0));
            for (dst, v) in grad[slot.bias()].iter_mut().zip(gb.iter()) {
                *dst += v;
            }
            if l == 0 {
                let gw = cache.inputs.t().dot(&g.slice(s![0..n, ..]));
                let mut gw = gw;
                for a in 0..axes {
                    let col = g.slice(s![(1 + a) * n..(2 + a) * n, ..]).sum_axis(Axis(0));
                    gw.row_mut(a).zip_mut_with(&col, |x, y| *x += y);
                }
                accumulate(&mut grad[slot.weights()], &gw);
                break;
            }
            let input = &cache.post[l - 1];
            let gw = input.t().dot(&g);
            accumulate(&mut grad[slot.weights()], &gw);
            let w = weights(params, slot);
            let gh = standard(g.dot(&w.t()));
            g = tanh_jet_adjoint(gh, &cache.pre[l - 1], &cache.post[l - 1], n, axes);
        }
    }
}

/// `dot` may hand back column-major results for degenerate shapes; the jet
/// kernels index raw row-major memory.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn accumulate(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

/// Elementwise tanh through the jet channels:
/// h = t, h' = s z', h'' = s z'' - 2 t s z'^2, with t = tanh z, s = 1 - t^2.
fn tanh_jet(z: &Array2<f64>, n: usize, axes: usize) -> Array2<f64> {
    let width = z.ncols();
    let block = n * width;
    let zs = z.as_slice().expect("standard layout");
    let mut h = Array2::<f64>::zeros(z.raw_dim());
    let hs = h.as_slice_mut().expect("standard layout");
    for i in 0..block {
        let t = zs[i].tanh();
        let slope = 1.0 - t * t;
        let curv = -2.0 * t * slope;
        hs[i] = t;
        for a in 0..axes {
            let i1 = (1 + a) * block + i;
            let i2 = (1 + axes + a) * block + i;
            let z1 = zs[i1];
            hs[i1] = slope * z1;
            hs[i2] = slope * zs[i2] + curv * z1 * z1;
        }
    }
    h
}

/// Adjoint of [`tanh_jet`]. Consumes the post-activation adjoint and returns
/// the pre-activation adjoint.
fn tanh_jet_adjoint(
    mut gh: Array2<f64>,
    z: &Array2<f64>,
    h: &Array2<f64>,
    n: usize,
    axes: usize,
) -> Array2<f64> {
    let width = z.ncols();
    let block = n * width;
    let zs = z.as_slice().expect("standard layout");
    let hs = h.as_slice().expect("standard layout");
    let gs = gh.as_slice_mut().expect("standard layout");
    for i in 0..block {
        let t = hs[i];
        let slope = 1.0 - t * t;
        let curv = -2.0 * t * slope;
        let curv2 = -2.0 * slope * (1.0 - 3.0 * t * t);
        let mut gz = gs[i] * slope;
        for a in 0..axes {
            let i1 = (1 + a) * block + i;
            let i2 = (1 + axes + a) * block + i;
            let (z1, z2) = (zs[i1], zs[i2]);
            let (g1, g2) = (gs[i1], gs[i2]);
            gz += g1 * curv * z1 + g2 * (curv2 * z1 * z1 + curv * z2);
            gs[i1] = g1 * slope + g2 * 2.0 * curv * z1;
            gs[i2] = g2 * slope;
        }
        gs[i] = gz;
    }
    gh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::network::{forward_jets, NetworkParams};

    fn points(rows: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_vec((rows.len(), 2), rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn batched_channels_match_scalar_jets() {
        let config = MlpConfig::new(2, vec![7, 5, 6], 2, 2).unwrap();
        let p = NetworkParams::init_he(config.clone(), 11).unwrap();
        let pts = points(&[[0.1, 0.2], [0.9, 0.4], [0.5, 0.5]]);
        let mlp = BatchedMlp::new(config);
        let fwd = mlp.forward(p.values(), &pts, true);
        for i in 0..3 {
            let jets = p.forward_with_derivatives(&[pts[[i, 0]], pts[[i, 1]]]).unwrap();
            for (o, j) in jets.iter().enumerate() {
                assert!((fwd.value(i, o) - j.value).abs() < 1e-12);
                for a in 0..2 {
                    assert!((fwd.d1(i, a, o) - j.d1[a]).abs() < 1e-12);
                    assert!((fwd.d2(i, a, o) - j.d2[a]).abs() < 1e-12);
                }
            }
        }
        let values_only = mlp.forward(p.values(), &pts, false);
        assert_eq!(values_only.channels(), 1);
        for i in 0..3 {
            for o in 0..4 {
                assert!((values_only.value(i, o) - fwd.value(i, o)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batched_adjoint_matches_tape() {
        // Arbitrary linear functional of every output channel, differentiated
        // both through the tape and through the batched adjoint.
        let config = MlpConfig::new(2, vec![4, 3], 2, 1).unwrap();
        let p = NetworkParams::init_he(config.clone(), 5).unwrap();
        let pts = points(&[[0.3, 0.7], [0.8, 0.1]]);
        let mlp = BatchedMlp::new(config.clone());
        let fwd = mlp.forward(p.values(), &pts, true);
        let coeff = |row: usize, col: usize| ((row * 7 + col * 3) % 5) as f64 - 2.0;
        let adj = Array2::from_shape_fn(fwd.output().raw_dim(), |(r, c)| coeff(r, c));
        let mut grad = vec![0.0; config.parameter_count()];
        mlp.backward(p.values(), &fwd, adj, &mut grad);

        let tape = Tape::new();
        let vars = tape.vars(p.values());
        let mut total = tape.constant(0.0);
        let n = 2;
        for i in 0..n {
            let jets = forward_jets(&config, &vars, &[pts[[i, 0]], pts[[i, 1]]]);
            for (o, j) in jets.iter().enumerate() {
                total = total + j.value * coeff(i, o);
                for a in 0..2 {
                    total = total + j.d1[a] * coeff((1 + a) * n + i, o);
                    total = total + j.d2[a] * coeff((3 + a) * n + i, o);
                }
            }
        }
        let g = tape.backward(total).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let reference = g.wrt(*v);
            assert!(
                (grad[k] - reference).abs() <= 1e-11 * reference.abs().max(1.0),
                "param {k}: {} vs {reference}",
                grad[k]
            );
        }
    }
}
