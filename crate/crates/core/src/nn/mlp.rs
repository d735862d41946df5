use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Batch normalization after a hidden activation, with trainable scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the old running statistic in each update.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the running statistics.
    Inference,
}

/// Bias-free fully connected network `F_l = a(F_{l-1} W_l)`, `F_L = b(F_{L-1} W_L)`.
///
/// `W_l` has shape `n_{l-1} x n_l`; samples are rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    hidden: Activation,
    output: Activation,
    batch_norm: Option<Vec<BatchNorm>>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs `F_0 = H, F_1, ..., F_{L-1}`.
    pub inputs: Vec<Array2<f64>>,
    /// Activation derivatives at the pre-activations of each layer.
    pub derivs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    bn: Vec<Option<BnCache>>,
    mode: BnMode,
}

impl Mlp {
    pub fn new(weights: Vec<Array2<f64>>, hidden: Activation, output: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    l + 1,
                    pair[0].ncols(),
                    l + 2,
                    pair[1].nrows()
                )));
            }
        }
        if weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("weights must be finite"));
        }
        hidden.validate()?;
        output.validate()?;
        Ok(Self {
            weights,
            hidden,
            output,
            batch_norm: None,
        })
    }

    /// Enable batch normalization after every hidden activation.
    pub fn with_batch_norm(mut self) -> Self {
        let bn = self.weights[..self.depth() - 1]
            .iter()
            .map(|w| BatchNorm::new(w.ncols()))
            .collect();
        self.batch_norm = Some(bn);
        self
    }

    pub(crate) fn set_batch_norm(&mut self, bn: Option<Vec<BatchNorm>>) -> Result<()> {
        if let Some(b) = &bn {
            let ok = b.len() == self.depth() - 1
                && b.iter().zip(&self.weights).all(|(b, w)| {
                    let n = w.ncols();
                    b.scale.len() == n && b.shift.len() == n && b.running_mean.len() == n && b.running_var.len() == n
                });
            if !ok {
                return Err(Error::invalid("batch-norm state does not match the hidden widths"));
            }
        }
        self.batch_norm = bn;
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `[n_0, n_1, ..., n_L]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.weights[0].nrows())
            .chain(self.weights.iter().map(|w| w.ncols()))
            .collect()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn hidden(&self) -> Activation {
        self.hidden
    }

    pub fn output(&self) -> Activation {
        self.output
    }

    pub fn set_output(&mut self, output: Activation) -> Result<()> {
        output.validate()?;
        self.output = output;
        Ok(())
    }

    pub fn batch_norm(&self) -> Option<&[BatchNorm]> {
        self.batch_norm.as_deref()
    }

    /// Widths non-increasing after the first layer and `n_1 >= n_samples`.
    pub fn check_theory_widths(&self, n_samples: usize) -> Result<()> {
        let w = self.widths();
        if w.len() > 1 && w[1] < n_samples {
            return Err(Error::invalid(format!(
                "first hidden width {} is below the sample count {n_samples}",
                w[1]
            )));
        }
        if w[1..].windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::invalid(format!("widths {w:?} must be non-increasing after the input")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let w: usize = self.weights.iter().map(|w| w.len()).sum();
        let bn: usize = self
            .batch_norm
            .iter()
            .flatten()
            .map(|b| 2 * b.scale.len())
            .sum();
        w + bn
    }

    /// Trainable parameters: each `W_l` row-major, then per hidden layer the
    /// batch-norm scale and shift.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend(w.iter());
        }
        for b in self.batch_norm.iter().flatten() {
            out.extend(&b.scale);
            out.extend(&b.shift);
        }
        out
    }

    pub fn set_params_flat(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        let mut it = theta.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        for b in self.batch_norm.iter_mut().flatten() {
            b.scale.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            b.shift.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Range of layer `l`'s weights inside the flat parameter vector.
    pub fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let start: usize = self.weights[..l].iter().map(|w| w.len()).sum();
        start..start + self.weights[l].len()
    }

    fn check_input(&self, h: &ArrayView2<f64>) -> Result<()> {
        let n0 = self.weights[0].nrows();
        if h.ncols() != n0 {
            return Err(Error::invalid(format!(
                "input has {} columns, network expects {n0}",
                h.ncols()
            )));
        }
        Ok(())
    }

    /// Outputs with batch norm (if any) in inference mode.
    pub fn forward(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_with_trace(h, BnMode::Inference)?.output)
    }

    pub fn forward_with_trace(&self, h: ArrayView2<f64>, mode: BnMode) -> Result<ForwardTrace> {
        self.check_input(&h)?;
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut derivs = Vec::with_capacity(depth);
        let mut bn_caches = Vec::with_capacity(depth);
        let mut f = h.to_owned();
        for (l, w) in self.weights.iter().enumerate() {
            let act = if l + 1 == depth { self.output } else { self.hidden };
            let mut z = f.dot(w);
            let mut d = Array2::zeros(z.raw_dim());
            Zip::from(&mut z).and(&mut d).for_each(|z, d| {
                let (v, dv) = act.eval(*z);
                *z = v;
                *d = dv;
            });
            let bn = match (&self.batch_norm, l + 1 < depth) {
                (Some(bns), true) => Some(normalize(&mut z, &bns[l], mode)),
                _ => None,
            };
            inputs.push(f);
            derivs.push(d);
            bn_caches.push(bn);
            f = z;
        }
        Ok(ForwardTrace {
            inputs,
            derivs,
            output: f,
            bn: bn_caches,
            mode,
        })
    }

    /// Gradient of a loss with respect to the flat parameters, given the
    /// loss gradient `upstream` with respect to the outputs.
    pub fn backward(&self, trace: &ForwardTrace, upstream: ArrayView2<f64>) -> Vec<f64> {
        let depth = self.depth();
        let mut weight_grads: Vec<Array2<f64>> = Vec::with_capacity(depth);
        let mut bn_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut g = upstream.to_owned();
        for l in (0..depth).rev() {
            if let (Some(cache), Some(bns)) = (&trace.bn[l], &self.batch_norm) {
                let (dx, dscale, dshift) = normalize_backward(&g, cache, &bns[l], trace.mode);
                bn_grads.push((dscale, dshift));
                g = dx;
            }
            let dz = &g * &trace.derivs[l];
            weight_grads.push(trace.inputs[l].t().dot(&dz));
            if l > 0 {
                g = dz.dot(&self.weights[l].t());
            }
        }
        weight_grads.reverse();
        bn_grads.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for w in &weight_grads {
            out.extend(w.iter());
        }
        for (s, b) in &bn_grads {
            out.extend(s);
            out.extend(b);
        }
        out
    }

    /// Fold the batch statistics of a training-mode trace into the running ones.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        let Some(bns) = self.batch_norm.as_mut() else {
            return;
        };
        for (b, cache) in bns.iter_mut().zip(&trace.bn) {
            if let Some(c) = cache {
                let m = b.momentum;
                for i in 0..b.scale.len() {
                    b.running_mean[i] = m * b.running_mean[i] + (1.0 - m) * c.batch_mean[i];
                    b.running_var[i] = m * b.running_var[i] + (1.0 - m) * c.batch_var[i];
                }
            }
        }
    }
}

fn normalize(x: &mut Array2<f64>, bn: &BatchNorm, mode: BnMode) -> BnCache {
    let width = x.ncols();
    let (mean, var) = match mode {
        BnMode::Train => {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = x.var_axis(Axis(0), 0.0);
            (mean, var)
        }
        BnMode::Inference => (Array1::from(bn.running_mean.clone()), Array1::from(bn.running_var.clone())),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let mut xhat = x.clone();
    for j in 0..width {
        let mut col = xhat.column_mut(j);
        col.mapv_inplace(|v| (v - mean[j]) * inv_std[j]);
        let mut out = x.column_mut(j);
        Zip::from(&mut out).and(&col).for_each(|o, &xh| *o = bn.scale[j] * xh + bn.shift[j]);
    }
    BnCache {
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    }
}

fn normalize_backward(g: &Array2<f64>, c: &BnCache, bn: &BatchNorm, mode: BnMode) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let n = g.nrows() as f64;
    let width = g.ncols();
    let mut dscale = vec![0.0; width];
    let mut dshift = vec![0.0; width];
    let mut dx = Array2::zeros(g.raw_dim());
    for j in 0..width {
        let gj = g.column(j);
        let xj = c.xhat.column(j);
        let sum_g: f64 = gj.sum();
        let sum_gx: f64 = gj.iter().zip(xj).map(|(a, b)| a * b).sum();
        dscale[j] = sum_gx;
        dshift[j] = sum_g;
        let k = bn.scale[j] * c.inv_std[j];
        let mut out = dx.column_mut(j);
        match mode {
            BnMode::Train => {
                // d/dx of scale * (x - mean) / std with mean and std taken over the batch.
                for i in 0..g.nrows() {
                    out[i] = k * (gj[i] - sum_g / n - xj[i] * sum_gx / n);
                }
            }
            BnMode::Inference => {
                for i in 0..g.nrows() {
                    out[i] = k * gj[i];
                }
            }
        }
    }
    (dx, dscale, dshift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use ndarray::arr2;
    use rand_distr::{Distribution, StandardNormal};

    const LEAKY: Activation = Activation::SmoothedLeaky {
        gamma: 0.5,
        kappa: 0.1,
    };

    fn random_matrix(r: usize, c: usize, seed: u64, idx: u64) -> Array2<f64> {
        let mut rng = rng::stream(seed, Purpose::Misc, idx);
        Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(&mut rng))
    }

    fn random_net(widths: &[usize], output: Activation, seed: u64) -> Mlp {
        let ws = widths
            .windows(2)
            .enumerate()
            .map(|(l, p)| random_matrix(p[0], p[1], seed, l as u64) * (1.0 / (p[0] as f64).sqrt()))
            .collect();
        Mlp::new(ws, LEAKY, output).unwrap()
    }

    /// Central differences of `<upstream, forward(theta)>`.
    fn fd_grad(net: &Mlp, h: &Array2<f64>, up: &Array2<f64>, mode: BnMode) -> Vec<f64> {
        let theta = net.params_flat();
        let mut probe = net.clone();
        let mut out = vec![0.0; theta.len()];
        let step = 1e-5;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += step;
            probe.set_params_flat(&t).unwrap();
            let a = (&probe.forward_with_trace(h.view(), mode).unwrap().output * up).sum();
            t[i] -= 2.0 * step;
            probe.set_params_flat(&t).unwrap();
            let b = (&probe.forward_with_trace(h.view(), mode).unwrap().output * up).sum();
            out[i] = (a - b) / (2.0 * step);
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-10);
        num / den
    }

    #[test]
    fn zero_weights_sigmoid_gives_half_budget() {
        let net = Mlp::new(
            vec![Array2::zeros((4, 6)), Array2::zeros((6, 2))],
            LEAKY,
            Activation::Sigmoid { pmax: 3.0 },
        )
        .unwrap();
        let out = net.forward(random_matrix(5, 4, 0, 0).view()).unwrap();
        assert!(out.iter().all(|v| *v == 1.5));
    }

    #[test]
    fn one_layer_linear_net_is_a_matrix_product() {
        let theta = arr2(&[[1.0, 2.0], [0.5, -1.0], [0.0, 3.0], [2.0, 0.0]]);
        let net = Mlp::new(vec![theta.clone()], Activation::Identity, Activation::Identity).unwrap();
        let h = random_matrix(3, 4, 1, 0);
        assert_eq!(net.forward(h.view()).unwrap(), h.dot(&theta));
    }

    #[test]
    fn trace_output_matches_forward() {
        let net = random_net(&[4, 8, 5, 2], Activation::Screlu { alpha: 0.1, pmax: 1.0 }, 3);
        let h = random_matrix(6, 4, 2, 0);
        let tr = net.forward_with_trace(h.view(), BnMode::Inference).unwrap();
        assert_eq!(tr.output, net.forward(h.view()).unwrap());
        assert_eq!(tr.inputs[0], h);
        assert_eq!(tr.inputs.len(), 3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, widths) in [(1u64, vec![4usize, 6, 2]), (2, vec![9, 12, 7, 3]), (3, vec![4, 2])] {
            let k = *widths.last().unwrap();
            let net = random_net(&widths, Activation::Screlu { alpha: 0.3, pmax: 1.0 }, seed);
            let h = random_matrix(5, widths[0], seed, 100).mapv(f64::abs);
            let up = random_matrix(5, k, seed, 200);
            let tr = net.forward_with_trace(h.view(), BnMode::Inference).unwrap();
            let an = net.backward(&tr, up.view());
            let fd = fd_grad(&net, &h, &up, BnMode::Inference);
            assert!(rel_err(&an, &fd) <= 1e-6, "widths {widths:?}: {}", rel_err(&an, &fd));
        }
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut net = random_net(&[4, 7, 5, 3], Activation::Sigmoid { pmax: 1.0 }, 9).with_batch_norm();
        let mut theta = net.params_flat();
        let mut rng = rng::stream(4, Purpose::Misc, 0);
        let n_w: usize = net.weights().iter().map(|w| w.len()).sum();
        for v in &mut theta[n_w..] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * z;
        }
        net.set_params_flat(&theta).unwrap();
        let h = random_matrix(6, 4, 4, 1);
        let up = random_matrix(6, 3, 4, 2);
        for mode in [BnMode::Train, BnMode::Inference] {
            let tr = net.forward_with_trace(h.view(), mode).unwrap();
            let an = net.backward(&tr, up.view());
            let fd = fd_grad(&net, &h, &up, mode);
            assert!(rel_err(&an, &fd) <= 1e-6, "{mode:?}: {}", rel_err(&an, &fd));
        }
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut net = random_net(&[3, 4, 2], Activation::Identity, 5).with_batch_norm();
        let h = random_matrix(8, 3, 5, 1) + 2.0;
        let tr = net.forward_with_trace(h.view(), BnMode::Train).unwrap();
        net.update_running_stats(&tr);
        let bn = &net.batch_norm().unwrap()[0];
        let pre = h.dot(&net.weights()[0]).mapv(|x| LEAKY.value(x));
        let mean = pre.mean_axis(Axis(0)).unwrap();
        for j in 0..4 {
            assert!((bn.running_mean[j] - 0.1 * mean[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(Mlp::new(vec![Array2::zeros((4, 3)), Array2::zeros((2, 2))], LEAKY, Activation::Identity).is_err());
        let net = random_net(&[4, 3, 2], Activation::Identity, 0);
        assert!(net.forward(Array2::zeros((2, 5)).view()).is_err());
        assert!(net.check_theory_widths(4).is_err());
        assert!(net.check_theory_widths(3).is_ok());
    }

    #[test]
    fn flat_round_trip() {
        let mut net = random_net(&[4, 3, 2], Activation::Identity, 0).with_batch_norm();
        let mut theta = net.params_flat();
        assert_eq!(theta.len(), 12 + 6 + 6);
        theta[0] = 42.0;
        theta[23] = -1.0;
        net.set_params_flat(&theta).unwrap();
        assert_eq!(net.weights()[0][[0, 0]], 42.0);
        assert_eq!(net.batch_norm().unwrap()[0].shift[2], -1.0);
        assert_eq!(net.weight_range(1), 12..18);
    }
}
