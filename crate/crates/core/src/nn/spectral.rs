use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Activation, Mlp};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const ZERO_SV_REL: f64 = 1e-12;

/// Singular values in descending order, with numerically zero ones flushed to 0.
pub fn singular_values(m: ArrayView2<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let cut = sv[0] * ZERO_SV_REL;
    for s in &mut sv {
        if *s < cut {
            *s = 0.0;
        }
    }
    sv
}

pub fn sigma_max(m: ArrayView2<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn sigma_min(m: ArrayView2<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Singular-value diagnostics of a network at given weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `sigma_min(W_l)` per layer.
    pub lam_lo: Vec<f64>,
    /// `2/3 (1 + sigma_max(W_l))` for the first two layers, `sigma_max(W_l)` after.
    pub lam_hi: Vec<f64>,
    /// `sigma_min(a(H W_1))`.
    pub lam_h: f64,
    /// `(3/2)^L ||H||_F prod lam_hi`.
    pub alpha_h: f64,
    /// Geometric-decay constant of supervised gradient descent.
    pub alpha0: f64,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    /// Forward Lipschitz constant of the network in its weights.
    pub c1: f64,
    /// `lam_h >= max(lambda1, lambda2)`.
    pub condition_24: bool,
    pub h_fro: f64,
    pub h_sigma_max: f64,
    /// Supervised loss at these weights, when labels were given.
    pub f_sl: Option<f64>,
}

fn lam_hi(l: usize, smax: f64) -> f64 {
    if l < 2 {
        2.0 / 3.0 * (1.0 + smax)
    } else {
        smax
    }
}

/// Forward Lipschitz constant between two weight sets of the same shape:
/// `sqrt(L N n_L) ||H||_F prod lam'_l / min lam'_l` with `lam'_l` the larger
/// top singular value of the pair.
pub fn forward_lipschitz(a: &Mlp, b: &Mlp, h: ArrayView2<f64>) -> f64 {
    let depth = a.depth();
    let lam: Vec<f64> = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| sigma_max(x.view()).max(sigma_max(y.view())))
        .collect();
    let prod: f64 = lam.iter().product();
    let min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let n_l = *a.widths().last().expect("non-empty");
    (depth as f64 * h.nrows() as f64 * n_l as f64).sqrt() * frobenius(h) * prod / min
}

/// Recompute every diagnostic from the current weights.
///
/// `labels` (`N x n_L`) enables the loss-dependent constants `lambda1` and
/// `lambda2`; they also need an SCReLU output and at least two layers.
pub fn spectral_report(net: &Mlp, h: ArrayView2<f64>, labels: Option<ArrayView2<f64>>) -> Result<SpectralReport> {
    let depth = net.depth();
    if h.ncols() != net.widths()[0] {
        return Err(Error::invalid("input width does not match the network"));
    }
    let gamma = match net.hidden() {
        Activation::SmoothedLeaky { gamma, .. } => gamma,
        other => other.slope_lower_bound(),
    };
    let mut lam_lo = Vec::with_capacity(depth);
    let mut lam_hi_v = Vec::with_capacity(depth);
    for (l, w) in net.weights().iter().enumerate() {
        let sv = singular_values(w.view());
        lam_lo.push(*sv.last().unwrap_or(&0.0));
        lam_hi_v.push(lam_hi(l, *sv.first().unwrap_or(&0.0)));
    }
    let hidden = net.hidden();
    let first: Array2<f64> = h.dot(&net.weights()[0]).mapv(|x| hidden.value(x));
    let lam_h = sigma_min(first.view());
    let h_fro = frobenius(h);
    let h_sigma_max = sigma_max(h);
    let big_l = depth as i32;
    let prod_hi: f64 = lam_hi_v.iter().product();
    let alpha_h = 1.5f64.powi(big_l) * h_fro * prod_hi;

    let lo_tail: f64 = lam_lo.iter().skip(2).product();
    let hi_tail: f64 = lam_hi_v.iter().skip(2).product();
    let alpha0 = (-2f64).exp() * gamma.powi(2 * (big_l - 2)) * 0.5f64.powi(2 * (big_l - 1)) * lo_tail * lo_tail * lam_h * lam_h;

    let f_sl = match labels {
        Some(y) => {
            let out = net.forward(h)?;
            if out.dim() != y.dim() {
                return Err(Error::Alignment(format!(
                    "labels have shape {:?}, outputs {:?}",
                    y.dim(),
                    out.dim()
                )));
            }
            Some(0.5 * (&out - &y).iter().map(|v| v * v).sum::<f64>())
        }
        None => None,
    };

    let (lambda1, lambda2) = match (f_sl, net.output(), depth >= 2) {
        (Some(f0), Activation::Screlu { alpha, .. }, true) => {
            let common = gamma.powi(4) / 3.0
                * (6.0 / (gamma * gamma)).powi(big_l)
                * h_fro
                * (2.0 * f0).sqrt()
                * hi_tail
                / (lo_tail * lo_tail)
                * (2.0 * alpha_h / alpha).exp();
            let tail_min = (2..depth)
                .map(|l| lam_lo[l] * lam_hi_v[l])
                .fold(f64::INFINITY, f64::min);
            let spread = (2.0 * lam_hi_v[0] * lam_hi_v[1] / tail_min)
                .max(lam_hi_v[0])
                .max(lam_hi_v[1]);
            let l1 = (common * spread).sqrt();
            let l2 = (2.0 * common * h_sigma_max * lam_hi_v[1]).cbrt();
            (Some(l1), Some(l2))
        }
        _ => (None, None),
    };
    let condition_24 = match (lambda1, lambda2) {
        (Some(a), Some(b)) => lam_h >= a.max(b),
        _ => false,
    };
    Ok(SpectralReport {
        c1: forward_lipschitz(net, net, h),
        lam_lo,
        lam_hi: lam_hi_v,
        lam_h,
        alpha_h,
        alpha0,
        lambda1,
        lambda2,
        condition_24,
        h_fro,
        h_sigma_max,
        f_sl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn singular_values_of_known_matrices() {
        let m = arr2(&[[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]]);
        assert_eq!(singular_values(m.view()), vec![4.0, 3.0]);
        let rank1 = arr2(&[[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(sigma_min(rank1.view()), 0.0);
        assert!((sigma_max(rank1.view()) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_identity_block() {
        let mut w = Array2::zeros((5, 3));
        for i in 0..3 {
            w[[i, i]] = 7.0;
        }
        assert_eq!(sigma_min(w.view()), 7.0);
        assert_eq!(sigma_max(w.view()), 7.0);
    }

    #[test]
    fn zero_layer_kills_alpha0() {
        let net = Mlp::new(
            vec![
                arr2(&[[1.0, 0.5], [0.2, 1.0]]),
                arr2(&[[1.0, 0.0], [0.0, 1.0]]),
                Array2::zeros((2, 2)),
            ],
            Activation::default(),
            Activation::Screlu { alpha: 1.0, pmax: 1.0 },
        )
        .unwrap();
        let h = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let r = spectral_report(&net, h.view(), None).unwrap();
        assert_eq!(r.lam_lo[2], 0.0);
        assert_eq!(r.alpha0, 0.0);
        assert!(r.lambda1.is_none() && !r.condition_24);
    }
}
