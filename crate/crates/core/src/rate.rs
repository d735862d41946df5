//! Weighted sum rate of one snapshot, its power gradient and KKT residuals.
//!
//! All rates are in nats. `R(p) = sum_k w_k ln(1 + g_kk p_k / (sum_{j!=k} g_kj p_j + sigma2))`
//! with `g = |h|^2`.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSnapshot;
use crate::error::{Error, Result};

/// Active-set tolerance for multiplier construction, relative to `pmax`.
pub const ACTIVE_TOL: f64 = 1e-8;

/// Receiver totals `T_k = sum_j g_kj p_j + sigma2` and interference-plus-noise
/// `D_k = T_k - g_kk p_k`.
fn totals(p: &[f64], snap: &ChannelSnapshot) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = snap.users();
    if p.len() != k {
        return Err(Error::invalid(format!("power vector has {} entries, K = {k}", p.len())));
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("p[{i}] is not finite")));
    }
    let mut t = vec![0.0; k];
    let mut d = vec![0.0; k];
    for r in 0..k {
        let mut interf = snap.sigma2();
        for j in 0..k {
            if j != r {
                interf += snap.gain(r, j) * p[j];
            }
        }
        let total = interf + snap.gain(r, r) * p[r];
        if !(interf > 0.0 && total > 0.0) {
            return Err(Error::Domain {
                user: r,
                detail: format!("interference-plus-noise {interf}, total received {total}"),
            });
        }
        t[r] = total;
        d[r] = interf;
    }
    Ok((t, d))
}

pub fn wsr(p: &[f64], snap: &ChannelSnapshot) -> Result<f64> {
    let (t, d) = totals(p, snap)?;
    Ok(snap
        .weights()
        .iter()
        .zip(t.iter().zip(&d))
        .map(|(w, (t, d))| w * (t / d).ln())
        .sum())
}

/// Per-user rate terms `ln(1 + SINR_k)` without weights.
pub fn user_rates(p: &[f64], snap: &ChannelSnapshot) -> Result<Vec<f64>> {
    let (t, d) = totals(p, snap)?;
    Ok(t.iter().zip(&d).map(|(t, d)| (t / d).ln()).collect())
}

/// `dR/dp_j = sum_k w_k g_kj / T_k - sum_{k != j} w_k g_kj / D_k`.
pub fn wsr_grad(p: &[f64], snap: &ChannelSnapshot) -> Result<Vec<f64>> {
    let (t, d) = totals(p, snap)?;
    let k = snap.users();
    let w = snap.weights();
    let mut g = vec![0.0; k];
    for (j, gj) in g.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..k {
            let gain = snap.gain(r, j);
            acc += w[r] * gain / t[r];
            if r != j {
                acc -= w[r] * gain / d[r];
            }
        }
        *gj = acc;
    }
    Ok(g)
}

/// Residuals of the box-constrained rate problem at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stat_residual: f64,
    pub feas_residual: f64,
    pub comp_residual: f64,
    /// Multipliers of `p >= 0` (or of the lower bound of whatever box is checked).
    pub lambda: Vec<f64>,
    /// Multipliers of `p <= pmax`.
    pub mu: Vec<f64>,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stat_residual.max(self.feas_residual).max(self.comp_residual)
    }
}

/// KKT report for minimizing `f` over `[0, pmax]^K` given `grad = df/dp`.
///
/// Multipliers are built by projection on the active set, which is the
/// tightest choice for a fixed point.
pub fn box_kkt(p: &[f64], grad: &[f64], pmax: f64) -> KktReport {
    let tol = ACTIVE_TOL * pmax;
    let k = p.len();
    let mut lambda = vec![0.0; k];
    let mut mu = vec![0.0; k];
    let (mut stat, mut feas, mut comp) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..k {
        if p[i] <= tol {
            lambda[i] = grad[i].max(0.0);
        }
        if p[i] >= pmax - tol {
            mu[i] = (-grad[i]).max(0.0);
        }
        // d/dp [f - lambda p + mu (p - pmax)] = 0
        stat = stat.max((grad[i] - lambda[i] + mu[i]).abs());
        feas = feas.max((-p[i]).max(p[i] - pmax).max(0.0));
        comp = comp.max((lambda[i] * p[i]).abs()).max((mu[i] * (p[i] - pmax)).abs());
    }
    KktReport {
        stat_residual: stat,
        feas_residual: feas,
        comp_residual: comp,
        lambda,
        mu,
    }
}

/// KKT report of `max R(p)` s.t. `0 <= p <= pmax`, written as `min -R`.
pub fn wsr_kkt(p: &[f64], snap: &ChannelSnapshot) -> Result<KktReport> {
    let g = wsr_grad(p, snap)?;
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    Ok(box_kkt(p, &neg, snap.pmax()))
}

/// Interference-free rate at full power; bounds `wsr` over the feasible box.
pub fn wsr_upper_bound(snap: &ChannelSnapshot) -> f64 {
    (0..snap.users())
        .map(|k| snap.weights()[k] * (snap.gain(k, k) * snap.pmax() / snap.sigma2()).ln_1p())
        .sum()
}

pub fn nats_to_bits(x: f64) -> f64 {
    x / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{construct_toy_pair, generate_rayleigh, TOY_DIRECT_DEFAULT};
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn single(h: f64) -> ChannelSnapshot {
        ChannelSnapshot::unit(arr2(&[[h]])).unwrap()
    }

    fn central_diff(p: &[f64], snap: &ChannelSnapshot, step: f64) -> Vec<f64> {
        (0..p.len())
            .map(|j| {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[j] += step;
                b[j] -= step;
                (wsr(&a, snap).unwrap() - wsr(&b, snap).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
        num / den
    }

    #[test]
    fn single_user_values() {
        assert_relative_eq!(wsr(&[1.0], &single(1.0)).unwrap(), LN_2, epsilon = 1e-15);
        assert_relative_eq!(wsr_upper_bound(&single(1.0)), LN_2, epsilon = 1e-15);
        let g = wsr_grad(&[0.3], &single(1.7)).unwrap();
        assert_relative_eq!(g[0], 1.7 * 1.7 / (1.0 + 1.7 * 1.7 * 0.3), epsilon = 1e-15);
    }

    #[test]
    fn zero_power_zero_rate() {
        let ds = generate_rayleigh(5, 3, 1.0, 10.0, 1.0, 1.0, 2).unwrap();
        for s in ds.snapshots() {
            assert_eq!(wsr(&[0.0; 5], s).unwrap(), 0.0);
        }
    }

    #[test]
    fn toy_values() {
        let ds = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let s = ds.snapshot(0);
        assert_relative_eq!(wsr(&[0.0, 1.0], s).unwrap(), 5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(wsr_upper_bound(s), LN_2 + 5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn two_user_gradient_matches_closed_form() {
        // Two-user derivative of the negative rate written out term by term, unit noise and weights.
        let ds = generate_rayleigh(2, 20, 1.0, 3.0, 1.0, 1.0, 8).unwrap();
        let mut rng = crate::rng::stream(1, crate::rng::Purpose::Misc, 0);
        for s in ds.snapshots() {
            let p: [f64; 2] = [rand::Rng::random(&mut rng), rand::Rng::random(&mut rng)];
            let m = s.mags();
            let (h11, h12, h21, h22) = (m[[0, 0]].powi(2), m[[0, 1]].powi(2), m[[1, 0]].powi(2), m[[1, 1]].powi(2));
            let d1 = -h11 / (h11 * p[0] + h12 * p[1] + 1.0)
                + h21 * h22 * p[1] / ((h21 * p[0] + h22 * p[1] + 1.0) * (h21 * p[0] + 1.0));
            let d2 = -h22 / (h21 * p[0] + h22 * p[1] + 1.0)
                + h11 * h12 * p[0] / ((h12 * p[1] + h11 * p[0] + 1.0) * (h12 * p[1] + 1.0));
            let g = wsr_grad(&p, s).unwrap();
            assert_relative_eq!(g[0], -d1, max_relative = 1e-12, epsilon = 1e-14);
            assert_relative_eq!(g[1], -d2, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (idx, &k) in [1usize, 2, 5, 10].iter().enumerate() {
            let ds = generate_rayleigh(k, 100, 1.0, 2.0, 1.0, 1.0, 40 + idx as u64).unwrap();
            let mut rng = crate::rng::stream(idx as u64, crate::rng::Purpose::Misc, 0);
            for s in ds.snapshots() {
                let p: Vec<f64> = (0..k).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
                let fd = central_diff(&p, s, 1e-5);
                let an = wsr_grad(&p, s).unwrap();
                let e = rel_err(&an, &fd);
                assert!(e <= 1e-6, "K={k}: rel err {e}");
            }
        }
    }

    #[test]
    fn domain_errors() {
        let s = ChannelSnapshot::unit(arr2(&[[1.0, 1.0], [1.0, 1.0]])).unwrap();
        assert!(matches!(wsr(&[0.0, -2.0], &s), Err(Error::Domain { user: 0, .. })));
        // Small negative powers stay inside the domain.
        assert!(wsr(&[-0.05, 0.5], &s).is_ok());
        assert!(matches!(wsr(&[0.5], &s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn kkt_at_full_power_single_user() {
        let s = single(2.0);
        let r = wsr_kkt(&[1.0], &s).unwrap();
        assert_eq!(r.stat_residual, 0.0);
        assert_relative_eq!(r.mu[0], wsr_grad(&[1.0], &s).unwrap()[0]);
        assert_eq!(r.lambda[0], 0.0);
    }

    #[test]
    fn kkt_interior_is_gradient_norm() {
        let ds = generate_rayleigh(3, 1, 1.0, 1.0, 1.0, 1.0, 5).unwrap();
        let p = [0.3, 0.6, 0.2];
        let r = wsr_kkt(&p, ds.snapshot(0)).unwrap();
        let g = wsr_grad(&p, ds.snapshot(0)).unwrap();
        assert_eq!(r.stat_residual, g.iter().map(|v| v.abs()).fold(0.0, f64::max));
        assert!(r.lambda.iter().chain(&r.mu).all(|v| *v == 0.0));
        assert_eq!(r.feas_residual, 0.0);
    }

    #[test]
    fn kkt_vanishes_at_toy_optimum() {
        let ds = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let r = wsr_kkt(&[0.0, 1.0], ds.snapshot(0)).unwrap();
        assert_eq!(r.max_residual(), 0.0);
        let r = wsr_kkt(&[1.0, 0.0], ds.snapshot(1)).unwrap();
        assert_eq!(r.max_residual(), 0.0);
    }

    proptest! {
        #[test]
        fn upper_bound_dominates(seed in 0u64..1000, k in 1usize..6, raw in prop::collection::vec(0.0f64..=1.0, 6)) {
            let ds = generate_rayleigh(k, 1, 1.0, 3.0, 1.0, 1.0, seed).unwrap();
            let s = ds.snapshot(0);
            prop_assert!(wsr(&raw[..k], s).unwrap() <= wsr_upper_bound(s) + 1e-12);
        }

        #[test]
        fn interference_never_helps(seed in 0u64..1000, k in 2usize..6, raw in prop::collection::vec(0.0f64..=1.0, 6), bump in 0.0f64..1.0) {
            let ds = generate_rayleigh(k, 1, 1.0, 3.0, 1.0, 1.0, seed).unwrap();
            let s = ds.snapshot(0);
            let p = raw[..k].to_vec();
            let base = user_rates(&p, s).unwrap();
            let mut q = p.clone();
            q[1] += bump;
            let after = user_rates(&q, s).unwrap();
            for r in (0..k).filter(|&r| r != 1) {
                prop_assert!(after[r] <= base[r] + 1e-15);
            }
        }

        #[test]
        fn kkt_residuals_nonnegative(seed in 0u64..1000, raw in prop::collection::vec(-0.01f64..=1.01, 3)) {
            let ds = generate_rayleigh(3, 1, 1.0, 1.0, 1.0, 1.0, seed).unwrap();
            let r = wsr_kkt(&raw, ds.snapshot(0)).unwrap();
            prop_assert!(r.stat_residual >= 0.0 && r.feas_residual >= 0.0 && r.comp_residual >= 0.0);
            prop_assert!(r.lambda.iter().chain(&r.mu).all(|v| *v >= 0.0));
        }
    }
}
