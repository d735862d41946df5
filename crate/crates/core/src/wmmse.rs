//! Scalar WMMSE recursion for the per-snapshot rate problem and dataset labelling.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSnapshot, Dataset, LabelQuality, LabelSet, SolverMeta};
use crate::error::{Error, Result};
use crate::rate::{self, KktReport};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmmseOptions {
    pub max_iter: usize,
    /// Stop once `max |v - v_prev| <= tol` ...
    pub tol: f64,
    /// ... and the stationarity residual is at most this.
    pub kkt_gate: f64,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            kkt_gate: 1e-5,
        }
    }
}

impl WmmseOptions {
    /// Settings that drive labels to residuals near machine precision.
    pub fn tight() -> Self {
        Self {
            max_iter: 200_000,
            tol: 1e-14,
            kkt_gate: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmmseTrace {
    /// Rate at the start point followed by one entry per iteration.
    pub wsr_per_iter: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub final_kkt: KktReport,
}

impl WmmseTrace {
    /// Largest drop between consecutive recorded rates (0 for a monotone run).
    pub fn max_decrease(&self) -> f64 {
        self.wsr_per_iter
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

const DENOM_GUARD: f64 = 1e-30;

/// Run WMMSE from `p0`. The returned point is always feasible; `converged`
/// is false when `max_iter` ran out first.
pub fn wmmse_solve(snap: &ChannelSnapshot, p0: &[f64], opts: &WmmseOptions) -> Result<(Vec<f64>, WmmseTrace)> {
    let k = snap.users();
    let pmax = snap.pmax();
    if p0.len() != k {
        return Err(Error::invalid(format!("start point has {} entries, K = {k}", p0.len())));
    }
    if p0.iter().any(|p| !(0.0..=pmax).contains(p)) {
        return Err(Error::invalid("start point must lie in [0, pmax]^K"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {}", opts.tol)));
    }
    let vmax = pmax.sqrt();
    let w = snap.weights();
    let h = snap.mags();
    let mut v: Vec<f64> = p0.iter().map(|p| p.sqrt()).collect();
    let mut u = vec![0.0; k];
    let mut wm = vec![0.0; k];
    let mut p: Vec<f64> = v.iter().map(|x| x * x).collect();
    let mut trace = vec![rate::wsr(&p, snap)?];
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iter {
        iters += 1;
        for r in 0..k {
            let mut total = snap.sigma2();
            for j in 0..k {
                total += snap.gain(r, j) * v[j] * v[j];
            }
            u[r] = h[[r, r]] * v[r] / total;
            wm[r] = 1.0 / (1.0 - u[r] * h[[r, r]] * v[r]);
        }
        let mut dv = 0.0f64;
        for j in 0..k {
            let den: f64 = (0..k).map(|r| w[r] * wm[r] * u[r] * u[r] * snap.gain(r, j)).sum();
            let next = if den < DENOM_GUARD {
                0.0
            } else {
                (w[j] * wm[j] * u[j] * h[[j, j]] / den).clamp(0.0, vmax)
            };
            dv = dv.max((next - v[j]).abs());
            v[j] = next;
        }
        for (pj, vj) in p.iter_mut().zip(&v) {
            *pj = (vj * vj).min(pmax);
        }
        trace.push(rate::wsr(&p, snap)?);
        if dv <= opts.tol && rate::wsr_kkt(&p, snap)?.stat_residual <= opts.kkt_gate {
            converged = true;
            break;
        }
    }
    let final_kkt = rate::wsr_kkt(&p, snap)?;
    Ok((
        p,
        WmmseTrace {
            wsr_per_iter: trace,
            iters,
            converged,
            final_kkt,
        },
    ))
}

/// Start points used for high-quality labels: `restarts` uniform draws, the
/// all-`pmax` point and every single-user-on point.
fn high_quality_starts(snap: &ChannelSnapshot, restarts: usize, seed: u64, n: usize) -> Vec<Vec<f64>> {
    let k = snap.users();
    let pmax = snap.pmax();
    let mut rng = rng::stream(seed, Purpose::LabelRestart, n as u64);
    let mut starts: Vec<Vec<f64>> = (0..restarts)
        .map(|_| (0..k).map(|_| rng.random::<f64>() * pmax).collect())
        .collect();
    starts.push(vec![pmax; k]);
    for on in 0..k {
        let mut s = vec![0.0; k];
        s[on] = pmax;
        starts.push(s);
    }
    starts
}

/// Label one snapshot; returns the best point found and its bookkeeping.
pub fn label_snapshot(
    snap: &ChannelSnapshot,
    quality: LabelQuality,
    restarts: usize,
    seed: u64,
    n: usize,
    opts: &WmmseOptions,
) -> Result<(Vec<f64>, SolverMeta)> {
    let starts = match quality {
        LabelQuality::Low => vec![vec![snap.pmax(); snap.users()]],
        LabelQuality::High => high_quality_starts(snap, restarts, seed, n),
    };
    let mut best: Option<(Vec<f64>, SolverMeta)> = None;
    for s in starts {
        let (p, tr) = wmmse_solve(snap, &s, opts)?;
        let meta = SolverMeta {
            iters: tr.iters,
            kkt_residual: tr.final_kkt.stat_residual,
            wsr: *tr.wsr_per_iter.last().expect("trace holds the start point"),
        };
        // Strictly better rate wins; on ties keep the earlier, better-certified start.
        let better = match &best {
            None => true,
            Some((_, b)) => {
                meta.wsr > b.wsr || (meta.wsr == b.wsr && meta.kkt_residual < b.kkt_residual)
            }
        };
        if better {
            best = Some((p, meta));
        }
    }
    Ok(best.expect("at least one start point"))
}

/// Label the snapshots in `labeled_idx`; the others carry no label.
pub fn label_dataset(
    ds: &Dataset,
    quality: LabelQuality,
    labeled_idx: &[usize],
    restarts: usize,
    seed: u64,
    opts: &WmmseOptions,
) -> Result<LabelSet> {
    if labeled_idx.is_empty() {
        return Err(Error::invalid("labeled_idx must not be empty"));
    }
    if quality == LabelQuality::High && restarts == 0 {
        return Err(Error::invalid("high-quality labels need at least one restart"));
    }
    let mut labels = vec![None; ds.len()];
    let mut meta = vec![None; ds.len()];
    for &n in labeled_idx {
        let snap = ds
            .snapshots()
            .get(n)
            .ok_or_else(|| Error::invalid(format!("labeled index {n} out of range for N = {}", ds.len())))?;
        let (p, m) = label_snapshot(snap, quality, restarts, seed, n, opts)?;
        labels[n] = Some(Array1::from(p));
        meta[n] = Some(m);
    }
    LabelSet::new(labels, quality, meta)
}
