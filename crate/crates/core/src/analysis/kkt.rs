use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::channel::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::nn::{BnMode, Mlp};
use crate::rate;
use crate::train::loss::{labeled_targets, squared_on_outputs, ul_on_outputs, Problem};

/// Residuals of the Lagrangian conditions of a training problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingKkt {
    /// Max-abs of the Lagrangian's parameter gradient.
    pub stat_residual: f64,
    /// Largest box violation of the network outputs.
    pub feas_residual: f64,
    pub comp_residual: f64,
    /// Multipliers of `q >= 0`, one row per evaluated snapshot.
    pub lambda: Array2<f64>,
    /// Multipliers of `q <= pmax`.
    pub mu: Array2<f64>,
    /// Snapshot index of each row.
    pub rows: Vec<usize>,
    /// Rows whose multipliers were taken from the label's rate conditions.
    pub transported: usize,
}

/// Stationarity, feasibility and complementarity of `problem` at the current
/// parameters (batch norm in inference mode).
///
/// For the rate-based problems the multipliers of a labeled snapshot are the
/// rate-problem multipliers at its label; every other row gets multipliers by
/// projecting the output gradient on the active bounds of its output.
pub fn training_kkt(net: &Mlp, ds: &Dataset, labels: Option<&LabelSet>, problem: Problem) -> Result<TrainingKkt> {
    if let Some(l) = labels {
        l.check_alignment(ds)?;
    }
    let need = || labels.ok_or_else(|| Error::invalid("this problem needs labels"));
    let h = ds.features();
    let pmax = ds.pmax();
    let (rows, upstream, trace, transport): (Vec<usize>, Array2<f64>, _, bool) = match problem {
        Problem::Sl => {
            let l = need()?;
            let idx = l.labeled_idx().to_vec();
            if idx.is_empty() {
                return Err(Error::invalid("no labeled snapshots"));
            }
            let trace = net.forward_with_trace(h.select(Axis(0), &idx).view(), BnMode::Inference)?;
            let (_, g) = squared_on_outputs(trace.output.view(), labeled_targets(l, &idx)?, 0.5)?;
            (idx, g, trace, false)
        }
        Problem::Ul => {
            let trace = net.forward_with_trace(h.view(), BnMode::Inference)?;
            let (_, g) = ul_on_outputs(trace.output.view(), ds.snapshots())?;
            ((0..ds.len()).collect(), g, trace, true)
        }
        Problem::Ssl { lambda } => {
            if lambda < 0.0 {
                return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
            }
            let l = need()?;
            let trace = net.forward_with_trace(h.view(), BnMode::Inference)?;
            let (_, mut g) = ul_on_outputs(trace.output.view(), ds.snapshots())?;
            let idx = l.labeled_idx();
            let q_lab = trace.output.select(Axis(0), idx);
            let (_, g_reg) = squared_on_outputs(q_lab.view(), labeled_targets(l, idx)?, lambda)?;
            for (r, &n) in idx.iter().enumerate() {
                let mut row = g.row_mut(n);
                row += &g_reg.row(r);
            }
            ((0..ds.len()).collect(), g, trace, true)
        }
    };

    let q = &trace.output;
    let mut lam = Array2::zeros(q.raw_dim());
    let mut mu = Array2::zeros(q.raw_dim());
    let mut transported = 0;
    for (r, &n) in rows.iter().enumerate() {
        let label = if transport { labels.and_then(|l| l.label(n)) } else { None };
        let rep = match label {
            Some(p_bar) => {
                transported += 1;
                rate::wsr_kkt(p_bar.as_slice().expect("contiguous label"), ds.snapshot(n))?
            }
            None => rate::box_kkt(&q.row(r).to_vec(), &upstream.row(r).to_vec(), pmax),
        };
        for j in 0..q.ncols() {
            lam[[r, j]] = rep.lambda[j];
            mu[[r, j]] = rep.mu[j];
        }
    }

    let lagrangian = &upstream - &lam + &mu;
    let grad = net.backward(&trace, lagrangian.view());
    let stat = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let mut feas = 0.0f64;
    let mut comp = 0.0f64;
    for ((&qv, &l), &m) in q.iter().zip(&lam).zip(&mu) {
        feas = feas.max((-qv).max(qv - pmax).max(0.0));
        comp = comp.max((l * qv).abs()).max((m * (qv - pmax)).abs());
    }
    Ok(TrainingKkt {
        stat_residual: stat,
        feas_residual: feas,
        comp_residual: comp,
        lambda: lam,
        mu,
        rows,
        transported,
    })
}

/// Tolerances of the inclusion check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionTolerances {
    /// Largest SL loss treated as zero.
    pub eps: f64,
    /// Largest label rate-KKT residual treated as stationary.
    pub delta: f64,
    /// Largest accepted downstream stationarity residual.
    pub tol: f64,
}

impl Default for InclusionTolerances {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            delta: 1e-8,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    PreconditionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub sl_loss: f64,
    pub label_kkt_max: f64,
    pub ul_stat_residual: f64,
    pub ssl_stat_residual: f64,
    pub ssl_lambda: f64,
    pub tolerances: InclusionTolerances,
    pub verdict: Verdict,
    pub detail: String,
}

/// Check that SL-fitted parameters are stationary for the UL and SSL problems.
///
/// `net` should be the result of SL training on `labels`; every snapshot must
/// be labeled.
pub fn inclusion_test(
    net: &Mlp,
    ds: &Dataset,
    labels: &LabelSet,
    ssl_lambda: f64,
    tol: InclusionTolerances,
) -> Result<InclusionReport> {
    labels.check_alignment(ds)?;
    let mut label_kkt_max = 0.0f64;
    for &n in labels.labeled_idx() {
        let p = labels.label(n).expect("indexed label");
        let r = match rate::wsr_kkt(p.as_slice().expect("contiguous label"), ds.snapshot(n)) {
            Ok(r) => r.max_residual(),
            Err(_) => f64::INFINITY,
        };
        label_kkt_max = label_kkt_max.max(r);
    }
    let sl_loss = crate::train::loss::loss_sl(net, ds, labels)?.value;
    let ul = training_kkt(net, ds, Some(labels), Problem::Ul)?.stat_residual;
    let ssl = training_kkt(net, ds, Some(labels), Problem::Ssl { lambda: ssl_lambda })?.stat_residual;

    let unlabeled = ds.len() - labels.labeled_idx().len();
    let (verdict, detail) = if unlabeled > 0 {
        (Verdict::PreconditionFailed, format!("{unlabeled} snapshots have no label"))
    } else if !(label_kkt_max <= tol.delta) {
        (
            Verdict::PreconditionFailed,
            format!("labels are not stationary: residual {label_kkt_max:e} > {:e}", tol.delta),
        )
    } else if !(sl_loss <= tol.eps) {
        (Verdict::Fail, format!("SL loss {sl_loss:e} > {:e}", tol.eps))
    } else if !(ul <= tol.tol && ssl <= tol.tol) {
        (Verdict::Fail, format!("residuals UL {ul:e}, SSL {ssl:e} exceed {:e}", tol.tol))
    } else {
        (Verdict::Pass, String::new())
    };
    Ok(InclusionReport {
        sl_loss,
        label_kkt_max,
        ul_stat_residual: ul,
        ssl_stat_residual: ssl,
        ssl_lambda,
        tolerances: tol,
        verdict,
        detail,
    })
}
