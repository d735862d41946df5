//! Losses on network outputs and their gradients through the network.

use ndarray::{Array1, Array2, ArrayView2};

use crate::channel::{ChannelSnapshot, Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::nn::{BnMode, Mlp};
use crate::rate;

/// Loss value with its gradient in output space and in parameter space.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// `d loss / d q`, one row per evaluated snapshot.
    pub output_grad: Array2<f64>,
    /// Gradient with respect to `Mlp::params_flat`.
    pub param_grad: Vec<f64>,
}

/// `-sum_n R(q_n)` and its output gradient.
pub fn ul_on_outputs<'a>(
    q: ArrayView2<f64>,
    snaps: impl IntoIterator<Item = &'a ChannelSnapshot>,
) -> Result<(f64, Array2<f64>)> {
    let mut value = 0.0;
    let mut grad = Array2::zeros(q.raw_dim());
    let mut rows = 0;
    for (i, s) in snaps.into_iter().enumerate() {
        let row = q.row(i).to_vec();
        value -= rate::wsr(&row, s)?;
        for (j, g) in rate::wsr_grad(&row, s)?.into_iter().enumerate() {
            grad[[i, j]] = -g;
        }
        rows += 1;
    }
    if rows != q.nrows() {
        return Err(Error::invalid(format!("{} output rows but {rows} snapshots", q.nrows())));
    }
    Ok((value, grad))
}

/// `scale * sum_n ||q_n - y_n||^2` and its output gradient.
pub fn squared_on_outputs<'a>(
    q: ArrayView2<f64>,
    targets: impl IntoIterator<Item = &'a Array1<f64>>,
    scale: f64,
) -> Result<(f64, Array2<f64>)> {
    let mut value = 0.0;
    let mut grad = Array2::zeros(q.raw_dim());
    let mut rows = 0;
    for (i, y) in targets.into_iter().enumerate() {
        if y.len() != q.ncols() {
            return Err(Error::Alignment(format!("label of length {} for {} outputs", y.len(), q.ncols())));
        }
        for j in 0..q.ncols() {
            let r = q[[i, j]] - y[j];
            value += scale * r * r;
            grad[[i, j]] = 2.0 * scale * r;
        }
        rows += 1;
    }
    if rows != q.nrows() {
        return Err(Error::invalid(format!("{} output rows but {rows} targets", q.nrows())));
    }
    Ok((value, grad))
}

pub(crate) fn labeled_targets<'a>(labels: &'a LabelSet, idx: &[usize]) -> Result<Vec<&'a Array1<f64>>> {
    idx.iter()
        .map(|&i| {
            labels
                .label(i)
                .ok_or_else(|| Error::invalid(format!("snapshot {i} has no label")))
        })
        .collect()
}

fn rows_of(h: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    h.select(ndarray::Axis(0), idx)
}

/// Which training problem to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Problem {
    Sl,
    Ul,
    Ssl { lambda: f64 },
}

/// Full-data loss of `problem` with batch norm in inference mode.
///
/// SL runs over the labeled snapshots with the halved squared error; SSL adds
/// `lambda` times the unhalved squared error over the labeled snapshots to
/// the UL loss over all snapshots.
pub fn evaluate_problem(net: &Mlp, ds: &Dataset, labels: Option<&LabelSet>, problem: Problem) -> Result<LossEval> {
    problem_with_mode(net, ds, labels, problem, BnMode::Inference)
}

pub(crate) fn problem_with_mode(
    net: &Mlp,
    ds: &Dataset,
    labels: Option<&LabelSet>,
    problem: Problem,
    mode: BnMode,
) -> Result<LossEval> {
    let h = ds.features();
    let need_labels = || labels.ok_or_else(|| Error::invalid("this loss needs labels"));
    match problem {
        Problem::Sl => {
            let labels = need_labels()?;
            let idx = labels.labeled_idx();
            if idx.is_empty() {
                return Err(Error::invalid("no labeled snapshots"));
            }
            let trace = net.forward_with_trace(rows_of(&h, idx).view(), mode)?;
            let (value, g) = squared_on_outputs(trace.output.view(), labeled_targets(labels, idx)?, 0.5)?;
            let param_grad = net.backward(&trace, g.view());
            Ok(LossEval {
                value,
                output_grad: g,
                param_grad,
            })
        }
        Problem::Ul => {
            let trace = net.forward_with_trace(h.view(), mode)?;
            let (value, g) = ul_on_outputs(trace.output.view(), ds.snapshots())?;
            let param_grad = net.backward(&trace, g.view());
            Ok(LossEval {
                value,
                output_grad: g,
                param_grad,
            })
        }
        Problem::Ssl { lambda } => {
            if lambda < 0.0 {
                return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
            }
            let labels = need_labels()?;
            let idx = labels.labeled_idx();
            let trace = net.forward_with_trace(h.view(), mode)?;
            let (ul, mut g) = ul_on_outputs(trace.output.view(), ds.snapshots())?;
            let q_lab = rows_of(&trace.output, idx);
            let (reg, g_reg) = squared_on_outputs(q_lab.view(), labeled_targets(labels, idx)?, lambda)?;
            for (r, &n) in idx.iter().enumerate() {
                let mut row = g.row_mut(n);
                row += &g_reg.row(r);
            }
            let param_grad = net.backward(&trace, g.view());
            Ok(LossEval {
                value: ul + reg,
                output_grad: g,
                param_grad,
            })
        }
    }
}

pub fn loss_sl(net: &Mlp, ds: &Dataset, labels: &LabelSet) -> Result<LossEval> {
    evaluate_problem(net, ds, Some(labels), Problem::Sl)
}

pub fn loss_ul(net: &Mlp, ds: &Dataset) -> Result<LossEval> {
    evaluate_problem(net, ds, None, Problem::Ul)
}

pub fn loss_ssl(net: &Mlp, ds: &Dataset, labels: &LabelSet, lambda: f64) -> Result<LossEval> {
    evaluate_problem(net, ds, Some(labels), Problem::Ssl { lambda })
}
