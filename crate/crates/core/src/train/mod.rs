//! Supervised, unsupervised and semi-supervised training loops.

pub(crate) mod loss;
mod optim;
mod trace;

pub use loss::{
    evaluate_problem, loss_sl, loss_ssl, loss_ul, squared_on_outputs, ul_on_outputs, LossEval, Problem,
};
pub use optim::{gd_step, rmsprop_step, RmsPropConfig, RmsPropState};
pub use trace::{TrainStatus, TrainTrace};

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::channel::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::nn::{Activation, BnMode, ForwardTrace, Mlp};
use crate::rate;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Sl,
    Ul,
    Ssl,
    /// Supervised fit on the labeled snapshots, then unsupervised training from there.
    SslPretrained,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Sl => "sl",
            TrainMode::Ul => "ul",
            TrainMode::Ssl => "ssl",
            TrainMode::SslPretrained => "ssl_pretrained",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sl" => Ok(TrainMode::Sl),
            "ul" => Ok(TrainMode::Ul),
            "ssl" => Ok(TrainMode::Ssl),
            "ssl_pretrained" | "ssl-pretrained" => Ok(TrainMode::SslPretrained),
            other => Err(Error::invalid(format!("unknown training mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    RmsProp(RmsPropConfig),
}

/// Step-size search for full-batch GD: halve from `eta0` until the first
/// `probe_iters` iterations all satisfy `f+ <= f - eta/2 ||g||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backtrack {
    pub eta0: f64,
    pub probe_iters: usize,
    pub max_halvings: usize,
}

impl Default for Backtrack {
    fn default() -> Self {
        Self {
            eta0: 0.1,
            probe_iters: 10,
            max_halvings: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// GD step size; ignored by RMSprop, which has its own learning rate.
    pub eta: f64,
    pub ssl_lambda: f64,
    /// Minibatch size; `None` trains on the full dataset every iteration.
    pub batch: Option<usize>,
    pub iters: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Enforce the analysis setting: full-batch GD, SCReLU output, no batch
    /// norm, non-increasing widths with `n_1 >= N`.
    pub theory_mode: bool,
    pub backtrack: Option<Backtrack>,
    /// Stop once the recorded loss is at or below this value.
    pub target_loss: Option<f64>,
    /// Supervised iterations before the unsupervised phase of `SslPretrained`.
    pub pretrain_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Ul,
            eta: 1e-3,
            ssl_lambda: 1.0,
            batch: None,
            iters: 100,
            optimizer: Optimizer::Gd,
            seed: 0,
            theory_mode: false,
            backtrack: None,
            target_loss: None,
            pretrain_iters: 0,
        }
    }
}

/// Cycles through a pool of indices in shuffled order, one permutation per epoch.
struct Sampler {
    pool: Vec<usize>,
    batch: Option<usize>,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(pool: Vec<usize>, batch: Option<usize>, seed: u64) -> Self {
        Self {
            order: Vec::new(),
            pos: 0,
            pool,
            batch: batch.filter(|&b| b > 0),
            seed,
            epoch: 0,
        }
    }

    fn next(&mut self) -> Vec<usize> {
        let Some(b) = self.batch.filter(|&b| b < self.pool.len()) else {
            return self.pool.clone();
        };
        // Drop the ragged tail so every batch has the same size.
        if self.pos + b > self.order.len() {
            self.order = self.pool.clone();
            let mut rng = rng::stream(self.seed, Purpose::Minibatch, self.epoch);
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + b].to_vec();
        self.pos += b;
        out
    }
}

struct StepEval {
    value: f64,
    grad: Vec<f64>,
    violation: f64,
    /// Pass whose batch statistics feed the running averages.
    main_trace: ForwardTrace,
}

fn violation(q: &Array2<f64>, pmax: f64) -> f64 {
    q.iter().map(|&v| (-v).max(v - pmax).max(0.0)).fold(0.0, f64::max)
}

struct Objective<'a> {
    ds: &'a Dataset,
    h: Array2<f64>,
    labels: Option<&'a LabelSet>,
    mode: BnMode,
}

impl Objective<'_> {
    fn eval(&self, net: &Mlp, problem: Problem, rows: &[usize]) -> Result<StepEval> {
        let hb = self.h.select(Axis(0), rows);
        let trace = net.forward_with_trace(hb.view(), self.mode)?;
        let snaps = rows.iter().map(|&i| self.ds.snapshot(i));
        let (mut value, g) = match problem {
            Problem::Sl => {
                let labels = self.labels.ok_or_else(|| Error::invalid("labels required"))?;
                let targets = loss::labeled_targets(labels, rows)?;
                squared_on_outputs(trace.output.view(), targets, 0.5)?
            }
            Problem::Ul | Problem::Ssl { .. } => ul_on_outputs(trace.output.view(), snaps)?,
        };
        let mut grad = net.backward(&trace, g.view());
        if let Problem::Ssl { lambda } = problem {
            // Labeled snapshots go through their own pass so the unlabeled
            // batch statistics, and hence the lambda = 0 run, match UL exactly.
            if lambda > 0.0 {
                let labels = self.labels.ok_or_else(|| Error::invalid("labels required"))?;
                let idx = labels.labeled_idx();
                let hl = self.h.select(Axis(0), idx);
                let lt = net.forward_with_trace(hl.view(), self.mode)?;
                let (reg, gl) = squared_on_outputs(lt.output.view(), loss::labeled_targets(labels, idx)?, lambda)?;
                value += reg;
                for (a, b) in grad.iter_mut().zip(net.backward(&lt, gl.view())) {
                    *a += b;
                }
            }
        }
        Ok(StepEval {
            value,
            grad,
            violation: violation(&trace.output, self.ds.pmax()),
            main_trace: trace,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(e: &StepEval) -> bool {
    e.value.is_finite() && e.grad.iter().all(|g| g.is_finite())
}

/// One optimization phase on a fixed problem.
struct Phase<'a> {
    obj: &'a Objective<'a>,
    problem: Problem,
    pool: Vec<usize>,
    iters: usize,
}

struct PhaseOutcome {
    status: TrainStatus,
}

fn run_phase(
    net: &mut Mlp,
    phase: &Phase<'_>,
    cfg: &TrainConfig,
    eta: f64,
    sampler_seed: u64,
    rec: &mut TrainTrace,
) -> PhaseOutcome {
    let mut sampler = Sampler::new(phase.pool.clone(), cfg.batch, sampler_seed);
    let mut rms = RmsPropState::default();
    let mut prev: Option<Vec<f64>> = None;
    for _ in 0..phase.iters {
        let rows = sampler.next();
        let e = match phase.obj.eval(net, phase.problem, &rows) {
            Ok(e) if finite(&e) => e,
            _ => {
                // Back to the last iterate that has a recorded, finite loss.
                if let Some(p) = prev {
                    net.set_params_flat(&p).expect("same parameter count");
                }
                return PhaseOutcome { status: TrainStatus::Diverged };
            }
        };
        rec.loss.push(e.value);
        rec.grad_norm.push(norm(&e.grad));
        rec.violation.push(e.violation);
        if cfg.target_loss.is_some_and(|t| e.value <= t) {
            return PhaseOutcome {
                status: TrainStatus::ReachedTarget,
            };
        }
        if phase.obj.mode == BnMode::Train {
            net.update_running_stats(&e.main_trace);
        }
        let mut theta = net.params_flat();
        match cfg.optimizer {
            Optimizer::Gd => theta = gd_step(&theta, &e.grad, eta),
            Optimizer::RmsProp(rc) => rmsprop_step(&mut rms, &mut theta, &e.grad, &rc),
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return PhaseOutcome { status: TrainStatus::Diverged };
        }
        prev = Some(net.params_flat());
        net.set_params_flat(&theta).expect("same parameter count");
    }
    PhaseOutcome {
        status: TrainStatus::Completed,
    }
}

/// Largest `eta0 / 2^k` whose first `probe_iters` GD steps all satisfy the
/// sufficient-decrease test on the full batch.
pub fn backtrack_eta(net: &Mlp, obj_ds: &Dataset, labels: Option<&LabelSet>, problem: Problem, bt: &Backtrack) -> Result<f64> {
    let obj = Objective {
        ds: obj_ds,
        h: obj_ds.features(),
        labels,
        mode: if net.batch_norm().is_some() { BnMode::Train } else { BnMode::Inference },
    };
    let rows: Vec<usize> = match problem {
        Problem::Sl => labels.map(|l| l.labeled_idx().to_vec()).unwrap_or_default(),
        _ => (0..obj_ds.len()).collect(),
    };
    let mut eta = bt.eta0;
    'search: for _ in 0..=bt.max_halvings {
        let mut probe = net.clone();
        let mut cur = match obj.eval(&probe, problem, &rows) {
            Ok(e) if finite(&e) => e,
            _ => return Err(Error::invalid("loss is not finite at the starting point")),
        };
        for _ in 0..bt.probe_iters {
            let theta = gd_step(&probe.params_flat(), &cur.grad, eta);
            if theta.iter().any(|t| !t.is_finite()) {
                eta *= 0.5;
                continue 'search;
            }
            probe.set_params_flat(&theta).expect("same parameter count");
            let g2: f64 = cur.grad.iter().map(|g| g * g).sum();
            match obj.eval(&probe, problem, &rows) {
                Ok(next) if finite(&next) && next.value <= cur.value - 0.5 * eta * g2 => cur = next,
                _ => {
                    eta *= 0.5;
                    continue 'search;
                }
            }
        }
        return Ok(eta);
    }
    Err(Error::invalid(format!(
        "no step size passed the descent test after {} halvings",
        bt.max_halvings
    )))
}

fn validate(net: &Mlp, ds: &Dataset, labels: Option<&LabelSet>, cfg: &TrainConfig) -> Result<()> {
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {}", cfg.eta)));
    }
    if cfg.ssl_lambda < 0.0 {
        return Err(Error::invalid("ssl_lambda must be non-negative"));
    }
    if !matches!(cfg.mode, TrainMode::Ul) {
        let l = labels.ok_or_else(|| Error::invalid(format!("{:?} training needs labels", cfg.mode)))?;
        if l.labeled_idx().is_empty() {
            return Err(Error::invalid("labeled_idx must not be empty"));
        }
        l.check_alignment(ds)?;
    }
    if net.widths().last() != Some(&ds.users()) || net.widths()[0] != ds.users() * ds.users() {
        return Err(Error::invalid(format!(
            "network widths {:?} do not fit K = {}",
            net.widths(),
            ds.users()
        )));
    }
    if cfg.theory_mode {
        if cfg.optimizer != Optimizer::Gd || cfg.batch.is_some() {
            return Err(Error::invalid("theory mode trains with full-batch gradient descent"));
        }
        if !matches!(net.output(), Activation::Screlu { .. }) {
            return Err(Error::invalid("theory mode needs an SCReLU output layer"));
        }
        if net.batch_norm().is_some() {
            return Err(Error::invalid("theory mode does not allow batch normalization"));
        }
        net.check_theory_widths(ds.len())?;
    }
    Ok(())
}

/// Train from `net0`; returns the final parameters and the trace.
///
/// On divergence the last finite iterate is returned with status `Diverged`.
pub fn train(net0: &Mlp, ds: &Dataset, labels: Option<&LabelSet>, cfg: &TrainConfig) -> Result<(Mlp, TrainTrace)> {
    validate(net0, ds, labels, cfg)?;
    let start = Instant::now();
    let mode = if net0.batch_norm().is_some() { BnMode::Train } else { BnMode::Inference };
    let obj = Objective {
        ds,
        h: ds.features(),
        labels,
        mode,
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    let labeled: Vec<usize> = labels.map(|l| l.labeled_idx().to_vec()).unwrap_or_default();
    let mut phases: Vec<Phase<'_>> = Vec::new();
    match cfg.mode {
        TrainMode::Sl => phases.push(Phase { obj: &obj, problem: Problem::Sl, pool: labeled, iters: cfg.iters }),
        TrainMode::Ul => phases.push(Phase { obj: &obj, problem: Problem::Ul, pool: all, iters: cfg.iters }),
        TrainMode::Ssl => phases.push(Phase {
            obj: &obj,
            problem: Problem::Ssl { lambda: cfg.ssl_lambda },
            pool: all,
            iters: cfg.iters,
        }),
        TrainMode::SslPretrained => {
            phases.push(Phase { obj: &obj, problem: Problem::Sl, pool: labeled, iters: cfg.pretrain_iters });
            phases.push(Phase { obj: &obj, problem: Problem::Ul, pool: all, iters: cfg.iters });
        }
    }

    let eta = match (cfg.optimizer, cfg.backtrack, cfg.batch) {
        (Optimizer::Gd, Some(bt), None) => backtrack_eta(net0, ds, labels, phases[0].problem, &bt)?,
        (Optimizer::RmsProp(rc), _, _) => rc.lr,
        _ => cfg.eta,
    };

    let mut net = net0.clone();
    let mut rec = TrainTrace {
        loss: Vec::new(),
        grad_norm: Vec::new(),
        decay_ratio: Vec::new(),
        violation: Vec::new(),
        final_loss: f64::NAN,
        wall_ms: 0.0,
        eta_used: eta,
        status: TrainStatus::Completed,
        pretrain_iters: 0,
    };
    let mut final_problem = phases[0].problem;
    for (i, phase) in phases.iter().enumerate() {
        final_problem = phase.problem;
        let before = rec.loss.len();
        let out = run_phase(&mut net, phase, cfg, eta, cfg.seed.wrapping_add(i as u64), &mut rec);
        if i == 0 && phases.len() > 1 {
            rec.pretrain_iters = rec.loss.len() - before;
        }
        rec.status = out.status;
        match out.status {
            TrainStatus::Diverged => break,
            TrainStatus::ReachedTarget => break,
            TrainStatus::Completed => {}
        }
    }

    let final_rows: Vec<usize> = match final_problem {
        Problem::Sl => labels.map(|l| l.labeled_idx().to_vec()).unwrap_or_default(),
        _ => (0..ds.len()).collect(),
    };
    match rec.status {
        TrainStatus::Diverged => rec.final_loss = rec.loss.last().copied().unwrap_or(f64::NAN),
        TrainStatus::ReachedTarget => rec.final_loss = *rec.loss.last().expect("target seen on a record"),
        TrainStatus::Completed => {
            rec.final_loss = if cfg.batch.is_some() {
                evaluate_problem(&net, ds, labels, final_problem)?.value
            } else {
                obj.eval(&net, final_problem, &final_rows)?.value
            };
        }
    }

    let n = rec.loss.len();
    rec.decay_ratio = (0..n)
        .map(|m| {
            if cfg.batch.is_some() {
                return None;
            }
            let next = if m + 1 < n {
                rec.loss[m + 1]
            } else if rec.status == TrainStatus::Completed {
                rec.final_loss
            } else {
                return None;
            };
            Some(next / rec.loss[m])
        })
        .collect();
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((net, rec))
}

/// Test-set performance with outputs clamped to the feasible box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_nats: f64,
    pub mean_bits: f64,
    /// Output entries that had to be clamped into `[0, pmax]`.
    pub clamped: usize,
    pub snapshots: usize,
}

pub fn evaluate(net: &Mlp, ds: &Dataset) -> Result<EvalReport> {
    let q = net.forward(ds.features().view())?;
    mean_rate(&q, ds)
}

/// Mean rate of given per-snapshot powers after clamping.
pub fn mean_rate(q: &Array2<f64>, ds: &Dataset) -> Result<EvalReport> {
    let pmax = ds.pmax();
    let mut clamped = 0;
    let mut total = 0.0;
    for (row, snap) in q.rows().into_iter().zip(ds.snapshots()) {
        let p: Vec<f64> = row
            .iter()
            .map(|&v| {
                let c = v.clamp(0.0, pmax);
                if c != v {
                    clamped += 1;
                }
                c
            })
            .collect();
        total += rate::wsr(&p, snap)?;
    }
    let mean = total / ds.len() as f64;
    Ok(EvalReport {
        mean_nats: mean,
        mean_bits: rate::nats_to_bits(mean),
        clamped,
        snapshots: ds.len(),
    })
}

#[cfg(test)]
mod tests;
