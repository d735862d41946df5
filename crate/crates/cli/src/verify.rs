//! End-to-end numerical checks of the landscape, stationarity-inclusion and
//! geometric-decay results on small fixed instances.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, ValueEnum};
use ndarray::{arr2, Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use wsrnet::analysis::{grid_bruteforce, inclusion_test, verify_local_min, InclusionTolerances, Verdict};
use wsrnet::channel::{construct_toy_pair, generate_rayleigh, LabelQuality, TOY_DIRECT_DEFAULT};
use wsrnet::nn::{init_assumption3, init_experiment, layer_widths, Activation, Assumption3Config};
use wsrnet::rate::{wsr_kkt, wsr_upper_bound};
use wsrnet::train::{train, Backtrack, TrainConfig, TrainMode, TrainStatus};
use wsrnet::wmmse::{label_dataset, WmmseOptions};

use crate::config::{resolve, sidecar, write_resolved};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Toy-pair landscape: global optimum and the suboptimal local minimum.
    #[value(alias = "claim1")]
    #[serde(alias = "claim1")]
    Landscape,
    /// Zero-loss supervised solutions are SSL and UL stationary.
    #[value(alias = "claim24")]
    #[serde(alias = "claim24")]
    Inclusion,
    /// Supervised geometric decay and the unsupervised gradient bound.
    #[value(alias = "claim3")]
    #[serde(alias = "claim3")]
    Decay,
    All,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    /// Cross-link magnitude of the toy pair.
    #[arg(long)]
    f: Option<f64>,
    /// Verdict JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: Value,
}

#[derive(Debug, Serialize)]
struct VerdictFile {
    suite: Suite,
    passed: bool,
    checks: Vec<Check>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn landscape(f: f64) -> CliResult<Check> {
    let ds = construct_toy_pair(f, TOY_DIRECT_DEFAULT)?.with_weights(Array1::from_elem(2, 0.5))?;
    let bf = grid_bruteforce(&ds, 0.01)?;
    let trap = arr2(&[[1.0, 0.0], [1.0, 0.0]]);
    let cert = verify_local_min(&ds, &trap, 0.05, 0.005)?;
    let trap_rate = -cert.loss_at_star;
    let global = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
    Ok(Check {
        name: "landscape",
        passed: bf.argmax == global && cert.is_local_min && trap_rate < bf.max,
        detail: json!({
            "f": f,
            "argmax": rows(&bf.argmax),
            "max_rate_nats": bf.max,
            "trap": rows(&trap),
            "trap_rate_nats": trap_rate,
            "local_min": cert.is_local_min,
            "points_checked": cert.points_checked,
            "worst_gap": cert.worst_gap,
        }),
    })
}

fn inclusion() -> CliResult<Check> {
    let ds = generate_rayleigh(2, 4, 1.0, 2.0, 1.0, 1.0, 3)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let labels = label_dataset(&ds, LabelQuality::High, &idx, 8, 3, &WmmseOptions::tight())?;
    let net = init_experiment(
        &layer_widths(2, &[16, 8]),
        Activation::default(),
        Activation::Screlu { alpha: 1.0, pmax: 1.0 },
        3,
    )?;
    let cfg = TrainConfig {
        mode: TrainMode::Sl,
        iters: 200_000,
        backtrack: Some(Backtrack::default()),
        target_loss: Some(1e-24),
        ..Default::default()
    };
    let (fit, _) = train(&net, &ds, Some(&labels), &cfg)?;
    let rep = inclusion_test(&fit, &ds, &labels, 1.0, InclusionTolerances::default())?;
    let mut label_kkt = 0.0f64;
    for &n in &idx {
        let p = labels.label(n).expect("fully labeled");
        label_kkt = label_kkt.max(wsr_kkt(p.as_slice().expect("contiguous"), ds.snapshot(n))?.max_residual());
    }
    Ok(Check {
        name: "inclusion",
        passed: rep.verdict == Verdict::Pass,
        detail: json!({ "label_kkt_max": label_kkt, "report": rep }),
    })
}

fn decay() -> CliResult<Vec<Check>> {
    let ds = generate_rayleigh(2, 8, 1.0, 1.0, 1.0, 1.0, 6)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let labels = label_dataset(&ds, LabelQuality::High, &idx, 4, 6, &WmmseOptions::default())?;
    let y = Array2::from_shape_fn((ds.len(), 2), |(n, j)| labels.label(n).expect("fully labeled")[j]);
    let h = ds.features();
    let widths = [4, 8usize.max(ds.len()), 4, 2];
    let mut found = None;
    for k in 1..=20 {
        let c = 10f64.powi(k);
        let cfg = Assumption3Config {
            c,
            v: (0.1 / c).powi(2),
            seed: 10,
            ..Default::default()
        };
        let (net, rep) = init_assumption3(&widths, &cfg, h.view(), Some(y.view()))?;
        if rep.condition_24 {
            found = Some((net, rep, c));
            break;
        }
    }
    let Some((net, rep, c)) = found else {
        return Ok(vec![Check {
            name: "sl_geometric_decay",
            passed: false,
            detail: json!({ "error": "no c up to 1e20 satisfies the spectral condition" }),
        }]);
    };

    let sl_cfg = TrainConfig {
        mode: TrainMode::Sl,
        iters: 3_000_000,
        theory_mode: true,
        backtrack: Some(Backtrack::default()),
        target_loss: Some(1e-10),
        ..Default::default()
    };
    let (_, tr) = train(&net, &ds, Some(&labels), &sl_cfg)?;
    let bound = 1.0 - tr.eta_used * rep.alpha0;
    let ratios: Vec<f64> = tr.decay_ratio.iter().flatten().copied().collect();
    let worst = ratios.iter().copied().fold(0.0f64, f64::max);
    let violations = ratios.iter().filter(|r| **r > bound).count();
    let sl = Check {
        name: "sl_geometric_decay",
        passed: tr.status == TrainStatus::ReachedTarget && violations == 0,
        detail: json!({
            "c": c,
            "alpha0": rep.alpha0,
            "eta": tr.eta_used,
            "iterations": tr.iterations(),
            "final_loss": tr.final_loss,
            "worst_ratio": worst,
            "bound": bound,
            "violations": violations,
        }),
    };

    const M: usize = 5000;
    let ul_cfg = TrainConfig {
        mode: TrainMode::Ul,
        iters: M,
        theory_mode: true,
        backtrack: Some(Backtrack {
            probe_iters: M,
            ..Default::default()
        }),
        ..Default::default()
    };
    let (_, tr) = train(&net, &ds, None, &ul_cfg)?;
    let f_lb = -ds.snapshots().iter().map(wsr_upper_bound).sum::<f64>();
    let m = tr.loss.len();
    let monotone = tr.loss.windows(2).all(|w| w[1] <= w[0]);
    let lhs = tr.grad_norm.iter().map(|g| g * g).sum::<f64>() / m as f64;
    let rhs = 2.0 * (tr.loss[0] - f_lb) / (tr.eta_used * m as f64);
    let ul = Check {
        name: "ul_gradient_bound",
        passed: tr.status == TrainStatus::Completed && monotone && lhs <= rhs,
        detail: json!({
            "iterations": m,
            "eta": tr.eta_used,
            "monotone": monotone,
            "mean_grad_sq": lhs,
            "bound": rhs,
            "f_lb": f_lb,
        }),
    };
    Ok(vec![sl, ul])
}

pub fn run(a: VerifyArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let suite = r.suite.unwrap_or(Suite::All);
    let f = r.f.unwrap_or(10.0);
    if !(f > 0.0) {
        return Err(CliError::Usage("--f must be positive".into()));
    }
    let mut checks = Vec::new();
    for s in [Suite::Landscape, Suite::Inclusion, Suite::Decay] {
        if suite != Suite::All && suite != s {
            continue;
        }
        let t = Instant::now();
        let mut got = match s {
            Suite::Landscape => vec![landscape(f)?],
            Suite::Inclusion => vec![inclusion()?],
            Suite::Decay => decay()?,
            Suite::All => unreachable!(),
        };
        for c in &mut got {
            println!(
                "{}: {} ({:.2}s)",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                t.elapsed().as_secs_f64()
            );
        }
        checks.append(&mut got);
    }
    let verdict = VerdictFile {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("verdict.json"));
    let text = serde_json::to_string_pretty(&verdict).map_err(|e| CliError::Failed(e.into()))?;
    std::fs::write(&out, text).map_err(|e| CliError::Failed(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
    write_resolved(&sidecar(&out), "verify", &r)?;
    println!("verdict: {}; wrote {}", if verdict.passed { "PASS" } else { "FAIL" }, out.display());
    Ok(if verdict.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
