use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Args;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use wsrnet::analysis::{export_landscape, snapshot_grid, sum_constrained_slice};
use wsrnet::channel::{
    construct_toy_pair, generate_rayleigh, load_dataset, load_labels, save_dataset, save_labels, Dataset, LabelQuality,
    LabelSet, Scenario, TOY_DIRECT_DEFAULT,
};
use wsrnet::nn::{
    init_assumption3, init_experiment, layer_widths, load_checkpoint, save_checkpoint, spectral_report, Activation,
    Assumption3Config,
};
use wsrnet::rate::nats_to_bits;
use wsrnet::train::{self as trainer, mean_rate, Backtrack, Optimizer, RmsPropConfig, TrainConfig, TrainMode};
use wsrnet::wmmse::{label_dataset, WmmseOptions};

use crate::config::{resolve, sidecar, write_resolved};
use crate::{CliError, CliResult};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required value --{flag}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.into()))?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// weak, strong, custom or toy.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Number of users.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    k: Option<usize>,
    /// Number of snapshots.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of direct links (overrides the preset).
    #[arg(long)]
    sigma_direct: Option<f64>,
    /// Standard deviation of cross links (overrides the preset).
    #[arg(long)]
    sigma_cross: Option<f64>,
    /// Noise power.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Per-user power budget.
    #[arg(long)]
    pmax: Option<f64>,
    /// Cross-link magnitude of the toy pair.
    #[arg(long)]
    f: Option<f64>,
    /// Output dataset file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gen_data(a: GenDataArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let scenario = r.scenario.unwrap_or(Scenario::Weak);
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("dataset.json"));
    let ds = match scenario {
        Scenario::Toy => {
            if r.k.is_some() || r.n.is_some() || r.sigma2.is_some() || r.pmax.is_some() {
                return Err(CliError::Usage("the toy pair fixes K, N, noise and budget; drop those flags".into()));
            }
            construct_toy_pair(required(&r.f, "f")?, TOY_DIRECT_DEFAULT)?
        }
        _ => {
            let k = required(&r.k, "K")?;
            let n = required(&r.n, "N")?;
            let preset = scenario.preset();
            let sd = r.sigma_direct.or(preset.map(|p| p.0));
            let sc = r.sigma_cross.or(preset.map(|p| p.1));
            let (Some(sd), Some(sc)) = (sd, sc) else {
                return Err(CliError::Usage("custom scenario needs --sigma-direct and --sigma-cross".into()));
            };
            generate_rayleigh(
                k,
                n,
                sd,
                sc,
                r.sigma2.unwrap_or(1.0),
                r.pmax.unwrap_or(1.0),
                r.seed.unwrap_or(0),
            )?
        }
    };
    ensure_parent(&out)?;
    save_dataset(&ds, &out)?;
    write_resolved(&sidecar(&out), "gen-data", &r)?;

    println!(
        "dataset: K={} N={} scenario={} seed={} sigma2={} pmax={}",
        ds.users(),
        ds.len(),
        ds.scenario,
        ds.seed,
        ds.sigma2(),
        ds.pmax()
    );
    if ds.scenario != Scenario::Toy {
        let (direct, cross) = second_moments(&ds);
        let (sd, sc) = ds.gen_params;
        let cross_note = if ds.users() > 1 { format!(", cross {cross:.4} (expected {:.4})", sc * sc) } else { String::new() };
        println!("moment check: mean |h|^2 direct {direct:.4} (expected {:.4}){cross_note}", sd * sd);
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn second_moments(ds: &Dataset) -> (f64, f64) {
    let k = ds.users();
    let (mut d, mut c) = (0.0, 0.0);
    for s in ds.snapshots() {
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    d += s.gain(i, j);
                } else {
                    c += s.gain(i, j);
                }
            }
        }
    }
    let n = ds.len() as f64;
    (d / (n * k as f64), if k > 1 { c / (n * (k * k - k) as f64) } else { 0.0 })
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct LabelArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset to label.
    #[arg(long)]
    data: Option<PathBuf>,
    /// low (single full-power start) or high (multi-start).
    #[arg(long)]
    quality: Option<LabelQuality>,
    /// Label the first COUNT snapshots (default: all).
    #[arg(long)]
    count: Option<usize>,
    /// Random starts for high-quality labels.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Solve to tight tolerances (stationary labels).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    tight: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn label(a: LabelArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let data = required(&r.data, "data")?;
    let ds = load_dataset(&data)?;
    let count = r.count.unwrap_or(ds.len());
    if count == 0 || count > ds.len() {
        return Err(CliError::Usage(format!("--count must be in 1..={}", ds.len())));
    }
    let quality = r.quality.unwrap_or(LabelQuality::High);
    let opts = if r.tight.unwrap_or(false) { WmmseOptions::tight() } else { WmmseOptions::default() };
    let idx: Vec<usize> = (0..count).collect();
    let labels = label_dataset(&ds, quality, &idx, r.restarts.unwrap_or(10), r.seed.unwrap_or(0), &opts)?;
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("labels.json"));
    ensure_parent(&out)?;
    save_labels(&labels, &out)?;
    write_resolved(&sidecar(&out), "label", &r)?;

    let metas: Vec<_> = labels.solver_meta().iter().flatten().collect();
    let mean = metas.iter().map(|m| m.wsr).sum::<f64>() / metas.len() as f64;
    let worst = metas.iter().map(|m| m.kkt_residual).fold(0.0, f64::max);
    println!(
        "labeled {count} of {} snapshots ({quality}); mean rate {mean:.4} nats ({:.4} bits); largest KKT residual {worst:.2e}",
        ds.len(),
        nats_to_bits(mean)
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Tags of a training run, kept next to its checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: String,
    pub scenario: Scenario,
    #[serde(rename = "K")]
    pub k: usize,
    pub quality: Option<LabelQuality>,
    pub labeled: usize,
    pub seed: u64,
    pub lambda: f64,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// sl, ul, ssl or ssl_pretrained.
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Weight of the label regularizer in SSL.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Minibatch size of unlabeled samples (default: full batch).
    #[arg(long)]
    batch: Option<usize>,
    /// Gradient-descent step size.
    #[arg(long)]
    eta: Option<f64>,
    /// gd or rmsprop.
    #[arg(long)]
    optimizer: Option<String>,
    /// RMSprop learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// RMSprop decay.
    #[arg(long)]
    rho: Option<f64>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// smoothed_leaky, clipped_relu, sigmoid or identity.
    #[arg(long)]
    hidden_act: Option<String>,
    /// sigmoid, clipped_relu, screlu or identity.
    #[arg(long)]
    output_act: Option<String>,
    /// SCReLU smoothing.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    batch_norm: Option<bool>,
    /// experiment (He normal) or assumption3 (scaled identity blocks).
    #[arg(long)]
    init: Option<String>,
    /// Identity-block scale for assumption3 init.
    #[arg(long)]
    c: Option<f64>,
    /// Second-layer variance for assumption3 init.
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enforce the analysis setting (full-batch GD, SCReLU output, no batch norm).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    theory: Option<bool>,
    /// Choose the GD step by halving from --eta0 until sufficient decrease holds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    backtrack: Option<bool>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    probe_iters: Option<usize>,
    #[arg(long)]
    target_loss: Option<f64>,
    /// Supervised iterations before the unsupervised phase of ssl_pretrained.
    #[arg(long)]
    pretrain_iters: Option<usize>,
    /// Directory for checkpoint, trace and run metadata.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn activation(name: &str, r: &TrainArgs, pmax: f64) -> CliResult<Activation> {
    let act = match name {
        "smoothed_leaky" => Activation::SmoothedLeaky {
            gamma: r.gamma.unwrap_or(0.5),
            kappa: r.kappa.unwrap_or(0.1),
        },
        "clipped_relu" => Activation::ClippedRelu { pmax },
        "sigmoid" => Activation::Sigmoid { pmax },
        "screlu" => Activation::Screlu {
            alpha: r.alpha.unwrap_or(0.1),
            pmax,
        },
        "identity" => Activation::Identity,
        other => return Err(CliError::Usage(format!("unknown activation '{other}'"))),
    };
    act.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(act)
}

fn full_label_matrix(labels: &LabelSet, k: usize) -> Option<Array2<f64>> {
    if labels.labeled_idx().len() != labels.len() {
        return None;
    }
    Some(Array2::from_shape_fn((labels.len(), k), |(n, j)| labels.label(n).expect("all labeled")[j]))
}

pub fn train(a: TrainArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let ds = load_dataset(required(&r.data, "data")?)?;
    let labels = r.labels.as_ref().map(|p| load_labels(p, Some(&ds))).transpose()?;
    let mode = r.mode.unwrap_or(TrainMode::Ul);
    if mode != TrainMode::Ul && labels.is_none() {
        return Err(CliError::Usage(format!("--mode {mode} needs --labels")));
    }
    let k = ds.users();
    let pmax = ds.pmax();
    let seed = r.seed.unwrap_or(0);
    let widths = layer_widths(k, r.hidden.as_deref().unwrap_or(&[200, 80, 80]));
    let out_dir = r.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let net = match r.init.as_deref().unwrap_or("experiment") {
        "experiment" => {
            let hidden = activation(r.hidden_act.as_deref().unwrap_or("clipped_relu"), &r, pmax)?;
            let output = activation(r.output_act.as_deref().unwrap_or("sigmoid"), &r, pmax)?;
            let net = init_experiment(&widths, hidden, output, seed)?;
            if r.batch_norm.unwrap_or(false) {
                net.with_batch_norm()
            } else {
                net
            }
        }
        "assumption3" => {
            let defaults = Assumption3Config::default();
            let cfg = Assumption3Config {
                c: r.c.unwrap_or(defaults.c),
                v: r.v.unwrap_or(defaults.v),
                gamma: r.gamma.unwrap_or(defaults.gamma),
                kappa: r.kappa.unwrap_or(defaults.kappa),
                pmax,
                alpha: r.alpha,
                seed,
            };
            let y = labels.as_ref().and_then(|l| full_label_matrix(l, k));
            let h = ds.features();
            let (net, rep) = init_assumption3(&widths, &cfg, h.view(), y.as_ref().map(|y| y.view()))?;
            write_json(&out_dir.join("spectral_init.json"), &rep)?;
            net
        }
        other => return Err(CliError::Usage(format!("unknown init '{other}'"))),
    };

    let optimizer = match r.optimizer.as_deref().unwrap_or("gd") {
        "gd" => Optimizer::Gd,
        "rmsprop" => {
            let d = RmsPropConfig::default();
            Optimizer::RmsProp(RmsPropConfig {
                lr: r.lr.unwrap_or(d.lr),
                rho: r.rho.unwrap_or(d.rho),
                ..d
            })
        }
        other => return Err(CliError::Usage(format!("unknown optimizer '{other}'"))),
    };
    let backtrack = r.backtrack.unwrap_or(false).then(|| {
        let d = Backtrack::default();
        Backtrack {
            eta0: r.eta0.unwrap_or(d.eta0),
            probe_iters: r.probe_iters.unwrap_or(d.probe_iters),
            ..d
        }
    });
    let cfg = TrainConfig {
        mode,
        eta: r.eta.unwrap_or(1e-3),
        ssl_lambda: r.lambda.unwrap_or(1.0),
        batch: r.batch,
        iters: r.iters.unwrap_or(1000),
        optimizer,
        seed,
        theory_mode: r.theory.unwrap_or(false),
        backtrack,
        target_loss: r.target_loss,
        pretrain_iters: r.pretrain_iters.unwrap_or(1000),
    };
    let (fit, trace) = trainer::train(&net, &ds, labels.as_ref(), &cfg).map_err(|e| match e {
        wsrnet::Error::InvalidArgument(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;

    save_checkpoint(&fit, out_dir.join("checkpoint.json"))?;
    trace.save_csv(out_dir.join("trace.csv"))?;
    trace.save_json(out_dir.join("trace.json"))?;
    write_resolved(&out_dir.join("resolved_config.json"), "train", &r)?;
    let meta = RunMeta {
        method: mode.to_string(),
        scenario: ds.scenario,
        k,
        quality: labels.as_ref().map(|l| l.quality),
        labeled: labels.as_ref().map_or(0, |l| l.labeled_idx().len()),
        seed,
        lambda: cfg.ssl_lambda,
    };
    write_json(&out_dir.join("run.json"), &meta)?;
    println!(
        "{mode}: {:?} after {} iterations, final loss {:.6e}, step {:.3e}, {:.0} ms",
        trace.status,
        trace.iterations(),
        trace.final_loss,
        trace.eta_used,
        trace.wall_ms
    );
    println!("wrote {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

/// One evaluated method on one test set; the unit the report tables aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub scenario: Scenario,
    #[serde(rename = "K")]
    pub k: usize,
    pub quality: Option<LabelQuality>,
    pub labeled: usize,
    pub seed: Option<u64>,
    pub mean_nats: f64,
    pub mean_bits: f64,
    pub clamped: usize,
    pub snapshots: usize,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint; its run.json, if present, supplies the record tags.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluate WMMSE instead of a checkpoint.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wmmse: Option<bool>,
    /// WMMSE label quality (default low: one full-power start).
    #[arg(long)]
    quality: Option<LabelQuality>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Override the method tag of the record.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let ds = load_dataset(required(&r.data, "data")?)?;
    let use_wmmse = r.wmmse.unwrap_or(false);
    let (report, mut record_meta, default_out) = match (&r.checkpoint, use_wmmse) {
        (Some(_), true) => return Err(CliError::Usage("give either --checkpoint or --wmmse".into())),
        (None, false) => return Err(CliError::Usage("missing --checkpoint (or --wmmse)".into())),
        (Some(ckpt), false) => {
            let net = load_checkpoint(ckpt)?;
            let dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
            let meta = match fs::read_to_string(dir.join("run.json")) {
                Ok(text) => Some(serde_json::from_str::<RunMeta>(&text).context("malformed run.json")?),
                Err(_) => None,
            };
            (trainer::evaluate(&net, &ds)?, meta, dir.join("eval.json"))
        }
        (None, true) => {
            let quality = r.quality.unwrap_or(LabelQuality::Low);
            let all: Vec<usize> = (0..ds.len()).collect();
            let labels = label_dataset(&ds, quality, &all, r.restarts.unwrap_or(10), 0, &WmmseOptions::default())?;
            let q = full_label_matrix(&labels, ds.users()).ok_or_else(|| anyhow!("incomplete WMMSE labels"))?;
            let meta = RunMeta {
                method: "wmmse".into(),
                scenario: ds.scenario,
                k: ds.users(),
                quality: Some(quality),
                labeled: 0,
                seed: 0,
                lambda: 0.0,
            };
            (mean_rate(&q, &ds)?, Some(meta), PathBuf::from("eval.json"))
        }
    };
    if let (Some(m), Some(name)) = (record_meta.as_mut(), &r.method) {
        m.method = name.clone();
    }
    let record = EvalRecord {
        method: r
            .method
            .clone()
            .or_else(|| record_meta.as_ref().map(|m| m.method.clone()))
            .unwrap_or_else(|| "unknown".into()),
        scenario: ds.scenario,
        k: ds.users(),
        quality: record_meta.as_ref().and_then(|m| m.quality),
        labeled: record_meta.as_ref().map_or(0, |m| m.labeled),
        seed: record_meta.as_ref().filter(|m| m.method != "wmmse").map(|m| m.seed),
        mean_nats: report.mean_nats,
        mean_bits: report.mean_bits,
        clamped: report.clamped,
        snapshots: report.snapshots,
    };
    let out = r.out.clone().unwrap_or(default_out);
    ensure_parent(&out)?;
    write_json(&out, &record)?;
    write_resolved(&sidecar(&out), "eval", &r)?;
    println!(
        "{}: mean sum rate {:.4} nats ({:.4} bits) over {} snapshots, {} clamped outputs",
        record.method, record.mean_nats, record.mean_bits, record.snapshots, record.clamped
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct LandscapeArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Use the toy pair with this cross-link magnitude.
    #[arg(long)]
    f: Option<f64>,
    /// Use a dataset file instead of the toy pair.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<f64>,
    /// slice (two users, two snapshots, powers summing to pmax) or grid (one
    /// full grid per snapshot).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn landscape(a: LandscapeArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let ds = match (&r.data, r.f) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --data or --f".into())),
        (Some(p), None) => load_dataset(p)?,
        (None, f) => construct_toy_pair(f.unwrap_or(10.0), TOY_DIRECT_DEFAULT)?,
    };
    let res = r.resolution.unwrap_or(0.01);
    if !(res > 0.0) {
        return Err(CliError::Usage("--resolution must be positive".into()));
    }
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("landscape.csv"));
    ensure_parent(&out)?;
    match r.kind.as_deref().unwrap_or("slice") {
        "slice" => {
            let grid = sum_constrained_slice(&ds, res)?;
            export_landscape(&grid, &out)?;
            println!(
                "slice argmax p1 = {:?} with total rate {:.6} nats",
                grid.argmax, grid.max
            );
            println!("wrote {}", out.display());
        }
        "grid" => {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            for (n, snap) in ds.snapshots().iter().enumerate() {
                let grid = snapshot_grid(snap, res)?;
                let path = out.with_file_name(format!("{stem}_{n}.csv"));
                export_landscape(&grid, &path)?;
                println!("snapshot {n}: argmax {:?}, rate {:.6} nats; wrote {}", grid.argmax, grid.max, path.display());
            }
        }
        other => return Err(CliError::Usage(format!("unknown landscape kind '{other}'"))),
    }
    write_resolved(&sidecar(&out), "landscape", &r)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct SpectralArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labels for every snapshot enable the loss-dependent constants.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn spectral(a: SpectralArgs) -> CliResult<ExitCode> {
    let r = resolve(&a, a.config.as_deref())?;
    let net = load_checkpoint(required(&r.checkpoint, "checkpoint")?)?;
    let ds = load_dataset(required(&r.data, "data")?)?;
    let labels = r.labels.as_ref().map(|p| load_labels(p, Some(&ds))).transpose()?;
    let y = labels.as_ref().and_then(|l| full_label_matrix(l, ds.users()));
    let h = ds.features();
    let rep = spectral_report(&net, h.view(), y.as_ref().map(|y| y.view()))?;
    let out = r.out.clone().unwrap_or_else(|| PathBuf::from("spectral.json"));
    ensure_parent(&out)?;
    write_json(&out, &rep)?;
    write_resolved(&sidecar(&out), "spectral", &r)?;
    println!(
        "lam_h {:.4e}, alpha_h {:.4e}, alpha0 {:.4e}, condition_24 {}",
        rep.lam_h, rep.alpha_h, rep.alpha0, rep.condition_24
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
