use super::*;
use crate::channel::{generate_rayleigh, LabelQuality};
use crate::nn::{init_assumption3, init_experiment, layer_widths, Assumption3Config};
use crate::wmmse::{label_dataset, WmmseOptions};

fn small_problem(k: usize, n: usize, seed: u64) -> (Dataset, LabelSet) {
    let ds = generate_rayleigh(k, n, 1.0, 1.0, 1.0, 1.0, seed).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let labels = label_dataset(&ds, LabelQuality::High, &idx, 2, seed, &WmmseOptions::default()).unwrap();
    (ds, labels)
}

fn fd_param_grad(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let theta = net.params_flat();
    let mut probe = net.clone();
    (0..theta.len())
        .map(|i| {
            let mut t = theta.clone();
            t[i] += 1e-5;
            probe.set_params_flat(&t).unwrap();
            let a = f(&probe);
            t[i] -= 2e-5;
            probe.set_params_flat(&t).unwrap();
            let b = f(&probe);
            (a - b) / 2e-5
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-10)
}

#[test]
fn loss_gradients_match_finite_differences() {
    let (ds, labels) = small_problem(3, 5, 4);
    let labels = labels.restrict(&[1, 3]).unwrap();
    let net = init_experiment(
        &layer_widths(3, &[8, 6]),
        Activation::default(),
        Activation::Screlu { alpha: 0.2, pmax: 1.0 },
        2,
    )
    .unwrap();
    let sl = loss_sl(&net, &ds, &labels).unwrap();
    let e = rel_err(&sl.param_grad, &fd_param_grad(&net, |m| loss_sl(m, &ds, &labels).unwrap().value));
    assert!(e <= 1e-6, "sl {e}");
    let ul = loss_ul(&net, &ds).unwrap();
    let e = rel_err(&ul.param_grad, &fd_param_grad(&net, |m| loss_ul(m, &ds).unwrap().value));
    assert!(e <= 1e-6, "ul {e}");
    let ssl = loss_ssl(&net, &ds, &labels, 0.7).unwrap();
    let e = rel_err(&ssl.param_grad, &fd_param_grad(&net, |m| loss_ssl(m, &ds, &labels, 0.7).unwrap().value));
    assert!(e <= 1e-6, "ssl {e}");
}

#[test]
fn zero_iterations_return_the_start() {
    let (ds, _) = small_problem(2, 4, 1);
    let net = init_experiment(&layer_widths(2, &[4]), Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 0).unwrap();
    let cfg = TrainConfig { iters: 0, ..Default::default() };
    let (out, tr) = train(&net, &ds, None, &cfg).unwrap();
    assert_eq!(out, net);
    assert_eq!(tr.iterations(), 0);
    assert_eq!(tr.final_loss, loss_ul(&net, &ds).unwrap().value);
}

#[test]
fn ssl_with_zero_lambda_reproduces_ul() {
    let (ds, labels) = small_problem(3, 40, 2);
    let labels = labels.restrict(&[0, 5, 9]).unwrap();
    let net = init_experiment(&layer_widths(3, &[16, 8]), Activation::ClippedRelu { pmax: 1.0 }, Activation::Sigmoid { pmax: 1.0 }, 5)
        .unwrap()
        .with_batch_norm();
    let base = TrainConfig {
        mode: TrainMode::Ul,
        batch: Some(8),
        iters: 30,
        optimizer: Optimizer::RmsProp(RmsPropConfig::default()),
        seed: 11,
        ..Default::default()
    };
    let (ul_net, ul) = train(&net, &ds, Some(&labels), &base).unwrap();
    let ssl_cfg = TrainConfig { mode: TrainMode::Ssl, ssl_lambda: 0.0, ..base.clone() };
    let (ssl_net, ssl) = train(&net, &ds, Some(&labels), &ssl_cfg).unwrap();
    assert_eq!(ul.loss, ssl.loss);
    assert_eq!(ul.grad_norm, ssl.grad_norm);
    assert_eq!(ul_net, ssl_net);
    assert!(ul.decay_ratio.iter().all(Option::is_none));
}

#[test]
fn minibatch_runs_are_deterministic() {
    let (ds, _) = small_problem(2, 30, 3);
    let net = init_experiment(&layer_widths(2, &[6]), Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 1).unwrap();
    let cfg = TrainConfig { batch: Some(7), iters: 12, eta: 0.05, seed: 3, ..Default::default() };
    let a = train(&net, &ds, None, &cfg).unwrap();
    let b = train(&net, &ds, None, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.loss, b.1.loss);
}

#[test]
fn sampler_covers_each_epoch_once() {
    let mut s = Sampler::new((0..10).collect(), Some(3), 9);
    let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next()).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 9);
}

#[test]
fn theory_mode_sl_reaches_small_loss_and_ul_descends() {
    let (ds, labels) = small_problem(2, 4, 6);
    let h = ds.features();
    let y = Array2::from_shape_fn((4, 2), |(n, k)| labels.label(n).unwrap()[k]);
    let cfg = Assumption3Config { c: 4.0, v: 1e-4, seed: 2, ..Default::default() };
    let (net, _) = init_assumption3(&[4, 8, 4, 2], &cfg, h.view(), Some(y.view())).unwrap();
    let sl = TrainConfig {
        mode: TrainMode::Sl,
        iters: 50_000,
        theory_mode: true,
        backtrack: Some(Backtrack::default()),
        target_loss: Some(1e-6),
        ..Default::default()
    };
    let (_, tr) = train(&net, &ds, Some(&labels), &sl).unwrap();
    assert_eq!(tr.status, TrainStatus::ReachedTarget, "final {}", tr.final_loss);

    let ul = TrainConfig {
        mode: TrainMode::Ul,
        iters: 300,
        theory_mode: true,
        backtrack: Some(Backtrack::default()),
        ..Default::default()
    };
    let (_, tr) = train(&net, &ds, None, &ul).unwrap();
    assert!(tr.loss.windows(2).all(|w| w[1] <= w[0]));
    assert!(tr.final_loss <= *tr.loss.last().unwrap());
}

#[test]
fn theory_mode_rejects_rmsprop_and_sigmoid() {
    let (ds, labels) = small_problem(2, 4, 6);
    let net = init_experiment(&layer_widths(2, &[8, 4]), Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 0).unwrap();
    let cfg = TrainConfig { mode: TrainMode::Sl, theory_mode: true, ..Default::default() };
    assert!(train(&net, &ds, Some(&labels), &cfg).is_err());
    assert!(train(&net, &ds, None, &TrainConfig { mode: TrainMode::Ssl, ..Default::default() }).is_err());
}

#[test]
fn pretrained_ssl_records_both_phases() {
    let (ds, labels) = small_problem(2, 12, 8);
    let labels = labels.restrict(&[0, 1, 2]).unwrap();
    let net = init_experiment(&layer_widths(2, &[6]), Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 0).unwrap();
    let cfg = TrainConfig { mode: TrainMode::SslPretrained, iters: 5, pretrain_iters: 7, eta: 0.01, ..Default::default() };
    let (_, tr) = train(&net, &ds, Some(&labels), &cfg).unwrap();
    assert_eq!(tr.pretrain_iters, 7);
    assert_eq!(tr.iterations(), 12);
}

#[test]
fn evaluate_clamps_and_converts() {
    let (ds, labels) = small_problem(2, 5, 9);
    let q = Array2::from_shape_fn((5, 2), |(n, k)| labels.label(n).unwrap()[k]);
    let r = mean_rate(&q, &ds).unwrap();
    let expect: f64 = (0..5)
        .map(|n| rate::wsr(labels.label(n).unwrap().as_slice().unwrap(), ds.snapshot(n)).unwrap())
        .sum::<f64>()
        / 5.0;
    assert!((r.mean_nats - expect).abs() < 1e-14);
    assert_eq!(r.clamped, 0);
    let over = q.mapv(|v| v + 2.0);
    assert_eq!(mean_rate(&over, &ds).unwrap().clamped, 10);
}

#[test]
fn trace_csv_and_json() {
    let (ds, _) = small_problem(2, 4, 1);
    let net = init_experiment(&layer_widths(2, &[4]), Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 0).unwrap();
    let (_, tr) = train(&net, &ds, None, &TrainConfig { iters: 3, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    tr.save_csv(dir.path().join("t.csv")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("iter,loss,grad_norm,decay_ratio,violation"));
    tr.save_json(dir.path().join("t.json")).unwrap();
    assert_eq!(TrainTrace::load_json(dir.path().join("t.json")).unwrap(), tr);
}
