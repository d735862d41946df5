use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{spectral_report, Activation, Mlp, SpectralReport};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// `[K^2, hidden..., K]`.
pub fn layer_widths(k: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(k * k).chain(hidden.iter().copied()).chain(std::iter::once(k)).collect()
}

fn gaussian(rows: usize, cols: usize, std: f64, seed: u64, layer: usize) -> Result<Array2<f64>> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(seed, Purpose::WeightInit, layer as u64);
    Ok(Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng)))
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::invalid(format!("need at least two positive widths, got {widths:?}")));
    }
    Ok(())
}

/// He-style init: `[W_l]_ij ~ N(0, 2 / n_{l-1})`, layer `l` drawn from its own stream.
pub fn init_experiment(widths: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Mlp> {
    check_widths(widths)?;
    let ws = widths
        .windows(2)
        .enumerate()
        .map(|(l, p)| gaussian(p[0], p[1], (2.0 / p[0] as f64).sqrt(), seed, l))
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(ws, hidden, output)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumption3Config {
    /// Scale of the identity blocks from the third layer on.
    pub c: f64,
    /// Variance of the second-layer entries.
    pub v: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub pmax: f64,
    /// SCReLU smoothing; `None` uses the lower threshold `alpha_h` of the initial weights.
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Default for Assumption3Config {
    fn default() -> Self {
        Self {
            c: 10.0,
            v: 1e-4,
            gamma: 0.5,
            kappa: 0.1,
            pmax: 1.0,
            alpha: None,
            seed: 0,
        }
    }
}

/// Theory-mode initialization: `W_1 ~ N(0, 1/K^2)`, `W_2 ~ N(0, v)`,
/// `W_l = c [I; 0]` for `l >= 3`, smoothed-leaky hidden layers and an SCReLU
/// output. The spectral report is computed at the returned weights; the
/// condition on `lam_h` is reported, not enforced.
pub fn init_assumption3(
    widths: &[usize],
    cfg: &Assumption3Config,
    h: ArrayView2<f64>,
    labels: Option<ArrayView2<f64>>,
) -> Result<(Mlp, SpectralReport)> {
    check_widths(widths)?;
    if !(cfg.c > 1.0) || !(cfg.v > 0.0) {
        return Err(Error::invalid(format!("need c > 1 and v > 0, got c={}, v={}", cfg.c, cfg.v)));
    }
    let k = *widths.last().expect("checked");
    if widths[0] != k * k {
        return Err(Error::invalid(format!("input width {} is not K^2 for K = {k}", widths[0])));
    }
    let mut ws = Vec::with_capacity(widths.len() - 1);
    for (l, p) in widths.windows(2).enumerate() {
        let w = match l {
            0 => gaussian(p[0], p[1], 1.0 / k as f64, cfg.seed, l)?,
            1 => gaussian(p[0], p[1], cfg.v.sqrt(), cfg.seed, l)?,
            _ => {
                if p[0] < p[1] {
                    return Err(Error::invalid(format!("identity block needs n_(l-1) >= n_l at layer {}", l + 1)));
                }
                let mut w = Array2::zeros((p[0], p[1]));
                for i in 0..p[1] {
                    w[[i, i]] = cfg.c;
                }
                w
            }
        };
        ws.push(w);
    }
    let hidden = Activation::SmoothedLeaky {
        gamma: cfg.gamma,
        kappa: cfg.kappa,
    };
    // Placeholder smoothing; replaced once the weights fix the threshold.
    let mut net = Mlp::new(ws, hidden, Activation::Screlu { alpha: 1.0, pmax: cfg.pmax })?;
    net.check_theory_widths(h.nrows())?;
    let pre = spectral_report(&net, h, None)?;
    let alpha = cfg.alpha.unwrap_or(pre.alpha_h);
    net.set_output(Activation::Screlu { alpha, pmax: cfg.pmax })?;
    let report = spectral_report(&net, h, labels)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_rayleigh;

    #[test]
    fn experiment_init_is_deterministic_with_he_variance() {
        let w = layer_widths(10, &[200, 80, 80]);
        assert_eq!(w, vec![100, 200, 80, 80, 10]);
        let a = init_experiment(&w, Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 3).unwrap();
        let b = init_experiment(&w, Activation::default(), Activation::Sigmoid { pmax: 1.0 }, 3).unwrap();
        assert_eq!(a, b);
        for (l, m) in a.weights().iter().enumerate() {
            let var = m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64;
            let target = 2.0 / w[l] as f64;
            assert!((var / target - 1.0).abs() < 0.1, "layer {l}: {var} vs {target}");
        }
    }

    #[test]
    fn assumption3_structure() {
        let ds = generate_rayleigh(2, 8, 1.0, 1.0, 1.0, 1.0, 0).unwrap();
        let h = ds.features();
        let cfg = Assumption3Config { c: 50.0, ..Default::default() };
        let (net, rep) = init_assumption3(&[4, 8, 4, 2], &cfg, h.view(), None).unwrap();
        let w3 = &net.weights()[2];
        assert_eq!(w3.dim(), (4, 2));
        assert_eq!(w3[[0, 0]], 50.0);
        assert_eq!(w3[[1, 1]], 50.0);
        assert_eq!(w3[[2, 0]], 0.0);
        assert_eq!(rep.lam_lo[2], 50.0);
        assert_eq!(rep.lam_hi[2], 50.0);
        assert!(rep.lam_h > 1e-10);
        match net.output() {
            Activation::Screlu { alpha, .. } => assert_eq!(alpha, rep.alpha_h),
            other => panic!("unexpected output {other:?}"),
        }
        assert!(init_assumption3(&[4, 6, 4, 2], &cfg, h.view(), None).is_err());
    }
}
