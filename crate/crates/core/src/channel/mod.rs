//! Channel datasets: Rayleigh generation, the two-snapshot toy construction,
//! label sets and their on-disk format.
//!
//! Index convention: `mags[[k, j]]` is the magnitude of the link from
//! transmitter `j` into receiver `k`, so it multiplies `p_j` in receiver
//! `k`'s interference term.

mod persist;

pub use persist::{load_dataset, load_labels, save_dataset, save_labels, FORMAT_VERSION};

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// One K-user channel realization together with the problem parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    mags: Array2<f64>,
    sigma2: f64,
    pmax: f64,
    weights: Array1<f64>,
}

impl ChannelSnapshot {
    pub fn new(mags: Array2<f64>, sigma2: f64, pmax: f64, weights: Array1<f64>) -> Result<Self> {
        let k = mags.nrows();
        if k == 0 || mags.ncols() != k {
            return Err(Error::invalid(format!(
                "channel magnitudes must be square and non-empty, got {:?}",
                mags.dim()
            )));
        }
        if let Some(((r, c), v)) = mags.indexed_iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("mags[{r}][{c}] = {v} is not a finite magnitude")));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(pmax.is_finite() && pmax > 0.0) {
            return Err(Error::invalid(format!("pmax must be positive, got {pmax}")));
        }
        if weights.len() != k {
            return Err(Error::invalid(format!(
                "expected {k} weights, got {}",
                weights.len()
            )));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("weights[{i}] = {w} must be non-negative")));
        }
        Ok(Self {
            mags,
            sigma2,
            pmax,
            weights,
        })
    }

    /// Unit weights, unit noise and unit power budget.
    pub fn unit(mags: Array2<f64>) -> Result<Self> {
        let k = mags.nrows();
        Self::new(mags, 1.0, 1.0, Array1::ones(k))
    }

    pub fn users(&self) -> usize {
        self.mags.nrows()
    }

    pub fn mags(&self) -> &Array2<f64> {
        &self.mags
    }

    /// `|h_kj|^2`.
    #[inline]
    pub fn gain(&self, k: usize, j: usize) -> f64 {
        let m = self.mags[[k, j]];
        m * m
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn pmax(&self) -> f64 {
        self.pmax
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn with_weights(mut self, weights: Array1<f64>) -> Result<Self> {
        self.weights = weights;
        Self::new(self.mags, self.sigma2, self.pmax, self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Weak,
    Strong,
    Toy,
    Custom,
}

impl Scenario {
    /// `(sigma_direct, sigma_cross)` of the Rayleigh presets.
    pub fn preset(self) -> Option<(f64, f64)> {
        match self {
            Scenario::Weak => Some((1.0, 1.0)),
            Scenario::Strong => Some((1.0, 10.0)),
            Scenario::Toy | Scenario::Custom => None,
        }
    }

    fn classify(sigma_direct: f64, sigma_cross: f64) -> Self {
        if sigma_direct == sigma_cross {
            Scenario::Weak
        } else if sigma_cross > sigma_direct {
            Scenario::Strong
        } else {
            Scenario::Custom
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::Weak => "weak",
            Scenario::Strong => "strong",
            Scenario::Toy => "toy",
            Scenario::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Scenario::Weak),
            "strong" => Ok(Scenario::Strong),
            "toy" => Ok(Scenario::Toy),
            "custom" => Ok(Scenario::Custom),
            other => Err(Error::invalid(format!("unknown scenario '{other}'"))),
        }
    }
}

/// An ordered collection of snapshots sharing K, noise, budget and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    snapshots: Vec<ChannelSnapshot>,
    pub scenario: Scenario,
    pub seed: u64,
    /// `(sigma_direct, sigma_cross)` used for generation; zeros for constructed sets.
    pub gen_params: (f64, f64),
}

impl Dataset {
    pub fn new(
        snapshots: Vec<ChannelSnapshot>,
        scenario: Scenario,
        seed: u64,
        gen_params: (f64, f64),
    ) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::invalid("a dataset needs at least one snapshot"))?;
        for (n, s) in snapshots.iter().enumerate().skip(1) {
            if s.users() != first.users()
                || s.sigma2 != first.sigma2
                || s.pmax != first.pmax
                || s.weights != first.weights
            {
                return Err(Error::invalid(format!(
                    "snapshot {n} does not share K/sigma2/pmax/weights with snapshot 0"
                )));
            }
        }
        Ok(Self {
            snapshots,
            scenario,
            seed,
            gen_params,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn users(&self) -> usize {
        self.snapshots[0].users()
    }

    pub fn sigma2(&self) -> f64 {
        self.snapshots[0].sigma2
    }

    pub fn pmax(&self) -> f64 {
        self.snapshots[0].pmax
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.snapshots[0].weights
    }

    pub fn snapshots(&self) -> &[ChannelSnapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, n: usize) -> &ChannelSnapshot {
        &self.snapshots[n]
    }

    /// Replace the rate weights of every snapshot.
    pub fn with_weights(self, weights: Array1<f64>) -> Result<Self> {
        let snapshots = self
            .snapshots
            .into_iter()
            .map(|s| s.with_weights(weights.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(snapshots, self.scenario, self.seed, self.gen_params)
    }

    /// Network input matrix `|H|`: one row per snapshot, `mags` flattened row-major.
    pub fn features(&self) -> Array2<f64> {
        let k = self.users();
        let mut h = Array2::zeros((self.len(), k * k));
        for (n, s) in self.snapshots.iter().enumerate() {
            for (i, v) in s.mags.iter().enumerate() {
                h[[n, i]] = *v;
            }
        }
        h
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let snaps = indices
            .iter()
            .map(|&i| {
                self.snapshots
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(snaps, self.scenario, self.seed, self.gen_params)
    }
}

/// Draw `n` Rayleigh snapshots.
///
/// Entry `(k, j)` of snapshot `n` is `|x + iy|` with `x, y ~ N(0, sigma^2 / 2)`,
/// `sigma = sigma_direct` on the diagonal and `sigma_cross` elsewhere. Snapshot
/// `n` uses ChaCha stream `n` under the dataset seed and draws entries in
/// row-major order, real part first.
pub fn generate_rayleigh(
    k: usize,
    n: usize,
    sigma_direct: f64,
    sigma_cross: f64,
    sigma2: f64,
    pmax: f64,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 || n == 0 {
        return Err(Error::invalid(format!("K and N must be >= 1, got K={k}, N={n}")));
    }
    if !(sigma_direct > 0.0 && sigma_cross > 0.0) {
        return Err(Error::invalid(format!(
            "channel deviations must be positive, got ({sigma_direct}, {sigma_cross})"
        )));
    }
    let weights = Array1::ones(k);
    let snapshots = (0..n)
        .map(|idx| {
            let mut rng = rng::stream(seed, Purpose::ChannelSnapshot, idx as u64);
            let mut mags = Array2::zeros((k, k));
            for r in 0..k {
                for c in 0..k {
                    let sd = if r == c { sigma_direct } else { sigma_cross } / std::f64::consts::SQRT_2;
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    mags[[r, c]] = (sd * re).hypot(sd * im);
                }
            }
            ChannelSnapshot::new(mags, sigma2, pmax, weights.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        snapshots,
        Scenario::classify(sigma_direct, sigma_cross),
        seed,
        (sigma_direct, sigma_cross),
    )
}

/// Direct-link magnitudes `[|h11|, |h22|]` of the two toy snapshots.
pub const TOY_DIRECT_DEFAULT: [[f64; 2]; 2] = [[1.0, 2.0], [2.0, 1.0]];

/// Two-user, two-snapshot construction where every cross link has magnitude `f`.
///
/// Unit noise, unit budget and unit weights; use [`Dataset::with_weights`] for
/// the `1/N` weighting.
pub fn construct_toy_pair(f: f64, direct: [[f64; 2]; 2]) -> Result<Dataset> {
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::invalid(format!("cross magnitude f must be positive, got {f}")));
    }
    let snapshots = direct
        .iter()
        .map(|d| {
            let mags = ndarray::arr2(&[[d[0], f], [f, d[1]]]);
            ChannelSnapshot::unit(mags)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(snapshots, Scenario::Toy, 0, (0.0, 0.0))
}

/// How the strong-interference inequality treats the lone `h11` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyConditionVariant {
    /// `2 (2 + |h11|) |h22|^2 / (|h11|^2 |h12|^2)`, with `h11` unsquared as printed.
    #[default]
    Literal,
    /// `2 (2 + |h11|^2) |h22|^2 / (|h11|^2 |h12|^2)`.
    AllSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyCondition {
    pub holds: bool,
    pub value: f64,
    /// Cross links equal and strictly stronger than both direct links, which differ.
    pub ordering: bool,
}

pub fn check_toy_condition(snap: &ChannelSnapshot, variant: ToyConditionVariant) -> Result<ToyCondition> {
    if snap.users() != 2 {
        return Err(Error::Unsupported(format!(
            "toy condition is defined for K = 2, got K = {}",
            snap.users()
        )));
    }
    let m = snap.mags();
    let (h11, h12, h21, h22) = (m[[0, 0]], m[[0, 1]], m[[1, 0]], m[[1, 1]]);
    let lead = match variant {
        ToyConditionVariant::Literal => 2.0 + h11,
        ToyConditionVariant::AllSquared => 2.0 + h11 * h11,
    };
    let value = 2.0 * lead * h22 * h22 / (h11 * h11 * h12 * h12);
    let cross_equal = (h12 - h21).abs() <= 1e-12 * h12.max(h21);
    let ordering = cross_equal && h12.min(h21) > h11.max(h22) && h11 != h22;
    Ok(ToyCondition {
        holds: value < 1.0 && ordering,
        value,
        ordering,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelQuality {
    Low,
    High,
}

impl std::fmt::Display for LabelQuality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelQuality::Low => "low",
            LabelQuality::High => "high",
        })
    }
}

impl std::str::FromStr for LabelQuality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(LabelQuality::Low),
            "high" => Ok(LabelQuality::High),
            other => Err(Error::invalid(format!("unknown label quality '{other}'"))),
        }
    }
}

/// Per-label solver bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub iters: usize,
    /// Final stationarity residual of the per-snapshot rate problem.
    pub kkt_residual: f64,
    /// Weighted sum rate of the label in nats.
    pub wsr: f64,
}

/// Power labels aligned with a dataset; only `labeled_idx` carry values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<Option<Array1<f64>>>,
    pub quality: LabelQuality,
    labeled_idx: Vec<usize>,
    solver_meta: Vec<Option<SolverMeta>>,
}

impl LabelSet {
    /// `labels[n]` must be `Some` exactly for `n` in the returned index set.
    pub fn new(
        labels: Vec<Option<Array1<f64>>>,
        quality: LabelQuality,
        solver_meta: Vec<Option<SolverMeta>>,
    ) -> Result<Self> {
        if solver_meta.len() != labels.len() {
            return Err(Error::Alignment(format!(
                "{} labels but {} solver records",
                labels.len(),
                solver_meta.len()
            )));
        }
        let labeled_idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_ref().map(|_| i))
            .collect();
        let k = labels.iter().flatten().map(|l| l.len()).next();
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                if Some(l.len()) != k {
                    return Err(Error::Alignment(format!("label {i} has inconsistent length")));
                }
                if let Some(v) = l.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(Error::invalid(format!("label {i} has entry {v} below zero")));
                }
            }
        }
        Ok(Self {
            labels,
            quality,
            labeled_idx,
            solver_meta,
        })
    }

    /// Labels for every snapshot of a dataset, from plain power vectors.
    pub fn full(labels: Vec<Array1<f64>>, quality: LabelQuality) -> Result<Self> {
        let n = labels.len();
        Self::new(labels.into_iter().map(Some).collect(), quality, vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labeled_idx(&self) -> &[usize] {
        &self.labeled_idx
    }

    pub fn label(&self, n: usize) -> Option<&Array1<f64>> {
        self.labels.get(n).and_then(|l| l.as_ref())
    }

    pub fn labels(&self) -> &[Option<Array1<f64>>] {
        &self.labels
    }

    pub fn solver_meta(&self) -> &[Option<SolverMeta>] {
        &self.solver_meta
    }

    /// Keep only the labels whose index is in `keep`.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let mut labels = vec![None; self.len()];
        let mut meta = vec![None; self.len()];
        for &i in keep {
            let l = self
                .label(i)
                .ok_or_else(|| Error::invalid(format!("index {i} carries no label")))?;
            labels[i] = Some(l.clone());
            meta[i] = self.solver_meta[i];
        }
        Self::new(labels, self.quality, meta)
    }

    /// Shape and range check against the dataset the labels belong to.
    pub fn check_alignment(&self, ds: &Dataset) -> Result<()> {
        if self.len() != ds.len() {
            return Err(Error::Alignment(format!(
                "label set has {} rows but dataset has {} snapshots",
                self.len(),
                ds.len()
            )));
        }
        for &i in &self.labeled_idx {
            let l = self.labels[i].as_ref().expect("labeled index carries a label");
            if l.len() != ds.users() {
                return Err(Error::Alignment(format!(
                    "label {i} has {} entries, dataset has K = {}",
                    l.len(),
                    ds.users()
                )));
            }
            if let Some(v) = l.iter().find(|v| **v > ds.pmax() * (1.0 + 1e-12)) {
                return Err(Error::Alignment(format!(
                    "label {i} entry {v} exceeds pmax {}",
                    ds.pmax()
                )));
            }
        }
        Ok(())
    }
}
