use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ChannelSnapshot, Dataset, LabelQuality, LabelSet, Scenario, SolverMeta};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    scenario: Scenario,
    seed: u64,
    sigma2: f64,
    pmax: f64,
    weights: Vec<f64>,
    gen_params: [f64; 2],
    mags: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    version: u32,
    quality: LabelQuality,
    labeled_idx: Vec<usize>,
    labels: Vec<Option<Vec<f64>>>,
    solver_meta: Vec<Option<SolverMeta>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, "document", e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = DatasetFile {
        version: FORMAT_VERSION,
        k: ds.users(),
        n: ds.len(),
        scenario: ds.scenario,
        seed: ds.seed,
        sigma2: ds.sigma2(),
        pmax: ds.pmax(),
        weights: ds.weights().to_vec(),
        gen_params: [ds.gen_params.0, ds.gen_params.1],
        mags: ds
            .snapshots()
            .iter()
            .map(|s| s.mags().rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
    };
    write_json(path.as_ref(), &file)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f: DatasetFile = read_json(path)?;
    let bad = |record: String, detail: String| Error::parse(path, record, detail);

    if f.version != FORMAT_VERSION {
        return Err(bad("version".into(), format!("unsupported version {}", f.version)));
    }
    if !(f.sigma2.is_finite() && f.sigma2 > 0.0) {
        return Err(bad("sigma2".into(), format!("must be positive, got {}", f.sigma2)));
    }
    if !(f.pmax.is_finite() && f.pmax > 0.0) {
        return Err(bad("pmax".into(), format!("must be positive, got {}", f.pmax)));
    }
    if f.k == 0 || f.weights.len() != f.k {
        return Err(bad("weights".into(), format!("expected {} entries, got {}", f.k, f.weights.len())));
    }
    if let Some(i) = f.weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(bad(format!("weights[{i}]"), "must be non-negative".into()));
    }
    if f.mags.len() != f.n || f.n == 0 {
        return Err(bad("mags".into(), format!("expected {} snapshots, got {}", f.n, f.mags.len())));
    }
    let weights = Array1::from(f.weights);
    let mut snapshots = Vec::with_capacity(f.n);
    for (n, rows) in f.mags.into_iter().enumerate() {
        if rows.len() != f.k || rows.iter().any(|r| r.len() != f.k) {
            return Err(bad(format!("mags[{n}]"), format!("expected a {0}x{0} matrix", f.k)));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(i) = flat.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad(
                format!("mags[{n}][{}][{}]", i / f.k, i % f.k),
                format!("invalid magnitude {}", flat[i]),
            ));
        }
        let mags = Array2::from_shape_vec((f.k, f.k), flat).expect("shape checked above");
        snapshots.push(
            ChannelSnapshot::new(mags, f.sigma2, f.pmax, weights.clone())
                .map_err(|e| bad(format!("mags[{n}]"), e.to_string()))?,
        );
    }
    Dataset::new(snapshots, f.scenario, f.seed, (f.gen_params[0], f.gen_params[1]))
        .map_err(|e| bad("mags".into(), e.to_string()))
}

pub fn save_labels(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let file = LabelFile {
        version: FORMAT_VERSION,
        quality: labels.quality,
        labeled_idx: labels.labeled_idx().to_vec(),
        labels: labels.labels().iter().map(|l| l.as_ref().map(|a| a.to_vec())).collect(),
        solver_meta: labels.solver_meta().to_vec(),
    };
    write_json(path.as_ref(), &file)
}

/// Load a label file; pass the dataset to also enforce row alignment.
pub fn load_labels(path: impl AsRef<Path>, ds: Option<&Dataset>) -> Result<LabelSet> {
    let path = path.as_ref();
    let f: LabelFile = read_json(path)?;
    let bad = |record: String, detail: String| Error::parse(path, record, detail);

    if f.version != FORMAT_VERSION {
        return Err(bad("version".into(), format!("unsupported version {}", f.version)));
    }
    for (i, l) in f.labels.iter().enumerate() {
        if let Some(v) = l.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(bad(format!("labels[{i}]"), format!("invalid power {v}")));
        }
    }
    let present: Vec<usize> = f
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().map(|_| i))
        .collect();
    if present != f.labeled_idx {
        return Err(bad(
            "labeled_idx".into(),
            "does not match the rows that carry labels".into(),
        ));
    }
    let set = LabelSet::new(
        f.labels.into_iter().map(|l| l.map(Array1::from)).collect(),
        f.quality,
        f.solver_meta,
    )?;
    if let Some(ds) = ds {
        set.check_alignment(ds)?;
    }
    Ok(set)
}
