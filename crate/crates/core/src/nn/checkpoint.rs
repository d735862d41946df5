use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Activation, BatchNorm, Mlp};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
    /// Row-major `n_{l-1} x n_l` matrices.
    weights: Vec<Vec<Vec<f64>>>,
    batch_norm: Option<Vec<BatchNorm>>,
}

pub fn save_checkpoint(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        version: VERSION,
        widths: net.widths(),
        hidden: net.hidden(),
        output: net.output(),
        weights: net
            .weights()
            .iter()
            .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        batch_norm: net.batch_norm().map(|b| b.to_vec()),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, "document", e.to_string()))?;
    if f.version != VERSION {
        return Err(Error::parse(path, "version", format!("unsupported version {}", f.version)));
    }
    if f.widths.len() != f.weights.len() + 1 {
        return Err(Error::parse(path, "widths", "does not match the number of layers"));
    }
    let mut ws = Vec::with_capacity(f.weights.len());
    for (l, rows) in f.weights.into_iter().enumerate() {
        let (r, c) = (f.widths[l], f.widths[l + 1]);
        if rows.len() != r || rows.iter().any(|row| row.len() != c) {
            return Err(Error::parse(path, format!("weights[{l}]"), format!("expected {r}x{c}")));
        }
        ws.push(Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).expect("shape checked"));
    }
    let mut net = Mlp::new(ws, f.hidden, f.output).map_err(|e| Error::parse(path, "weights", e.to_string()))?;
    net.set_batch_norm(f.batch_norm)
        .map_err(|e| Error::parse(path, "batch_norm", e.to_string()))?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_experiment, layer_widths};

    #[test]
    fn round_trip_with_batch_norm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut net = init_experiment(&layer_widths(3, &[7, 5]), Activation::ClippedRelu { pmax: 1.0 }, Activation::Sigmoid { pmax: 2.0 }, 1)
            .unwrap()
            .with_batch_norm();
        let mut theta = net.params_flat();
        let n = theta.len();
        theta[n - 1] = 0.1 + 0.2;
        net.set_params_flat(&theta).unwrap();
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
    }
}
