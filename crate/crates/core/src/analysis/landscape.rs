use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSnapshot, Dataset};
use crate::error::{Error, Result};
use crate::rate;

/// Largest number of objective evaluations a grid search may request.
pub const GRID_LIMIT: u128 = 100_000_000;

/// Sum rate sampled on a cartesian grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub axes: Vec<Vec<f64>>,
    /// Sum rate in nats (the negative of the unsupervised loss), row-major
    /// with the first axis varying slowest.
    pub values: Vec<f64>,
    /// Lexicographically smallest grid point attaining `max`.
    pub argmax: Vec<f64>,
    pub max: f64,
    pub resolution: f64,
}

impl LandscapeGrid {
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Coordinates of the flat index `i`.
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let len = self.axes[d].len();
            out[d] = self.axes[d][i % len];
            i /= len;
        }
        out
    }
}

/// `0, res, 2 res, ..., pmax`; `pmax` is always the last point.
pub fn axis(pmax: f64, resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0) || !(pmax > 0.0) {
        return Err(Error::invalid(format!("need positive resolution and pmax, got {resolution}, {pmax}")));
    }
    let steps = (pmax / resolution + 1e-9).floor() as usize;
    let mut pts: Vec<f64> = (0..=steps).map(|i| i as f64 * resolution).collect();
    let last = pts.last_mut().expect("at least the origin");
    if (*last - pmax).abs() <= 1e-9 * pmax {
        *last = pmax;
    } else {
        pts.push(pmax);
    }
    Ok(pts)
}

fn guard(axes: &[Vec<f64>], repeats: usize) -> Result<()> {
    let points = axes
        .iter()
        .fold(repeats as u128, |acc, a| acc.saturating_mul(a.len() as u128));
    if points > GRID_LIMIT {
        return Err(Error::GridTooLarge {
            points,
            limit: GRID_LIMIT,
        });
    }
    if points == 0 {
        return Err(Error::invalid("empty grid"));
    }
    Ok(())
}

/// Evaluate `f` over the grid; ties keep the lexicographically smallest point.
fn sweep(axes: Vec<Vec<f64>>, resolution: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<LandscapeGrid> {
    let total: usize = axes.iter().map(Vec::len).product();
    let dims = axes.len();
    let mut idx = vec![0usize; dims];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut values = Vec::with_capacity(total);
    let mut best = f64::NEG_INFINITY;
    let mut argmax = point.clone();
    for _ in 0..total {
        let v = f(&point)?;
        if v > best {
            best = v;
            argmax.copy_from_slice(&point);
        }
        values.push(v);
        for d in (0..dims).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                point[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = axes[d][0];
        }
    }
    Ok(LandscapeGrid {
        axes,
        values,
        argmax,
        max: best,
        resolution,
    })
}

/// Grid over one snapshot's `K` powers.
pub fn snapshot_grid(snap: &ChannelSnapshot, resolution: f64) -> Result<LandscapeGrid> {
    let axes = vec![axis(snap.pmax(), resolution)?; snap.users()];
    guard(&axes, 1)?;
    sweep(axes, resolution, |p| rate::wsr(p, snap))
}

/// Per-snapshot brute force; the total objective separates over snapshots,
/// so the joint maximizer is the stack of per-snapshot maximizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForce {
    pub per_snapshot: Vec<LandscapeGrid>,
    /// `N x K` maximizer.
    pub argmax: Array2<f64>,
    /// Total sum rate at `argmax`, in nats.
    pub max: f64,
}

pub fn grid_bruteforce(ds: &Dataset, resolution: f64) -> Result<BruteForce> {
    let axes = vec![axis(ds.pmax(), resolution)?; ds.users()];
    guard(&axes, ds.len())?;
    let per_snapshot = ds
        .snapshots()
        .iter()
        .map(|s| snapshot_grid(s, resolution))
        .collect::<Result<Vec<_>>>()?;
    let k = ds.users();
    let mut argmax = Array2::zeros((ds.len(), k));
    for (n, g) in per_snapshot.iter().enumerate() {
        for j in 0..k {
            argmax[[n, j]] = g.argmax[j];
        }
    }
    let max = per_snapshot.iter().map(|g| g.max).sum();
    Ok(BruteForce {
        per_snapshot,
        argmax,
        max,
    })
}

/// Grid over all `N * K` powers at once; only for small problems.
pub fn joint_grid(ds: &Dataset, resolution: f64) -> Result<LandscapeGrid> {
    let k = ds.users();
    let axes = vec![axis(ds.pmax(), resolution)?; ds.len() * k];
    guard(&axes, 1)?;
    sweep(axes, resolution, |p| {
        ds.snapshots()
            .iter()
            .enumerate()
            .map(|(n, s)| rate::wsr(&p[n * k..(n + 1) * k], s))
            .sum()
    })
}

/// Two-user, two-snapshot slice with each snapshot's powers summing to
/// `pmax`: axis 0 is `p_1` of snapshot 1, axis 1 is `p_1` of snapshot 2.
pub fn sum_constrained_slice(ds: &Dataset, resolution: f64) -> Result<LandscapeGrid> {
    if ds.users() != 2 || ds.len() != 2 {
        return Err(Error::Unsupported("the sum-constrained slice needs K = 2 and N = 2".into()));
    }
    let pmax = ds.pmax();
    let axes = vec![axis(pmax, resolution)?; 2];
    guard(&axes, 1)?;
    sweep(axes, resolution, |p| {
        Ok(rate::wsr(&[p[0], pmax - p[0]], ds.snapshot(0))? + rate::wsr(&[p[1], pmax - p[1]], ds.snapshot(1))?)
    })
}

/// Outcome of a neighbourhood check around a candidate unsupervised-loss minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMinReport {
    pub is_local_min: bool,
    /// No grid point of the ball has a lower loss.
    pub value_check: bool,
    /// Boundary coordinates keep their sign condition over the ball.
    pub gradient_check: bool,
    /// Unsupervised loss `-sum_n R` at the candidate.
    pub loss_at_star: f64,
    /// Ball point with the lowest loss.
    pub worst_neighbor: Array2<f64>,
    /// `loss(star) - loss(worst_neighbor)`; positive means a better point exists.
    pub worst_gap: f64,
    pub points_checked: usize,
}

fn total_loss(ds: &Dataset, p: &Array2<f64>) -> Result<f64> {
    let mut v = 0.0;
    for (row, s) in p.rows().into_iter().zip(ds.snapshots()) {
        v -= rate::wsr(row.as_slice().expect("standard layout"), s)?;
    }
    Ok(v)
}

/// Check that `p_star` (`N x K`) minimizes the unsupervised loss over the
/// feasible max-norm ball of radius `eps`, sampled at `resolution`.
///
/// Coordinates at `pmax` must also have a strictly negative loss derivative
/// over the whole ball, and coordinates at 0 a strictly positive one.
pub fn verify_local_min(ds: &Dataset, p_star: &Array2<f64>, eps: f64, resolution: f64) -> Result<LocalMinReport> {
    let (n, k) = (ds.len(), ds.users());
    let pmax = ds.pmax();
    if p_star.dim() != (n, k) {
        return Err(Error::invalid(format!("candidate has shape {:?}, expected ({n}, {k})", p_star.dim())));
    }
    if p_star.iter().any(|v| !(0.0..=pmax).contains(v)) {
        return Err(Error::invalid("candidate is not feasible"));
    }
    if !(eps > 0.0 && resolution > 0.0) {
        return Err(Error::invalid("eps and resolution must be positive"));
    }
    let reach = (eps / resolution + 1e-9).floor() as i64;
    let axes: Vec<Vec<f64>> = p_star
        .iter()
        .map(|&c| {
            (-reach..=reach)
                .map(|j| c + j as f64 * resolution)
                .filter(|v| (-1e-12..=pmax + 1e-12).contains(v))
                .map(|v| v.clamp(0.0, pmax))
                .collect()
        })
        .collect();
    guard(&axes, 1)?;

    let star = p_star.as_standard_layout().to_owned();
    let loss_star = total_loss(ds, &star)?;
    let slack = 1e-12 * (1.0 + loss_star.abs());
    let mut worst = star.clone();
    let mut worst_loss = loss_star;
    let mut grad_ok = true;
    let mut count = 0;
    let mut cand = Array2::zeros((n, k));
    sweep(axes, resolution, |flat| {
        count += 1;
        for (c, v) in cand.iter_mut().zip(flat) {
            *c = *v;
        }
        let l = total_loss(ds, &cand)?;
        if l < worst_loss {
            worst_loss = l;
            worst.assign(&cand);
        }
        for (row, (snap, star_row)) in cand.rows().into_iter().zip(ds.snapshots().iter().zip(star.rows())) {
            let g = rate::wsr_grad(row.as_slice().expect("standard layout"), snap)?;
            for j in 0..k {
                // Loss derivative is -dR/dp.
                let d = -g[j];
                if star_row[j] >= pmax && d >= 0.0 || star_row[j] <= 0.0 && d <= 0.0 {
                    grad_ok = false;
                }
            }
        }
        Ok(l)
    })?;
    let value_check = worst_loss >= loss_star - slack;
    Ok(LocalMinReport {
        is_local_min: value_check && grad_ok,
        value_check,
        gradient_check: grad_ok,
        loss_at_star: loss_star,
        worst_gap: loss_star - worst_loss,
        worst_neighbor: worst,
        points_checked: count,
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dims: usize,
    axis_lengths: Vec<usize>,
    argmax: Vec<f64>,
    max: f64,
    resolution: f64,
    csv: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write one CSV row per grid point plus a JSON sidecar with the maximizer.
pub fn export_landscape(grid: &LandscapeGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if grid.values.is_empty() {
        return Err(Error::invalid("refusing to export an empty grid"));
    }
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(ser)?;
    let mut header: Vec<String> = (0..grid.dims()).map(|d| format!("x{d}")).collect();
    header.push("sum_rate_nats".into());
    w.write_record(&header).map_err(ser)?;
    for (i, v) in grid.values.iter().enumerate() {
        let mut rec: Vec<String> = grid.point(i).iter().map(|c| c.to_string()).collect();
        rec.push(v.to_string());
        w.write_record(&rec).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        dims: grid.dims(),
        axis_lengths: grid.axes.iter().map(Vec::len).collect(),
        argmax: grid.argmax.clone(),
        max: grid.max,
        resolution: grid.resolution,
        csv: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let text = serde_json::to_string_pretty(&side).map_err(|e| Error::Serialize(e.to_string()))?;
    let sp = sidecar_path(path);
    fs::write(&sp, text).map_err(|e| Error::io(sp, e))
}

/// Read back a grid written by [`export_landscape`].
pub fn load_landscape(path: impl AsRef<Path>) -> Result<LandscapeGrid> {
    let path = path.as_ref();
    let sp = sidecar_path(path);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(&sp, "document", e.to_string()))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, "header", e.to_string()))?;
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); side.dims];
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, format!("row {i}"), e.to_string()))?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, format!("row {i}"), e.to_string()))?;
        if nums.len() != side.dims + 1 {
            return Err(Error::parse(path, format!("row {i}"), "wrong column count"));
        }
        for d in 0..side.dims {
            if !axes[d].contains(&nums[d]) {
                axes[d].push(nums[d]);
            }
        }
        values.push(nums[side.dims]);
    }
    if axes.iter().map(Vec::len).collect::<Vec<_>>() != side.axis_lengths {
        return Err(Error::parse(path, "axes", "grid does not match its sidecar"));
    }
    Ok(LandscapeGrid {
        axes,
        values,
        argmax: side.argmax,
        max: side.max,
        resolution: side.resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{construct_toy_pair, generate_rayleigh, TOY_DIRECT_DEFAULT};
    use ndarray::arr2;

    #[test]
    fn axis_points() {
        let a = axis(1.0, 0.01).unwrap();
        assert_eq!(a.len(), 101);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[100], 1.0);
        assert_eq!(axis(1.0, 0.3).unwrap(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn toy_strong_optimum_is_binary() {
        let ds = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let bf = grid_bruteforce(&ds, 0.01).unwrap();
        assert_eq!(bf.argmax, arr2(&[[0.0, 1.0], [1.0, 0.0]]));
        assert!((bf.max - 2.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn toy_weak_optimum_keeps_both_users() {
        let ds = construct_toy_pair(0.1, TOY_DIRECT_DEFAULT).unwrap();
        let bf = grid_bruteforce(&ds, 0.01).unwrap();
        assert_eq!(bf.argmax, arr2(&[[1.0, 1.0], [1.0, 1.0]]));
    }

    #[test]
    fn single_user_full_power() {
        let ds = generate_rayleigh(1, 3, 1.0, 1.0, 1.0, 1.0, 0).unwrap();
        let bf = grid_bruteforce(&ds, 0.05).unwrap();
        assert!(bf.argmax.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn joint_and_separate_agree() {
        for (f, seed) in [(10.0, 0u64), (0.1, 1), (1.5, 2)] {
            let ds = construct_toy_pair(f, TOY_DIRECT_DEFAULT).unwrap();
            let bf = grid_bruteforce(&ds, 0.1).unwrap();
            let joint = joint_grid(&ds, 0.1).unwrap();
            assert_eq!(joint.argmax, bf.argmax.iter().copied().collect::<Vec<_>>(), "f = {f}, seed {seed}");
            assert!((joint.max - bf.max).abs() < 1e-12);
        }
        let ds = generate_rayleigh(2, 2, 1.0, 3.0, 1.0, 1.0, 5).unwrap();
        let bf = grid_bruteforce(&ds, 0.1).unwrap();
        assert_eq!(joint_grid(&ds, 0.1).unwrap().argmax, bf.argmax.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn grid_guard() {
        let ds = generate_rayleigh(10, 2, 1.0, 1.0, 1.0, 1.0, 0).unwrap();
        assert!(matches!(grid_bruteforce(&ds, 0.01), Err(Error::GridTooLarge { .. })));
        let toy = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        assert!(matches!(joint_grid(&toy, 0.01), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn lexicographic_ties() {
        let s = ChannelSnapshot::unit(arr2(&[[0.0, 0.0], [0.0, 0.0]])).unwrap();
        let g = snapshot_grid(&s, 0.5).unwrap();
        assert_eq!(g.argmax, vec![0.0, 0.0]);
        assert_eq!(g.values.len(), 9);
        assert_eq!(g.point(5), vec![0.5, 1.0]);
    }

    #[test]
    fn local_min_certificates() {
        let strong = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let trap = arr2(&[[1.0, 0.0], [1.0, 0.0]]);
        let r = verify_local_min(&strong, &trap, 0.05, 0.005).unwrap();
        assert!(r.is_local_min, "{r:?}");
        assert_eq!(r.points_checked, 11usize.pow(4));
        let global = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(verify_local_min(&strong, &global, 0.05, 0.005).unwrap().is_local_min);

        let weak = construct_toy_pair(0.1, TOY_DIRECT_DEFAULT).unwrap();
        let r = verify_local_min(&weak, &trap, 0.05, 0.005).unwrap();
        assert!(!r.is_local_min && !r.value_check && r.worst_gap > 0.0);
        assert!(verify_local_min(&weak, &arr2(&[[1.2, 0.0], [1.0, 0.0]]), 0.05, 0.005).is_err());
    }

    #[test]
    fn slice_parameterization() {
        let ds = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let g = sum_constrained_slice(&ds, 0.01).unwrap();
        // Best: snapshot 1 gives all power to user 2, snapshot 2 to user 1.
        assert_eq!(g.argmax, vec![0.0, 1.0]);
        let i = 37 * 101 + 80;
        let expect = rate::wsr(&[0.37, 1.0 - 0.37], ds.snapshot(0)).unwrap() + rate::wsr(&[0.8, 1.0 - 0.8], ds.snapshot(1)).unwrap();
        assert!((g.values[i] - expect).abs() < 1e-12);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let ds = construct_toy_pair(10.0, TOY_DIRECT_DEFAULT).unwrap();
        let g = sum_constrained_slice(&ds, 0.05).unwrap();
        export_landscape(&g, &path).unwrap();
        let back = load_landscape(&path).unwrap();
        assert_eq!(back.argmax, g.argmax);
        assert_eq!(back.values, g.values);
        let empty = LandscapeGrid { axes: vec![], values: vec![], argmax: vec![], max: 0.0, resolution: 0.1 };
        assert!(export_landscape(&empty, dir.path().join("e.csv")).is_err());
    }
}
