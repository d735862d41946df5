//! Landscape brute force, local-minimum certificates and stationarity checks
//! of the training problems.

mod kkt;
mod landscape;

pub use kkt::{inclusion_test, training_kkt, InclusionReport, InclusionTolerances, TrainingKkt, Verdict};
pub use landscape::{
    axis, export_landscape, grid_bruteforce, joint_grid, load_landscape, snapshot_grid, sum_constrained_slice,
    verify_local_min, BruteForce, LandscapeGrid, LocalMinReport, GRID_LIMIT,
};

use crate::error::{Error, Result};

/// Second differences of `f` at `steps + 1` evenly spaced points on the
/// segment from `a` to `b`. All are non-negative when `f` is convex there.
pub fn segment_second_differences(
    a: &[f64],
    b: &[f64],
    steps: usize,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid("segment endpoints differ in length"));
    }
    if steps < 2 {
        return Err(Error::invalid("need at least two steps"));
    }
    let mut point = vec![0.0; a.len()];
    let mut vals = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        for ((p, x), y) in point.iter_mut().zip(a).zip(b) {
            *p = (1.0 - t) * x + t * y;
        }
        vals.push(f(&point)?);
    }
    Ok(vals.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect())
}
