use serde::{Deserialize, Serialize};

/// `theta - eta * grad`.
pub fn gd_step(theta: &[f64], grad: &[f64], eta: f64) -> Vec<f64> {
    theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            rho: 0.9,
            eps: 1e-8,
            lr: 1e-3,
        }
    }
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmsPropState {
    pub s: Vec<f64>,
}

/// `s <- rho s + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(s) + eps)`.
/// A fresh (empty) state starts from zeros.
pub fn rmsprop_step(state: &mut RmsPropState, theta: &mut [f64], grad: &[f64], cfg: &RmsPropConfig) {
    if state.s.len() != theta.len() {
        state.s = vec![0.0; theta.len()];
    }
    for ((t, g), s) in theta.iter_mut().zip(grad).zip(state.s.iter_mut()) {
        *s = cfg.rho * *s + (1.0 - cfg.rho) * g * g;
        *t -= cfg.lr * g / (s.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_arithmetic() {
        assert_eq!(gd_step(&[1.0], &[2.0], 0.1), vec![0.8]);
        assert_eq!(gd_step(&[1.0, -3.0], &[0.0, 0.0], 0.5), vec![1.0, -3.0]);
    }

    #[test]
    fn gd_steps_do_not_commute_with_a_merged_step() {
        // f(x) = x^2 / 2: two steps give (1 - eta)^2 x, one merged step 1 - 2 eta.
        let x0 = [1.0];
        let x1 = gd_step(&x0, &x0, 0.1);
        let x2 = gd_step(&x1, &x1, 0.1);
        let merged = gd_step(&x0, &[x0[0] + x0[0]], 0.1);
        assert!((x2[0] - 0.81).abs() < 1e-15);
        assert!((merged[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_hand_iteration() {
        let cfg = RmsPropConfig { rho: 0.9, eps: 1e-8, lr: 0.1 };
        let mut st = RmsPropState::default();
        let mut th = [0.0];
        rmsprop_step(&mut st, &mut th, &[1.0], &cfg);
        let d1 = 0.1 / (0.1f64.sqrt() + 1e-8);
        assert!((th[0] + d1).abs() < 1e-15);
        rmsprop_step(&mut st, &mut th, &[1.0], &cfg);
        let d2 = 0.1 / (0.19f64.sqrt() + 1e-8);
        assert!((th[0] + d1 + d2).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_limits() {
        let cfg = RmsPropConfig::default();
        let mut st = RmsPropState::default();
        let mut th = [0.0, 5.0];
        for _ in 0..500 {
            let before = th;
            rmsprop_step(&mut st, &mut th, &[3.0, -0.2], &cfg);
            if st.s[0] > 8.99 {
                assert!(((before[0] - th[0]) - cfg.lr).abs() < 1e-6);
                assert!(((th[1] - before[1]) - cfg.lr).abs() < 1e-6);
            }
        }
        let mut still = [1.5];
        rmsprop_step(&mut RmsPropState::default(), &mut still, &[0.0], &cfg);
        assert_eq!(still, [1.5]);
    }
}
