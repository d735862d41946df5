use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Elementwise activations for hidden and output layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// Leaky ReLU convolved with a Gaussian of width `kappa`:
    /// `a(x) = gamma x + (1 - gamma) [x Phi(x/kappa) + kappa phi(x/kappa) - kappa phi(0)]`.
    SmoothedLeaky { gamma: f64, kappa: f64 },
    /// `pmax / (1 + e^-x)`.
    Sigmoid { pmax: f64 },
    /// `min(max(0, x), pmax)`.
    ClippedRelu { pmax: f64 },
    /// Identity on `[0, pmax]` with exponential tails, range `(-alpha, pmax + alpha)`.
    Screlu { alpha: f64, pmax: f64 },
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::SmoothedLeaky {
            gamma: 0.5,
            kappa: 0.1,
        }
    }
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Activation::SmoothedLeaky { gamma, kappa } => gamma > 0.0 && gamma < 1.0 && kappa > 0.0,
            Activation::Sigmoid { pmax } | Activation::ClippedRelu { pmax } => pmax > 0.0,
            Activation::Screlu { alpha, pmax } => alpha > 0.0 && pmax > 0.0 && alpha.is_finite(),
            Activation::Identity => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid activation parameters: {self:?}")))
        }
    }

    /// Value and derivative at `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match *self {
            Activation::SmoothedLeaky { gamma, kappa } => {
                let t = x / kappa;
                let cdf = std_normal_cdf(t);
                let smooth = x * cdf + kappa * (std_normal_pdf(t) - INV_SQRT_2PI);
                (gamma * x + (1.0 - gamma) * smooth, gamma + (1.0 - gamma) * cdf)
            }
            Activation::Sigmoid { pmax } => {
                let s = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                (pmax * s, pmax * s * (1.0 - s))
            }
            Activation::ClippedRelu { pmax } => {
                if x < 0.0 {
                    (0.0, 0.0)
                } else if x > pmax {
                    (pmax, 0.0)
                } else {
                    (x, 1.0)
                }
            }
            Activation::Screlu { alpha, pmax } => {
                if x < 0.0 {
                    (alpha * (x / alpha).exp_m1(), (x / alpha).exp())
                } else if x <= pmax {
                    (x, 1.0)
                } else {
                    let t = (pmax - x) / alpha;
                    (pmax - alpha * t.exp_m1(), t.exp())
                }
            }
            Activation::Identity => (x, 1.0),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// Guaranteed lower bound of the derivative over the real line.
    pub fn slope_lower_bound(&self) -> f64 {
        match *self {
            Activation::SmoothedLeaky { gamma, .. } => gamma,
            Activation::Identity => 1.0,
            _ => 0.0,
        }
    }

    /// Lipschitz constant of the derivative, where one exists.
    pub fn derivative_lipschitz(&self) -> Option<f64> {
        match *self {
            Activation::SmoothedLeaky { gamma, kappa } => Some((1.0 - gamma) * INV_SQRT_2PI / kappa),
            Activation::Identity => Some(0.0),
            Activation::Screlu { alpha, .. } => Some(1.0 / alpha),
            Activation::Sigmoid { pmax } => Some(pmax * 0.096_225_044_864_937_63),
            Activation::ClippedRelu { .. } => None,
        }
    }

    /// Output interval for bounded activations.
    pub fn range(&self) -> Option<(f64, f64)> {
        match *self {
            Activation::Sigmoid { pmax } | Activation::ClippedRelu { pmax } => Some((0.0, pmax)),
            Activation::Screlu { alpha, pmax } => Some((-alpha, pmax + alpha)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::SmoothedLeaky { .. } => "smoothed_leaky",
            Activation::Sigmoid { .. } => "sigmoid",
            Activation::ClippedRelu { .. } => "clipped_relu",
            Activation::Screlu { .. } => "screlu",
            Activation::Identity => "identity",
        }
    }
}
