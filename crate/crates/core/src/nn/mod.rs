//! Bias-free fully connected networks: activations, forward and backward
//! passes, initializations, singular-value diagnostics and checkpoints.

mod activation;
mod checkpoint;
mod init;
mod mlp;
mod spectral;

pub use activation::Activation;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use init::{init_assumption3, init_experiment, layer_widths, Assumption3Config};
pub use mlp::{BatchNorm, BnMode, ForwardTrace, Mlp, BN_EPS, BN_MOMENTUM};
pub use spectral::{
    forward_lipschitz, frobenius, sigma_max, sigma_min, singular_values, spectral_report, SpectralReport,
};
