//! Power control for K-user SISO interference channels with small fully
//! connected networks trained by supervised, unsupervised and semi-supervised
//! losses, plus the numerical checks around them.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod nn;
pub mod rate;
pub mod rng;
pub mod train;
pub mod wmmse;

pub use error::{Error, Result};
