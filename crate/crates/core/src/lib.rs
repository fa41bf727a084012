//! Dual-domain PET attenuation and scatter correction.
//!
//! The crate bundles a small reverse-mode autodiff engine, the wavelet/Fourier
//! transforms and selective-scan blocks the network is built from, the
//! correction network itself, a Beer–Lambert phantom simulator that produces
//! paired training data, evaluation metrics, and a CT dose calculator.

pub mod autodiff;
pub mod config;
pub mod dose;
pub mod error;
pub mod fasd;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod mbcr;
pub mod model;
mod kernels;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod transforms;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
