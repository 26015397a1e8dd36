//! Wavelet-regularized adversarial training at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]), the 2-D
//! wavelet transform and Wavelet Average Pooling ([`wavelet`]), residual networks
//! with a configurable pooling stage ([`model`]), white- and black-box attacks
//! ([`attacks`]), the adversarial training loop ([`training`]), evaluation harnesses
//! ([`evaluation`]) and file formats plus experiment drivers ([`io`], [`experiment`]).

pub mod attacks;
pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod model;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
