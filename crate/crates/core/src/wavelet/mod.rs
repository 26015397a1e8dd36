//! Wavelet filter banks, the one-level 2-D transform and the pooling layers built on it.

mod filters;
mod multilevel;
mod transform;

pub use filters::{filter_bank, FilterBank, WaveletBase};
pub use multilevel::{direct_approximation, equivalent_lowpass, multilevel_consistency_check, recursive_approximation};
pub use transform::{dwt2d, idwt2d, wavelet_average_pool, wavelet_low_pass_pool, SubbandSet};

pub(crate) use transform::{
    check_even as dwt2d_shape_check, pool as pool_with, pool_adjoint, subband_adjoint, PoolKind,
};

/// Operator (spectral) norm of the average-pooling layer on `size x size` planes, the
/// Lipschitz constant of the layer with respect to the L2 norm.
pub fn wap_lipschitz(fb: &FilterBank, size: usize) -> f64 {
    transform::pool_operator_norm(fb, PoolKind::Average, size, 300)
}

/// Operator norm of the approximation-only pooling layer.
pub fn lpf_lipschitz(fb: &FilterBank, size: usize, half_scale: bool) -> f64 {
    transform::pool_operator_norm(fb, PoolKind::LowPass { half_scale }, size, 300)
}
