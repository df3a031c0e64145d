//! Differentiable building blocks: tensors, a reverse-mode tape, convolution
//! and dense layers, instance and adaptive instance normalization, residual
//! blocks, parameter stores and a finite-difference gradient checker.

mod conv;
pub mod gradcheck;
pub mod layers;
pub mod params;
mod scalar;
mod tape;
mod tensor;

pub use conv::{same_padding, ConvGeom, Padding};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, Parameterized, Probe};
pub use layers::{
    activate, adain, apply_layer, init_layer, init_residual_block, residual_block_adain, residual_conv_spec,
    Activation, AffineVars, DenseChain, LayerKind, LayerSpec, Norm, LEAKY_SLOPE, NORM_EPS,
};
pub use params::{he_truncated_normal, read_entries, write_entries, ParamStore};
pub use scalar::Scalar;
pub use tape::{BranchLog, Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::Tensor;

/// Alias used for all network activations: `batch x channels x time x frequency`.
pub type FeatureMap<T> = Tensor<T>;
