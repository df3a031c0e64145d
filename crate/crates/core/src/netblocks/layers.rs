//! Layer-level building blocks expressed over a [`Tape`] and a [`ParamStore`].
//!
//! Parameters of a layer named `n` are registered as `n.w` and `n.b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::he_truncated_normal;
use super::{Padding, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    TConv,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    Instance,
    AdaIn,
    None,
}

/// One convolutional or dense layer: kernel, output channels, stride,
/// padding mode, activation and normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub channels_out: usize,
    pub stride: (usize, usize),
    pub padding: Padding,
    pub activation: Activation,
    pub norm: Norm,
}

impl LayerSpec {
    pub const fn conv(kernel: (usize, usize), channels_out: usize, stride: (usize, usize)) -> Self {
        Self {
            kind: LayerKind::Conv,
            kernel,
            channels_out,
            stride,
            padding: Padding::Zero,
            activation: Activation::None,
            norm: Norm::None,
        }
    }

    pub const fn tconv(kernel: (usize, usize), channels_out: usize, stride: (usize, usize)) -> Self {
        Self {
            kind: LayerKind::TConv,
            ..Self::conv(kernel, channels_out, stride)
        }
    }

    pub const fn dense(width: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            ..Self::conv((1, 1), width, (1, 1))
        }
    }

    pub const fn act(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub const fn norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub const fn pad(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kt, kf) = self.kernel;
        let (st, sf) = self.stride;
        if kt == 0 || kf == 0 || st == 0 || sf == 0 || self.channels_out == 0 {
            return Err(Error::InvalidConfig(format!("degenerate layer spec {self:?}")));
        }
        Ok(())
    }

    /// Weight shape given the input channel (or width) count.
    pub fn weight_shape(&self, c_in: usize) -> Vec<usize> {
        let (kt, kf) = self.kernel;
        match self.kind {
            LayerKind::Conv => vec![self.channels_out, c_in, kt, kf],
            LayerKind::TConv => vec![c_in, self.channels_out, kt, kf],
            LayerKind::Dense => vec![self.channels_out, c_in],
        }
    }

    pub fn fan_in(&self, c_in: usize) -> usize {
        match self.kind {
            LayerKind::Dense => c_in,
            _ => c_in * self.kernel.0 * self.kernel.1,
        }
    }

    /// Spatial output shape for a `(t, f)` input.
    pub fn output_plane(&self, (t, f): (usize, usize)) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv => (t.div_ceil(self.stride.0), f.div_ceil(self.stride.1)),
            LayerKind::TConv => (t * self.stride.0, f * self.stride.1),
            LayerKind::Dense => (1, 1),
        }
    }
}

/// Registers `name.w` (truncated He normal) and `name.b` (zeros).
pub fn init_layer<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    spec: &LayerSpec,
    c_in: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    spec.validate()?;
    let w = he_truncated_normal(&spec.weight_shape(c_in), spec.fan_in(c_in), rng);
    store.insert(format!("{name}.w"), w)?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[spec.channels_out]))?;
    Ok(())
}

pub fn activate<T: Scalar>(tape: &mut Tape<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::None => x,
    }
}

/// Affine parameters for one AdaIN site, each `batch x channels`.
#[derive(Clone, Copy, Debug)]
pub struct AffineVars {
    pub gamma: Var,
    pub beta: Var,
}

/// `gamma * instance_norm(x) + beta`, per sample and channel.
pub fn adain<T: Scalar>(tape: &mut Tape<T>, x: Var, aff: AffineVars) -> Result<Var> {
    let (bn, c, _, _) = tape.value(x).dims4()?;
    if tape.value(aff.gamma).shape() != [bn, c] || tape.value(aff.beta).shape() != [bn, c] {
        return Err(Error::shape(format!(
            "adain: {c} channels but affine params {:?}/{:?}",
            tape.value(aff.gamma).shape(),
            tape.value(aff.beta).shape()
        )));
    }
    let normed = tape.instance_norm(x, NORM_EPS)?;
    tape.channel_affine(normed, aff.gamma, aff.beta)
}

/// Applies one layer: linear op, then normalization, then activation.
/// `aff` is required iff `spec.norm == Norm::AdaIn`.
pub fn apply_layer<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    spec: &LayerSpec,
    x: Var,
    aff: Option<AffineVars>,
) -> Result<Var> {
    let w = tape.param_named(store, &format!("{name}.w"))?;
    let b = tape.param_named(store, &format!("{name}.b"))?;
    let y = match spec.kind {
        LayerKind::Conv => tape.conv2d(x, w, b, spec.stride, spec.padding)?,
        LayerKind::TConv => tape.tconv2d(x, w, b, spec.stride, spec.padding)?,
        LayerKind::Dense => tape.dense(x, w, b)?,
    };
    let y = match (spec.norm, aff) {
        (Norm::Instance, _) => tape.instance_norm(y, NORM_EPS)?,
        (Norm::AdaIn, Some(aff)) => adain(tape, y, aff)?,
        (Norm::AdaIn, None) => return Err(Error::shape(format!("layer `{name}` needs AdaIN parameters"))),
        (Norm::None, _) => y,
    };
    Ok(activate(tape, y, spec.activation))
}

/// Stack of dense layers `widths[0] -> widths[1] -> ...`, with `act` between
/// layers and none after the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseChain {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl DenseChain {
    pub fn new(widths: &[usize], activation: Activation) -> Self {
        Self {
            widths: widths.to_vec(),
            activation,
        }
    }

    pub fn layer_name(prefix: &str, i: usize) -> String {
        format!("{prefix}.{i}")
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        for (i, pair) in self.widths.windows(2).enumerate() {
            init_layer(store, &Self::layer_name(prefix, i), &LayerSpec::dense(pair[1]), pair[0], rng)?;
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
        let (_, width) = tape.value(x).dims2()?;
        if width != self.widths[0] {
            return Err(Error::shape(format!(
                "dense chain `{prefix}` expects width {}, got {width}",
                self.widths[0]
            )));
        }
        let n = self.widths.len() - 1;
        let mut h = x;
        for i in 0..n {
            let act = if i + 1 < n { self.activation } else { Activation::None };
            let spec = LayerSpec::dense(self.widths[i + 1]).act(act);
            h = apply_layer(tape, store, &Self::layer_name(prefix, i), &spec, h, None)?;
        }
        Ok(h)
    }
}

/// Residual block with AdaIN before each 3x3 convolution:
/// `x + conv2(relu(adain2(conv1(relu(adain1(x))))))`.
///
/// The block ends in a convolution, so zero weights give the identity.
pub fn residual_block_adain<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    aff1: AffineVars,
    aff2: AffineVars,
) -> Result<Var> {
    let (_, c, _, _) = tape.value(x).dims4()?;
    let spec = residual_conv_spec(c);
    let h = adain(tape, x, aff1)?;
    let h = tape.relu(h);
    let h = apply_layer(tape, store, &format!("{name}.conv1"), &spec, h, None)?;
    let h = adain(tape, h, aff2)?;
    let h = tape.relu(h);
    let h = apply_layer(tape, store, &format!("{name}.conv2"), &spec, h, None)?;
    tape.add(x, h)
}

pub fn residual_conv_spec(channels: usize) -> LayerSpec {
    LayerSpec::conv((3, 3), channels, (1, 1))
}

pub fn init_residual_block<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let spec = residual_conv_spec(channels);
    init_layer(store, &format!("{name}.conv1"), &spec, channels, rng)?;
    init_layer(store, &format!("{name}.conv2"), &spec, channels, rng)
}
