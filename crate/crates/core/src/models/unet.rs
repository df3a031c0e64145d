//! U-net generator for the CycleGAN baseline.
//!
//! The down path mirrors the discriminator's ladder with channels
//! 16/32/64/128. Each up step concatenates the matching down activation; the
//! last concatenation is the raw input, so the final 1x1 projection can pass
//! the input through unchanged.

use rand::Rng;

use super::nets::{check_segment, init_stack, Trace};
use crate::error::Result;
use crate::netblocks::{apply_layer, init_layer, Activation, LayerSpec, Norm, ParamStore, Scalar, Tape, Var};

const LEAKY: Activation = Activation::LeakyRelu;

pub const UNET_DOWN: [LayerSpec; 4] = [
    LayerSpec::conv((6, 6), 16, (2, 2)).act(LEAKY),
    LayerSpec::conv((6, 6), 32, (2, 2)).norm(Norm::Instance).act(LEAKY),
    LayerSpec::conv((1, 6), 64, (1, 2)).norm(Norm::Instance).act(LEAKY),
    LayerSpec::conv((1, 3), 128, (1, 2)).norm(Norm::Instance).act(LEAKY),
];

pub const UNET_UP: [LayerSpec; 4] = [
    LayerSpec::tconv((1, 3), 64, (1, 2)).norm(Norm::Instance).act(Activation::Relu),
    LayerSpec::tconv((1, 6), 32, (1, 2)).norm(Norm::Instance).act(Activation::Relu),
    LayerSpec::tconv((6, 6), 16, (2, 2)).norm(Norm::Instance).act(Activation::Relu),
    LayerSpec::tconv((6, 6), 16, (2, 2)).act(Activation::Relu),
];

pub const UNET_OUT: LayerSpec = LayerSpec::conv((1, 1), 1, (1, 1));

#[derive(Clone, Debug)]
pub struct UNet<T> {
    pub store: ParamStore<T>,
    pub down: Vec<LayerSpec>,
    pub up: Vec<LayerSpec>,
    pub out: LayerSpec,
}

impl<T: Scalar> UNet<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let down = UNET_DOWN.to_vec();
        let up = UNET_UP.to_vec();
        let mut store = ParamStore::new();
        init_stack(&mut store, "down", &down, 1, rng)?;
        // Channels entering each up layer: previous up output plus the skip.
        let mut c = down[3].channels_out;
        for (i, spec) in up.iter().enumerate() {
            init_layer(&mut store, &format!("up{i}"), spec, c, rng)?;
            let skip = if i < 3 { down[2 - i].channels_out } else { 1 };
            c = spec.channels_out + skip;
        }
        init_layer(&mut store, "out", &UNET_OUT, c, rng)?;
        Ok(Self {
            store,
            down,
            up,
            out: UNET_OUT,
        })
    }

    /// Index of the input channel in the final projection's weight that
    /// carries the raw-input skip.
    pub fn input_skip_channel(&self) -> usize {
        self.up[3].channels_out
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, x, &mut Trace::new())
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, x: Var, trace: &mut Trace) -> Result<Var> {
        check_segment(tape, x)?;
        let mut skips = vec![x];
        let mut h = x;
        for (i, spec) in self.down.iter().enumerate() {
            let name = format!("down{i}");
            h = apply_layer(tape, &self.store, &name, spec, h, None)?;
            trace.push((name, tape.value(h).shape().to_vec()));
            skips.push(h);
        }
        skips.pop();
        for (i, spec) in self.up.iter().enumerate() {
            let name = format!("up{i}");
            h = apply_layer(tape, &self.store, &name, spec, h, None)?;
            let skip = skips.pop().expect("one skip per up layer");
            h = tape.concat_channels(h, skip)?;
            trace.push((name, tape.value(h).shape().to_vec()));
        }
        let y = apply_layer(tape, &self.store, "out", &self.out, h, None)?;
        trace.push(("out".into(), tape.value(y).shape().to_vec()));
        Ok(y)
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        UNet {
            store: self.store.cast(),
            down: self.down.clone(),
            up: self.up.clone(),
            out: self.out,
        }
    }
}
