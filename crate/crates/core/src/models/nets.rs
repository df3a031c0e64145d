//! The four networks of the proposed model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{SEGMENT_FRAMES, SEGMENT_MELS};
use crate::netblocks::{
    activate, apply_layer, init_layer, init_residual_block, residual_block_adain, Activation, AffineVars, DenseChain,
    LayerSpec, Norm, Padding, ParamStore, Scalar, Tape, Tensor, Var,
};

pub const CONTEXT_CHANNELS: usize = 128;
pub const CONTEXT_FREQ: usize = 5;
pub const DOMAIN_DIM: usize = 8;
pub const N_RES_BLOCKS: usize = 6;
pub const ADAIN_SITES: usize = 2 * N_RES_BLOCKS;
pub const ADAIN_PARAMS: usize = ADAIN_SITES * 2 * CONTEXT_CHANNELS;
pub const DOMAIN_POOL: (usize, usize) = (1, 4);
pub const DISC_FLAT: usize = 1600;

const LEAKY: Activation = Activation::LeakyRelu;

pub const CONTEXT_CONVS: [LayerSpec; 4] = [
    ctx_conv(16),
    ctx_conv(32),
    ctx_conv(64),
    ctx_conv(CONTEXT_CHANNELS),
];

const fn ctx_conv(ch: usize) -> LayerSpec {
    LayerSpec::conv((1, 6), ch, (1, 2))
        .pad(Padding::Replicate)
        .norm(Norm::Instance)
        .act(LEAKY)
}

pub const DOMAIN_CONVS: [LayerSpec; 4] = [
    LayerSpec::conv((1, 6), 8, (1, 2)).act(LEAKY),
    LayerSpec::conv((1, 6), 16, (1, 2)).act(LEAKY),
    LayerSpec::conv((1, 6), 32, (1, 2)).act(LEAKY),
    LayerSpec::conv((1, 3), 64, (1, 2)).act(LEAKY),
];
pub const DOMAIN_DENSE: [usize; 5] = [256, 128, 32, 16, DOMAIN_DIM];

pub const DECODER_MLP: [usize; 5] = [DOMAIN_DIM, 16, 32, 64, 128];
pub const DECODER_TCONVS: [LayerSpec; 4] = [
    LayerSpec::tconv((1, 3), 8, (1, 2)).act(LEAKY),
    LayerSpec::tconv((1, 3), 16, (1, 2)).act(LEAKY),
    LayerSpec::tconv((1, 6), 16, (1, 2)).act(LEAKY),
    LayerSpec::tconv((1, 6), 16, (1, 2)).act(LEAKY),
];
pub const DECODER_OUT: LayerSpec = LayerSpec::conv((1, 1), 1, (1, 1));

pub const DISC_CONVS: [LayerSpec; 4] = [
    LayerSpec::conv((6, 6), 8, (2, 2)).act(LEAKY),
    LayerSpec::conv((6, 6), 16, (2, 2)).act(LEAKY),
    LayerSpec::conv((1, 6), 32, (1, 2)).act(LEAKY),
    LayerSpec::conv((1, 3), 64, (1, 2)).act(LEAKY),
];
pub const DISC_DENSE: [usize; 5] = [DISC_FLAT, 512, 256, 64, 1];

/// Intermediate shapes recorded during a forward pass.
pub type Trace = Vec<(String, Vec<usize>)>;

fn record<T: Scalar>(trace: &mut Trace, tape: &Tape<T>, name: impl Into<String>, v: Var) {
    trace.push((name.into(), tape.value(v).shape().to_vec()));
}

pub(crate) fn check_shape<T: Scalar>(tape: &Tape<T>, x: Var, what: &str, tail: &[usize]) -> Result<usize> {
    let s = tape.value(x).shape();
    if s.len() != tail.len() + 1 || &s[1..] != tail || s[0] == 0 {
        return Err(Error::shape(format!("{what}: expected (batch, {tail:?}), got {s:?}")));
    }
    Ok(s[0])
}

pub(crate) fn check_segment<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<usize> {
    check_shape(tape, x, "segment batch", &[1, SEGMENT_FRAMES, SEGMENT_MELS])
}

pub(crate) fn init_stack<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    specs: &[LayerSpec],
    c_in: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    let mut c = c_in;
    for (i, spec) in specs.iter().enumerate() {
        init_layer(store, &format!("{prefix}{i}"), spec, c, rng)?;
        c = spec.channels_out;
    }
    Ok(c)
}

pub(crate) fn run_stack<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    specs: &[LayerSpec],
    mut x: Var,
    trace: &mut Trace,
) -> Result<Var> {
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("{prefix}{i}");
        x = apply_layer(tape, store, &name, spec, x, None)?;
        record(trace, tape, name, x);
    }
    Ok(x)
}

/// `Enc^c`: segment `(B,1,20,80)` to context code `(B,128,20,5)`.
#[derive(Clone, Debug)]
pub struct ContextEncoder<T> {
    pub store: ParamStore<T>,
    pub convs: Vec<LayerSpec>,
}

impl<T: Scalar> ContextEncoder<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let convs = CONTEXT_CONVS.to_vec();
        let mut store = ParamStore::new();
        init_stack(&mut store, "conv", &convs, 1, rng)?;
        Ok(Self { store, convs })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, x, &mut Trace::new())
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, x: Var, trace: &mut Trace) -> Result<Var> {
        check_segment(tape, x)?;
        run_stack(tape, &self.store, "conv", &self.convs, x, trace)
    }

    pub fn cast<U: Scalar>(&self) -> ContextEncoder<U> {
        ContextEncoder {
            store: self.store.cast(),
            convs: self.convs.clone(),
        }
    }
}

/// `Enc^d`: segment to an 8-dim domain code.
#[derive(Clone, Debug)]
pub struct DomainEncoder<T> {
    pub store: ParamStore<T>,
    pub convs: Vec<LayerSpec>,
    pub pool: (usize, usize),
    pub dense: DenseChain,
}

impl<T: Scalar> DomainEncoder<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let convs = DOMAIN_CONVS.to_vec();
        let dense = DenseChain::new(&DOMAIN_DENSE, LEAKY);
        let mut store = ParamStore::new();
        init_stack(&mut store, "conv", &convs, 1, rng)?;
        dense.init(&mut store, "dense", rng)?;
        Ok(Self {
            store,
            convs,
            pool: DOMAIN_POOL,
            dense,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, x, &mut Trace::new())
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, x: Var, trace: &mut Trace) -> Result<Var> {
        let bn = check_segment(tape, x)?;
        let h = run_stack(tape, &self.store, "conv", &self.convs, x, trace)?;
        let h = tape.adaptive_avg_pool(h, self.pool.0, self.pool.1)?;
        let flat = tape.value(h).numel() / bn;
        let h = tape.reshape(h, &[bn, flat])?;
        record(trace, tape, "pool", h);
        let d = self.dense.forward(tape, &self.store, "dense", h)?;
        record(trace, tape, "code", d);
        Ok(d)
    }

    pub fn cast<U: Scalar>(&self) -> DomainEncoder<U> {
        DomainEncoder {
            store: self.store.cast(),
            convs: self.convs.clone(),
            pool: self.pool,
            dense: self.dense.clone(),
        }
    }
}

/// `Dec`: context code and domain code to a segment. The domain code drives
/// every AdaIN site through an MLP and a linear head; `gamma = 1 + raw`.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    pub store: ParamStore<T>,
    pub mlp: DenseChain,
    pub tconvs: Vec<LayerSpec>,
    pub out: LayerSpec,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let mlp = DenseChain::new(&DECODER_MLP, LEAKY);
        let tconvs = DECODER_TCONVS.to_vec();
        let mut store = ParamStore::new();
        mlp.init(&mut store, "mlp", rng)?;
        store.insert("adain_head.w", Tensor::zeros(&[ADAIN_PARAMS, DECODER_MLP[4]]))?;
        store.insert("adain_head.b", Tensor::zeros(&[ADAIN_PARAMS]))?;
        for b in 0..N_RES_BLOCKS {
            init_residual_block(&mut store, &format!("res{b}"), CONTEXT_CHANNELS, rng)?;
        }
        let c = init_stack(&mut store, "up", &tconvs, CONTEXT_CHANNELS, rng)?;
        init_layer(&mut store, "out", &DECODER_OUT, c, rng)?;
        Ok(Self {
            store,
            mlp,
            tconvs,
            out: DECODER_OUT,
        })
    }

    /// Replaces the zero-initialized AdaIN head with `N(0, std^2)` weights.
    pub fn randomize_head(&mut self, rng: &mut impl Rng, std: f64) {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, std).expect("finite std");
        for name in ["adain_head.w", "adain_head.b"] {
            let t = self.store.get_mut(name).expect("decoder has an AdaIN head");
            for v in t.data_mut() {
                *v = T::from_f64_lossy(normal.sample(rng));
            }
        }
    }

    /// AdaIN parameters for all sites, `(B, 3072)`.
    pub fn adain_params(&self, tape: &mut Tape<T>, d: Var) -> Result<Var> {
        let h = self.mlp.forward(tape, &self.store, "mlp", d)?;
        let h = activate(tape, h, LEAKY);
        apply_layer(tape, &self.store, "adain_head", &LayerSpec::dense(ADAIN_PARAMS), h, None)
    }

    pub fn forward(&self, tape: &mut Tape<T>, c: Var, d: Var) -> Result<Var> {
        self.forward_traced(tape, c, d, &mut Trace::new())
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, c: Var, d: Var, trace: &mut Trace) -> Result<Var> {
        let bn = check_shape(tape, c, "context code", &[CONTEXT_CHANNELS, SEGMENT_FRAMES, CONTEXT_FREQ])?;
        let bd = check_shape(tape, d, "domain code", &[DOMAIN_DIM])?;
        if bn != bd {
            return Err(Error::shape(format!("decoder: {bn} context codes but {bd} domain codes")));
        }
        let raw = self.adain_params(tape, d)?;
        record(trace, tape, "adain_params", raw);
        let ch = CONTEXT_CHANNELS;
        let mut sites = Vec::with_capacity(ADAIN_SITES);
        for i in 0..ADAIN_SITES {
            let g = tape.slice_cols(raw, i * 2 * ch, ch)?;
            let gamma = tape.add_const(g, 1.0);
            let beta = tape.slice_cols(raw, i * 2 * ch + ch, ch)?;
            sites.push(AffineVars { gamma, beta });
        }
        let mut x = c;
        for b in 0..N_RES_BLOCKS {
            let name = format!("res{b}");
            x = residual_block_adain(tape, &self.store, &name, x, sites[2 * b], sites[2 * b + 1])?;
            record(trace, tape, name, x);
        }
        let x = run_stack(tape, &self.store, "up", &self.tconvs, x, trace)?;
        let y = apply_layer(tape, &self.store, "out", &self.out, x, None)?;
        record(trace, tape, "out", y);
        Ok(y)
    }

    pub fn cast<U: Scalar>(&self) -> Decoder<U> {
        Decoder {
            store: self.store.cast(),
            mlp: self.mlp.clone(),
            tconvs: self.tconvs.clone(),
            out: self.out,
        }
    }
}

/// `D`: segment to the probability of being real, `(B, 1)`.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub store: ParamStore<T>,
    pub convs: Vec<LayerSpec>,
    pub dense: DenseChain,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        let convs = DISC_CONVS.to_vec();
        let dense = DenseChain::new(&DISC_DENSE, LEAKY);
        let mut store = ParamStore::new();
        init_stack(&mut store, "conv", &convs, 1, rng)?;
        dense.init(&mut store, "dense", rng)?;
        Ok(Self { store, convs, dense })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, x, &mut Trace::new())
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, x: Var, trace: &mut Trace) -> Result<Var> {
        let bn = check_segment(tape, x)?;
        let h = run_stack(tape, &self.store, "conv", &self.convs, x, trace)?;
        let flat = tape.value(h).numel() / bn;
        let h = tape.reshape(h, &[bn, flat])?;
        record(trace, tape, "flatten", h);
        let logit = self.dense.forward(tape, &self.store, "dense", h)?;
        let p = tape.sigmoid(logit);
        record(trace, tape, "prob", p);
        Ok(p)
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            store: self.store.cast(),
            convs: self.convs.clone(),
            dense: self.dense.clone(),
        }
    }
}
