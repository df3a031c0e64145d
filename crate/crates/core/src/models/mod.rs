//! The proposed two-domain model, the U-net CycleGAN baseline, and the
//! encode/decode/discriminate operations built on them.

mod conformance;
mod nets;
mod unet;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MelSegment, SEGMENT_FRAMES, SEGMENT_MELS};
use crate::netblocks::{Parameterized, ParamStore, Scalar, Tape, Tensor};

pub use conformance::{table1_conformance, ConformanceReport, ConformanceRow};
pub use nets::{
    ContextEncoder, Decoder, Discriminator, DomainEncoder, Trace, ADAIN_PARAMS, ADAIN_SITES, CONTEXT_CHANNELS,
    CONTEXT_CONVS, CONTEXT_FREQ, DECODER_MLP, DECODER_OUT, DECODER_TCONVS, DISC_CONVS, DISC_DENSE, DISC_FLAT,
    DOMAIN_CONVS, DOMAIN_DENSE, DOMAIN_DIM, DOMAIN_POOL, N_RES_BLOCKS,
};
pub use unet::{UNet, UNET_DOWN, UNET_OUT, UNET_UP};

/// Inference runs in chunks of this many segments.
pub const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::A, Side::B];

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "A",
            Side::B => "B",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Side::A),
            "B" | "b" => Ok(Side::B),
            other => Err(Error::InvalidConfig(format!("unknown domain `{other}`, expected A or B"))),
        }
    }
}

/// One 8-dim domain latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCode(pub Vec<f32>);

impl DomainCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != DOMAIN_DIM || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape(format!(
                "domain code needs {DOMAIN_DIM} finite values, got {values:?}"
            )));
        }
        Ok(Self(values))
    }

    /// Stacks codes into a `(n, 8)` tensor.
    pub fn stack<T: Scalar>(codes: &[DomainCode]) -> Tensor<T> {
        let data = codes
            .iter()
            .flat_map(|c| c.0.iter().map(|v| T::from_f64_lossy(*v as f64)))
            .collect();
        Tensor::from_vec(&[codes.len(), DOMAIN_DIM], data).expect("codes have fixed width")
    }

    /// `n` copies of this code as a `(n, 8)` tensor.
    pub fn repeat<T: Scalar>(&self, n: usize) -> Tensor<T> {
        Self::stack(&vec![self.clone(); n])
    }

    /// Element-wise mean of the rows of a `(n, 8)` tensor.
    pub fn mean_of<T: Scalar>(codes: &Tensor<T>) -> Result<Self> {
        let (n, w) = codes.dims2()?;
        if n == 0 || w != DOMAIN_DIM {
            return Err(Error::shape(format!("cannot average codes of shape {:?}", codes.shape())));
        }
        let mut acc = vec![0.0f64; DOMAIN_DIM];
        for row in codes.data().chunks_exact(DOMAIN_DIM) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        Self::new(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
    }
}

/// Draws `n` i.i.d. standard-normal domain codes as a `(n, 8)` tensor.
pub fn sample_prior<T: Scalar>(rng: &mut impl Rng, n: usize) -> Tensor<T> {
    let data = (0..n * DOMAIN_DIM)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z)
        })
        .collect();
    Tensor::from_vec(&[n, DOMAIN_DIM], data).expect("prior batch shape")
}

pub fn sample_domain_prior(rng: &mut impl Rng, n: usize) -> Vec<DomainCode> {
    let t: Tensor<f32> = sample_prior(rng, n);
    t.data().chunks_exact(DOMAIN_DIM).map(|c| DomainCode(c.to_vec())).collect()
}

/// Stacks segments into a `(B, 1, 20, 80)` batch.
pub fn segments_to_tensor<T: Scalar>(segs: &[MelSegment]) -> Result<Tensor<T>> {
    if segs.is_empty() {
        return Err(Error::shape("empty segment batch"));
    }
    let data = segs
        .iter()
        .flat_map(|s| s.values().iter().map(|v| T::from_f64_lossy(*v as f64)))
        .collect();
    Tensor::from_vec(&[segs.len(), 1, SEGMENT_FRAMES, SEGMENT_MELS], data)
}

pub fn tensor_to_segments<T: Scalar>(t: &Tensor<T>) -> Result<Vec<MelSegment>> {
    let (_, c, h, w) = t.dims4()?;
    if (c, h, w) != (1, SEGMENT_FRAMES, SEGMENT_MELS) {
        return Err(Error::shape(format!("not a segment batch: {:?}", t.shape())));
    }
    t.data()
        .chunks_exact(MelSegment::LEN)
        .map(|c| MelSegment::new(c.iter().map(|v| v.as_f64() as f32).collect()))
        .collect()
}

fn infer<T: Scalar>(f: impl FnOnce(&mut Tape<T>) -> Result<crate::netblocks::Var>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.value(v).clone())
}

/// Context encoder, domain encoder, decoder and discriminator for both
/// domains, indexed by [`Side::index`].
#[derive(Clone, Debug)]
pub struct ModelPair<T> {
    pub enc_c: [ContextEncoder<T>; 2],
    pub enc_d: [DomainEncoder<T>; 2],
    pub dec: [Decoder<T>; 2],
    pub disc: [Discriminator<T>; 2],
}

pub const PAIR_STORE_NAMES: [&str; 8] = [
    "enc_c_A", "enc_c_B", "enc_d_A", "enc_d_B", "dec_A", "dec_B", "disc_A", "disc_B",
];

impl<T: Scalar> ModelPair<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            enc_c: [ContextEncoder::new(rng)?, ContextEncoder::new(rng)?],
            enc_d: [DomainEncoder::new(rng)?, DomainEncoder::new(rng)?],
            dec: [Decoder::new(rng)?, Decoder::new(rng)?],
            disc: [Discriminator::new(rng)?, Discriminator::new(rng)?],
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelPair<U> {
        ModelPair {
            enc_c: [self.enc_c[0].cast(), self.enc_c[1].cast()],
            enc_d: [self.enc_d[0].cast(), self.enc_d[1].cast()],
            dec: [self.dec[0].cast(), self.dec[1].cast()],
            disc: [self.disc[0].cast(), self.disc[1].cast()],
        }
    }

    /// Encoders and decoders of both sides.
    pub fn generator_stores(&self) -> Vec<&ParamStore<T>> {
        let s = self.stores();
        s[..6].to_vec()
    }

    pub fn discriminator_stores(&self) -> Vec<&ParamStore<T>> {
        let s = self.stores();
        s[6..].to_vec()
    }

    pub fn named_stores(&self) -> Vec<(&'static str, &ParamStore<T>)> {
        PAIR_STORE_NAMES.into_iter().zip(self.stores()).collect()
    }

    pub fn context_encode(&self, x: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            self.enc_c[side.index()].forward(t, x)
        })
    }

    pub fn domain_encode(&self, x: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            self.enc_d[side.index()].forward(t, x)
        })
    }

    pub fn decode(&self, c: &Tensor<T>, d: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let c = t.input(c.clone());
            let d = t.input(d.clone());
            self.dec[side.index()].forward(t, c, d)
        })
    }

    pub fn discriminate(&self, x: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            self.disc[side.index()].forward(t, x)
        })
    }

    /// `Dec_tgt(Enc_src^c(x), d)` with `tgt = src.other()`.
    pub fn translate(&self, x: &Tensor<T>, src: Side, d: &Tensor<T>) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            let d = t.input(d.clone());
            let c = self.enc_c[src.index()].forward(t, x)?;
            self.dec[src.other().index()].forward(t, c, d)
        })
    }

    /// `Dec_s(Enc_s^c(x), Enc_s^d(x))`.
    pub fn reconstruct(&self, x: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            let c = self.enc_c[side.index()].forward(t, x)?;
            let d = self.enc_d[side.index()].forward(t, x)?;
            self.dec[side.index()].forward(t, c, d)
        })
    }

    /// Translates segments from `src` with one shared target code.
    pub fn translate_segments(&self, segs: &[MelSegment], src: Side, code: &DomainCode) -> Result<Vec<MelSegment>> {
        let mut out = Vec::with_capacity(segs.len());
        for chunk in segs.chunks(INFER_CHUNK) {
            let x = segments_to_tensor(chunk)?;
            let y = self.translate(&x, src, &code.repeat(chunk.len()))?;
            out.extend(tensor_to_segments(&y)?);
        }
        Ok(out)
    }

    /// Mean `Enc^d` code of `segs` under the `side` encoder.
    pub fn mean_domain_code(&self, segs: &[MelSegment], side: Side) -> Result<DomainCode> {
        if segs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut acc = vec![0.0f64; DOMAIN_DIM];
        for chunk in segs.chunks(INFER_CHUNK) {
            let codes = self.domain_encode(&segments_to_tensor(chunk)?, side)?;
            for row in codes.data().chunks_exact(DOMAIN_DIM) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v.as_f64();
                }
            }
        }
        DomainCode::new(acc.into_iter().map(|a| (a / segs.len() as f64) as f32).collect())
    }
}

impl<T: Scalar> Parameterized<T> for ModelPair<T> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        vec![
            &self.enc_c[0].store,
            &self.enc_c[1].store,
            &self.enc_d[0].store,
            &self.enc_d[1].store,
            &self.dec[0].store,
            &self.dec[1].store,
            &self.disc[0].store,
            &self.disc[1].store,
        ]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        let [ca, cb] = &mut self.enc_c;
        let [da, db] = &mut self.enc_d;
        let [ea, eb] = &mut self.dec;
        let [fa, fb] = &mut self.disc;
        vec![
            &mut ca.store,
            &mut cb.store,
            &mut da.store,
            &mut db.store,
            &mut ea.store,
            &mut eb.store,
            &mut fa.store,
            &mut fb.store,
        ]
    }
}

/// CycleGAN baseline: `g[0]` maps A to B (G_XY), `g[1]` maps B to A (G_YX);
/// `disc[0]` judges A (D_X), `disc[1]` judges B (D_Y).
#[derive(Clone, Debug)]
pub struct UNetGenerators<T> {
    pub g: [UNet<T>; 2],
    pub disc: [Discriminator<T>; 2],
}

pub const UNET_STORE_NAMES: [&str; 4] = ["g_ab", "g_ba", "disc_X", "disc_Y"];

impl<T: Scalar> UNetGenerators<T> {
    pub fn new(rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            g: [UNet::new(rng)?, UNet::new(rng)?],
            disc: [Discriminator::new(rng)?, Discriminator::new(rng)?],
        })
    }

    pub fn cast<U: Scalar>(&self) -> UNetGenerators<U> {
        UNetGenerators {
            g: [self.g[0].cast(), self.g[1].cast()],
            disc: [self.disc[0].cast(), self.disc[1].cast()],
        }
    }

    pub fn generator_stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.g[0].store, &self.g[1].store]
    }

    pub fn discriminator_stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.disc[0].store, &self.disc[1].store]
    }

    pub fn named_stores(&self) -> Vec<(&'static str, &ParamStore<T>)> {
        UNET_STORE_NAMES.into_iter().zip(self.stores()).collect()
    }

    /// Maps `x` from `src` to the other domain.
    pub fn generate(&self, x: &Tensor<T>, src: Side) -> Result<Tensor<T>> {
        infer(|t| {
            let x = t.input(x.clone());
            self.g[src.index()].forward(t, x)
        })
    }

    pub fn generate_segments(&self, segs: &[MelSegment], src: Side) -> Result<Vec<MelSegment>> {
        let mut out = Vec::with_capacity(segs.len());
        for chunk in segs.chunks(INFER_CHUNK) {
            out.extend(tensor_to_segments(&self.generate(&segments_to_tensor(chunk)?, src)?)?);
        }
        Ok(out)
    }
}

impl<T: Scalar> Parameterized<T> for UNetGenerators<T> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        vec![&self.g[0].store, &self.g[1].store, &self.disc[0].store, &self.disc[1].store]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        let [ga, gb] = &mut self.g;
        let [da, db] = &mut self.disc;
        vec![&mut ga.store, &mut gb.store, &mut da.store, &mut db.store]
    }
}
