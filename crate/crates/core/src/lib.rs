//! Unpaired speech domain adaptation with disentangled context and domain
//! latents.
//!
//! Audio is turned into 80-bin log-mel spectrograms and cut into 20-frame
//! segments ([`features`]). Two model families translate segments between two
//! domains: the proposed model with context/domain encoders and an
//! AdaIN-modulated decoder, and a U-net CycleGAN baseline ([`models`]). Both
//! are trained adversarially on unpaired batches ([`losses`], [`training`],
//! [`data`]) using a small reverse-mode autodiff engine ([`netblocks`]).

pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod models;
pub mod netblocks;
pub mod seeding;
pub mod selfcheck;
pub mod training;



pub use error::{Error, Result};
pub use features::{MelConfig, MelSegment, MelSpectrogram, NormStats};
pub use models::{ModelPair, Side, UNetGenerators};
pub use netblocks::{ParamStore, Tape, Tensor};
