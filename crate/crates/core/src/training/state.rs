use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::{ModelKind, TrainConfig};
use crate::error::Result;
use crate::features::NormStats;
use crate::models::{DomainCode, ModelPair, UNetGenerators, PAIR_STORE_NAMES, UNET_STORE_NAMES};
use crate::netblocks::{Parameterized, ParamStore};
use crate::seeding;

pub const INIT_STREAM: &str = "init";
pub const DATA_STREAM: &str = "data";
pub const PRIOR_STREAM: &str = "prior";

/// The trained networks of either model family.
#[derive(Clone, Debug)]
pub enum Nets {
    Proposed(ModelPair<f32>),
    Baseline(UNetGenerators<f32>),
}

impl Nets {
    pub fn init(kind: ModelKind, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match kind {
            ModelKind::Proposed => Nets::Proposed(ModelPair::new(rng)?),
            ModelKind::CycleganBaseline => Nets::Baseline(UNetGenerators::new(rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Nets::Proposed(_) => ModelKind::Proposed,
            Nets::Baseline(_) => ModelKind::CycleganBaseline,
        }
    }

    pub fn store_names(&self) -> &'static [&'static str] {
        match self {
            Nets::Proposed(_) => &PAIR_STORE_NAMES,
            Nets::Baseline(_) => &UNET_STORE_NAMES,
        }
    }

    /// Generator-side stores come first; the last two are discriminators.
    pub fn n_generator_stores(&self) -> usize {
        self.store_names().len() - 2
    }
}

impl Parameterized<f32> for Nets {
    fn stores(&self) -> Vec<&ParamStore<f32>> {
        match self {
            Nets::Proposed(p) => p.stores(),
            Nets::Baseline(u) => u.stores(),
        }
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore<f32>> {
        match self {
            Nets::Proposed(p) => p.stores_mut(),
            Nets::Baseline(u) => u.stores_mut(),
        }
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed training steps.
    pub step: u64,
    pub config: TrainConfig,
    pub nets: Nets,
    /// Parallel to `nets.stores()`.
    pub moments: Vec<AdamState>,
    pub data_rng: ChaCha8Rng,
    pub prior_rng: ChaCha8Rng,
    pub norm_stats: NormStats,
    pub norm_stats_path: Option<PathBuf>,
    /// Mean `Enc^d` code of each training corpus (proposed model only).
    pub domain_means: Option<[DomainCode; 2]>,
}

impl TrainState {
    pub fn init(config: &TrainConfig, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let nets = Nets::init(config.model, &mut seeding::stream(config.seed, INIT_STREAM))?;
        let moments = nets.stores().into_iter().map(AdamState::zeros_like).collect();
        Ok(Self {
            step: 0,
            config: config.clone(),
            nets,
            moments,
            data_rng: seeding::stream(config.seed, DATA_STREAM),
            prior_rng: seeding::stream(config.seed, PRIOR_STREAM),
            norm_stats,
            norm_stats_path: None,
            domain_means: None,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.nets.stores().iter().all(|s| s.is_finite()) && self.moments.iter().all(AdamState::is_finite)
    }
}
