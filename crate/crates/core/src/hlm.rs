//! High-level manager: observation to latent map coordinate.

use crate::encoder::{EncoderConfig, EncoderNet, FeatureVec};
use crate::mpm::{MapVariant, MemoryMap};
use crate::projector::{project, ImitatorNet};
use crate::world::Observation;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Hlm {
    pub encoder: EncoderNet,
    pub imitator: ImitatorNet,
    /// Latent units per map cell.
    pub resolution: f64,
}

impl Hlm {
    pub fn new(encoder: EncoderNet, imitator: ImitatorNet, resolution: f64) -> Self {
        Self {
            encoder,
            imitator,
            resolution,
        }
    }

    /// Untrained seeded encoder and projection; usable before any training run.
    pub fn bootstrap(cfg: &EncoderConfig, seed: u64) -> Self {
        let encoder = EncoderNet::new(cfg, seed);
        let imitator = ImitatorNet::new(cfg.feat_dim, 64, seed.wrapping_add(1));
        Self::new(encoder, imitator, 0.05)
    }

    pub fn encode(&self, obs: &Observation) -> Result<FeatureVec> {
        self.encoder.encode(obs)
    }

    pub fn latent(&self, obs: &Observation) -> Result<[f64; 2]> {
        project(&self.imitator, &self.encoder.encode(obs)?)
    }

    pub fn memory(&self, variant: MapVariant, alpha_c: f64) -> MemoryMap {
        MemoryMap::new(variant, self.resolution, alpha_c)
    }
}
