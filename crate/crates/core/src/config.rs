//! Flat key-value run configuration (TOML).
//!
//! Every key is optional; missing keys take the defaults below. Unknown
//! keys are rejected so typos surface.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::collector::CollectorConfig;
use crate::encoder::{EncoderConfig, EncoderTraining};
use crate::mpm::MapVariant;
use crate::projector::ImitatorTraining;
use crate::waynet::{InputVariant, WayNetTraining};
use crate::worker::{StopRule, WorkerKind, WorkerTraining};
use crate::world::{procgen, FloorPlan, Sensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub jobs: usize,

    pub rays: usize,
    pub fov_degrees: f64,
    pub max_range: f64,
    pub app_channels: usize,

    pub train_plans: usize,
    pub train_plan_seed: u64,
    pub demos_per_plan: usize,
    pub demo_frames: usize,

    pub alpha_c: f64,
    pub feat_dim: usize,
    pub encoder_hidden: usize,
    pub groups: usize,
    pub momentum: f64,
    pub temperature: f64,
    pub encoder_epochs: usize,
    pub encoder_batch: usize,
    pub encoder_lr: f64,

    pub isomap_k: usize,
    pub isomap_points: usize,
    pub imitator_epochs: usize,
    pub imitator_batch: usize,
    pub imitator_lr: f64,

    pub waynet_epochs: usize,
    pub waynet_batch: usize,
    pub waynet_lr: f64,
    pub waynet_hidden: usize,

    pub worker_epochs: usize,
    pub worker_batch: usize,
    pub worker_lr: f64,

    pub map: String,
    pub waynet: String,
    pub worker: String,
    pub max_steps: usize,
    pub alpha_k: f64,
    pub alpha_m: f64,
    pub psi_min: f64,
    pub near_dist: f64,
    pub explore: bool,
    pub explore_percentile: f64,

    pub eval_plans: usize,
    pub eval_plan_seed: u64,
    pub per_bin: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            jobs: 0,
            rays: 128,
            fov_degrees: 120.0,
            max_range: 10.0,
            app_channels: 3,
            train_plans: 8,
            train_plan_seed: 100,
            demos_per_plan: 3,
            demo_frames: 260,
            alpha_c: 0.7,
            feat_dim: 32,
            encoder_hidden: 64,
            groups: 8,
            momentum: 0.99,
            temperature: 0.1,
            encoder_epochs: 50,
            encoder_batch: 16,
            encoder_lr: 1e-4,
            isomap_k: 10,
            isomap_points: 2000,
            imitator_epochs: 2000,
            imitator_batch: 32,
            imitator_lr: 1e-3,
            waynet_epochs: 100,
            waynet_batch: 16,
            waynet_lr: 1e-4,
            waynet_hidden: 128,
            worker_epochs: 60,
            worker_batch: 128,
            worker_lr: 1e-3,
            map: "H".into(),
            waynet: "RGBD-M".into(),
            worker: "Cl".into(),
            max_steps: 500,
            alpha_k: 0.7,
            alpha_m: 0.7,
            psi_min: 0.85,
            near_dist: 1.0,
            explore: true,
            explore_percentile: 75.0,
            eval_plans: 8,
            eval_plan_seed: 900,
            per_bin: 34,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.rays < 2 || self.app_channels == 0 {
            return fail("sensor needs at least 2 rays and 1 appearance channel");
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive");
        }
        for (name, v) in [("alpha_c", self.alpha_c), ("alpha_k", self.alpha_k), ("alpha_m", self.alpha_m), ("psi_min", self.psi_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=100.0).contains(&self.explore_percentile) {
            return fail("explore_percentile must lie in [0, 100]");
        }
        if self.isomap_k == 0 || self.isomap_points < 3 {
            return fail("isomap needs k >= 1 and at least 3 points");
        }
        self.map.parse::<MapVariant>()?;
        self.waynet.parse::<InputVariant>()?;
        self.worker.parse::<WorkerKind>()?;
        Ok(())
    }

    pub fn sensor(&self) -> Sensor {
        Sensor {
            rays: self.rays,
            fov_degrees: self.fov_degrees,
            max_range: self.max_range,
            app_channels: self.app_channels,
        }
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            alpha_m: self.alpha_m,
            psi_min: self.psi_min,
            near_dist: self.near_dist,
        }
    }

    /// Agent settings for the configured variant triple. The exploration
    /// threshold comes from training and is filled in by the caller.
    pub fn agent(&self) -> Result<AgentConfig> {
        Ok(AgentConfig {
            map: self.map.parse()?,
            waynet: self.waynet.parse()?,
            worker: self.worker.parse()?,
            max_steps: self.max_steps,
            rho_explore: None,
            alpha_c: self.alpha_c,
            alpha_k: self.alpha_k,
            stop: self.stop_rule(),
            sensor: self.sensor(),
        })
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            rays: self.rays,
            app_channels: self.app_channels,
            max_range: self.max_range,
            feat_dim: self.feat_dim,
            hidden: vec![self.encoder_hidden, self.encoder_hidden],
            groups: self.groups,
            momentum: self.momentum,
            temperature: self.temperature,
        }
    }

    pub fn encoder_training(&self) -> EncoderTraining {
        EncoderTraining {
            epochs: self.encoder_epochs,
            batch: self.encoder_batch,
            lr: self.encoder_lr,
            seed: self.seed,
        }
    }

    pub fn imitator_training(&self) -> ImitatorTraining {
        ImitatorTraining {
            epochs: self.imitator_epochs,
            lr: self.imitator_lr,
            batch: self.imitator_batch,
            hidden: 64,
            seed: self.seed,
        }
    }

    pub fn waynet_training(&self) -> WayNetTraining {
        WayNetTraining {
            epochs: self.waynet_epochs,
            batch: self.waynet_batch,
            lr: self.waynet_lr,
            hidden: vec![self.waynet_hidden, self.waynet_hidden / 2],
            seed: self.seed,
        }
    }

    pub fn worker_training(&self) -> WorkerTraining {
        WorkerTraining {
            epochs: self.worker_epochs,
            batch: self.worker_batch,
            lr: self.worker_lr,
            seed: self.seed,
        }
    }

    pub fn collector(&self) -> CollectorConfig {
        CollectorConfig {
            frames: self.demo_frames,
            sensor: self.sensor(),
            ..CollectorConfig::default()
        }
    }

    pub fn train_suite(&self) -> Vec<FloorPlan> {
        procgen::suite(self.train_plans, self.train_plan_seed)
    }

    pub fn eval_suite(&self) -> Vec<FloorPlan> {
        procgen::suite(self.eval_plans, self.eval_plan_seed)
    }
}
