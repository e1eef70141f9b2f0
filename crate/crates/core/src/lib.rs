//! Feudal visual navigation over a raycast floorplan simulator.
//!
//! Three tiers cooperate at different spatial scales:
//!
//! ```text
//! observation ─► encoder ─► imitator ─► memory proxy map (high-level manager)
//!      │                                      │ crop
//!      └──────────────► waynet ◄──────────────┘ (mid-level manager)
//!                          │ waypoint
//!                          ▼
//!                       worker ─► action (low-level worker)
//! ```
//!
//! Training consumes point-click demonstrations ([`demos`]) and runs
//! [`grouping`] → [`encoder`] → [`projector`] → [`waynet`] → [`worker`].
//! Evaluation ([`episodes`], [`harness`]) follows the image-goal protocol:
//! 500-action budget, success within 1 m of the goal, SPL.

pub mod agent;
mod codec;
pub mod collector;
pub mod config;
pub mod demos;
pub mod encoder;
pub mod episodes;
mod error;
pub mod grouping;
pub mod harness;
pub mod hlm;
pub mod matcher;
pub mod mpm;
pub mod nn;
pub mod pipeline;
pub mod projector;
pub mod waynet;
pub mod weights;
pub mod worker;
pub mod world;

pub use agent::{AgentConfig, EpisodeOutcome, StepTrace};
pub use config::Config;
pub use demos::DemoTrajectory;
pub use encoder::{EncoderNet, FeatureVec};
pub use episodes::{Curvature, Difficulty, Episode, MetricsSummary};
pub use error::{Error, Result};
pub use hlm::Hlm;
pub use matcher::MatchResult;
pub use mpm::{MapVariant, MpmGrid};
pub use pipeline::TrainedModels;
pub use projector::{ImitatorNet, IsomapModel};
pub use waynet::{InputVariant, WayNetModel, Waypoint, WaypointSource};
pub use worker::{StopRule, WorkerKind, WorkerModel};
pub use world::{Action, FloorPlan, Observation, Point, Pose};
