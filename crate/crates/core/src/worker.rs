//! Low-level worker: waypoint and depth strip to a motion, plus the stop rule.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demos::DemoTrajectory;
use crate::matcher::{match_observations, matched_centroid, MatchResult};
use crate::nn::{cross_entropy, Activation, Adam, Dense, Mlp};
use crate::waynet::Waypoint;
use crate::weights::{ModelKind, WeightFile};
use crate::world::{Action, Observation};
use crate::{Error, Result};

/// Closest forward obstacle the deterministic rule will walk toward.
pub const BLOCK_DISTANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkerKind {
    /// Fixed geometric rule.
    Det,
    /// Learned classifier.
    Cl,
}

impl fmt::Display for WorkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkerKind::Det => "Det",
            WorkerKind::Cl => "Cl",
        })
    }
}

impl FromStr for WorkerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "det" => Ok(WorkerKind::Det),
            "cl" | "cls" => Ok(WorkerKind::Cl),
            other => Err(Error::Config(format!("unknown worker kind {other:?}"))),
        }
    }
}

fn center(rays: usize) -> f64 {
    (rays as f64 - 1.0) / 2.0
}

/// Turn toward the waypoint if it is more than `R/12` rays off center,
/// otherwise step forward unless the forward cone is blocked, in which case
/// turn toward the deeper half of the strip.
pub fn act_deterministic(obs: &Observation, wp: &Waypoint) -> Action {
    let rays = obs.rays();
    let c = center(rays);
    let turn_band = rays as f64 / 12.0;
    let off = wp.ray as f64 - c;
    if off < -turn_band {
        return Action::TurnLeft;
    }
    if off > turn_band {
        return Action::TurnRight;
    }
    if forward_clearance(obs) < BLOCK_DISTANCE {
        let half = rays / 2;
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len().max(1) as f64;
        let left = mean(&obs.depth[..half]);
        let right = mean(&obs.depth[rays - half..]);
        return if left >= right { Action::TurnLeft } else { Action::TurnRight };
    }
    Action::MoveForward
}

/// Minimum depth within `R/24` rays of the center.
pub fn forward_clearance(obs: &Observation) -> f64 {
    let c = center(obs.rays());
    let cone = obs.rays() as f64 / 24.0;
    obs.depth
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as f64 - c).abs() <= cone)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub alpha_m: f64,
    pub psi_min: f64,
    pub near_dist: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            alpha_m: 0.7,
            psi_min: 0.85,
            near_dist: 1.0,
        }
    }
}

impl StopRule {
    /// Stop decision from a precomputed match of `obs` against the goal.
    pub fn decide(&self, m: &MatchResult, obs: &Observation) -> bool {
        if m.confidence < self.alpha_m {
            return false;
        }
        let near = matched_centroid(m, obs).is_ok_and(|ray| obs.depth[ray] <= self.near_dist);
        near || m.area_ratio >= self.psi_min
    }
}

pub fn should_stop(rule: &StopRule, obs: &Observation, goal: &Observation) -> bool {
    rule.decide(&match_observations(obs, goal), obs)
}

const DEPTH_HEAD: usize = 64;
const WAYPOINT_HEAD: usize = 16;
const TRUNK: usize = 64;
pub const WAYPOINT_FEATURES: usize = 2;

/// Four layers: a depth projection head and a waypoint projection head,
/// concatenated into a hidden layer and a 3-way action output.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerModel {
    pub depth_head: Dense,
    pub waypoint_head: Dense,
    pub trunk: Mlp,
    pub max_range: f64,
}

/// Network inputs for one frame.
pub fn worker_inputs(obs: &Observation, wp: &Waypoint, max_range: f64) -> (Vec<f64>, [f64; WAYPOINT_FEATURES]) {
    let depth = obs.depth.iter().map(|d| d / max_range).collect();
    let half = obs.rays() as f64 / 2.0;
    (depth, [(wp.ray as f64 - center(obs.rays())) / half, wp.depth_hint / max_range])
}

pub struct WorkerCache {
    depth_pre: Array2<f64>,
    wp_pre: Array2<f64>,
    trunk: crate::nn::MlpCache,
}

impl WorkerModel {
    pub fn new(rays: usize, max_range: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            depth_head: Dense::new(rays, DEPTH_HEAD, Activation::PRelu, &mut rng),
            waypoint_head: Dense::new(WAYPOINT_FEATURES, WAYPOINT_HEAD, Activation::PRelu, &mut rng),
            trunk: Mlp::new(&[DEPTH_HEAD + WAYPOINT_HEAD, TRUNK, 3], Activation::PRelu, Activation::Identity, &mut rng),
            max_range,
        }
    }

    pub fn rays(&self) -> usize {
        self.depth_head.inputs()
    }

    pub fn num_params(&self) -> usize {
        self.depth_head.num_params() + self.waypoint_head.num_params() + self.trunk.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.depth_head.push_params(&mut out);
        self.waypoint_head.push_params(&mut out);
        out.extend(self.trunk.params());
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut src = params;
        self.depth_head.pull_params(&mut src);
        self.waypoint_head.pull_params(&mut src);
        self.trunk.set_params(src);
    }

    pub fn logits(&self, depth: &Array2<f64>, wp: &Array2<f64>) -> (Array2<f64>, WorkerCache) {
        let (depth_pre, d) = self.depth_head.forward(depth);
        let (wp_pre, w) = self.waypoint_head.forward(wp);
        let joined = concatenate(Axis(1), &[d.view(), w.view()]).expect("same batch size");
        let (out, trunk) = self.trunk.forward_cached(&joined);
        (out, WorkerCache { depth_pre, wp_pre, trunk })
    }

    /// Mean cross-entropy against action labels (0 left, 1 right, 2 forward).
    pub fn loss_and_grad(&self, depth: &Array2<f64>, wp: &Array2<f64>, labels: &[usize]) -> (f64, Vec<f64>) {
        let (logits, cache) = self.logits(depth, wp);
        let (loss, d_logits) = cross_entropy(&logits, labels);
        let (trunk_grad, d_joined) = self.trunk.backward(&cache.trunk, &d_logits);
        let (gd, _) = self.depth_head.backward(depth, &cache.depth_pre, &d_joined.slice(s![.., ..DEPTH_HEAD]).to_owned());
        let (gw, _) = self.waypoint_head.backward(wp, &cache.wp_pre, &d_joined.slice(s![.., DEPTH_HEAD..]).to_owned());
        let mut grad = Vec::with_capacity(self.num_params());
        gd.push(Activation::PRelu, &mut grad);
        gw.push(Activation::PRelu, &mut grad);
        grad.extend(trunk_grad);
        (loss, grad)
    }

    pub fn to_weights(&self) -> WeightFile {
        let mut tensors = self.depth_head.to_tensors();
        tensors.extend(self.waypoint_head.to_tensors());
        tensors.extend(self.trunk.to_tensors());
        WeightFile::new(ModelKind::Worker, 0, vec![self.max_range], tensors)
    }

    pub fn from_weights(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(ModelKind::Worker)?;
        let [max_range] = file.meta[..] else {
            return Err(Error::format("worker metadata has wrong length"));
        };
        if file.tensors.len() != 12 {
            return Err(Error::format("worker must have exactly four layers"));
        }
        Ok(Self {
            depth_head: Dense::from_tensors(&file.tensors[0..3])?,
            waypoint_head: Dense::from_tensors(&file.tensors[3..6])?,
            trunk: Mlp::from_tensors(&file.tensors[6..])?,
            max_range,
        })
    }
}

pub fn act_learned(model: &WorkerModel, obs: &Observation, wp: &Waypoint) -> Action {
    let (depth, wpf) = worker_inputs(obs, wp, model.max_range);
    let d = Array2::from_shape_vec((1, depth.len()), depth).expect("row");
    let w = Array2::from_shape_vec((1, WAYPOINT_FEATURES), wpf.to_vec()).expect("row");
    let (logits, _) = model.logits(&d, &w);
    let row = logits.row(0);
    let mut best = 0;
    for k in 1..3 {
        if row[k] > row[best] {
            best = k;
        }
    }
    Action::MOVES[best]
}

#[derive(Debug, Clone)]
pub struct WorkerDataset {
    pub depth: Array2<f64>,
    pub waypoints: Array2<f64>,
    pub labels: Vec<usize>,
}

impl WorkerDataset {
    /// One sample per demo frame whose recorded action is a motion; the
    /// waypoint is the operator's click.
    pub fn from_demos(demos: &[DemoTrajectory], max_range: f64) -> Result<Self> {
        let mut depth = Vec::new();
        let mut wps = Vec::new();
        let mut labels = Vec::new();
        let mut rays = None;
        for demo in demos {
            for f in &demo.frames {
                let Some(label) = Action::MOVES.iter().position(|&a| a == f.action) else {
                    continue;
                };
                let obs = &f.observation;
                if *rays.get_or_insert(obs.rays()) != obs.rays() {
                    return Err(Error::Shape {
                        expected: rays.unwrap(),
                        actual: obs.rays(),
                    });
                }
                let wp = Waypoint::at(obs, f.click);
                let (d, w) = worker_inputs(obs, &wp, max_range);
                depth.extend(d);
                wps.extend(w);
                labels.push(label);
            }
        }
        let n = labels.len();
        if n == 0 {
            return Err(Error::NoData("no motion frames in demos".into()));
        }
        Ok(Self {
            depth: Array2::from_shape_vec((n, depth.len() / n), depth).expect("rectangular"),
            waypoints: Array2::from_shape_vec((n, WAYPOINT_FEATURES), wps).expect("rectangular"),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct WorkerTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for WorkerTraining {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Returns the model and its mean loss over the final epoch.
pub fn train_worker(data: &WorkerDataset, max_range: f64, opts: &WorkerTraining) -> Result<(WorkerModel, f64)> {
    if data.is_empty() {
        return Err(Error::NoData("empty worker dataset".into()));
    }
    let mut model = WorkerModel::new(data.depth.ncols(), max_range, opts.seed);
    let mut opt = Adam::new(opts.lr, model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = f64::NAN;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch.max(1)) {
            let d = data.depth.select(Axis(0), chunk);
            let w = data.waypoints.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grad) = model.loss_and_grad(&d, &w, &labels);
            let mut params = model.params();
            opt.step(&mut params, &grad);
            model.set_params(&params);
            total += loss * chunk.len() as f64;
        }
        last = total / data.len() as f64;
    }
    Ok((model, last))
}

/// Fraction of samples whose argmax action equals the label.
pub fn worker_accuracy(model: &WorkerModel, data: &WorkerDataset) -> f64 {
    let (logits, _) = model.logits(&data.depth, &data.waypoints);
    let hits = logits
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for k in 1..3 {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == label
        })
        .count();
    hits as f64 / data.len().max(1) as f64
}
