//! Mid-level manager: observation and map crop to a waypoint ray.
//!
//! The net classifies over ray bins. When the goal image matches the current
//! view well enough, the matched landmarks' centroid is used instead and the
//! net is not consulted.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demos::DemoTrajectory;
use crate::grouping::DEFAULT_ALPHA_C;
use crate::hlm::Hlm;
use crate::matcher::{match_observations, matched_centroid, MatchResult};
use crate::mpm::{MapVariant, DEFAULT_CROP};
use crate::nn::{cross_entropy, softmax_rows, Activation, Adam, Mlp};
use crate::weights::{ModelKind, WeightFile};
use crate::world::Observation;
use crate::{Error, Result};

pub const DEFAULT_ALPHA_K: f64 = 0.7;
/// Side of the average-pooled map crop fed to the net.
pub const POOLED: usize = 16;
pub const HISTORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputVariant {
    Rgb,
    Rgbd,
    Rgbd3,
    RgbdM,
    Rgbd3M,
}

impl InputVariant {
    pub const ALL: [InputVariant; 5] = [
        InputVariant::Rgb,
        InputVariant::Rgbd,
        InputVariant::Rgbd3,
        InputVariant::RgbdM,
        InputVariant::Rgbd3M,
    ];

    pub fn uses_depth(self) -> bool {
        self != InputVariant::Rgb
    }

    pub fn uses_map(self) -> bool {
        matches!(self, InputVariant::RgbdM | InputVariant::Rgbd3M)
    }

    pub fn frames(self) -> usize {
        match self {
            InputVariant::Rgbd3 | InputVariant::Rgbd3M => HISTORY,
            _ => 1,
        }
    }

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|&v| v == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn frame_dim(self, rays: usize, app_channels: usize) -> usize {
        rays * app_channels
            + if self.uses_depth() { rays } else { 0 }
            + if self.uses_map() { POOLED * POOLED } else { 0 }
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputVariant::Rgb => "RGB",
            InputVariant::Rgbd => "RGBD",
            InputVariant::Rgbd3 => "3 RGBD",
            InputVariant::RgbdM => "RGBD-M",
            InputVariant::Rgbd3M => "3 RGBD-M",
        })
    }
}

impl FromStr for InputVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_uppercase().chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
        match norm.as_str() {
            "RGB" => Ok(InputVariant::Rgb),
            "RGBD" => Ok(InputVariant::Rgbd),
            "3RGBD" => Ok(InputVariant::Rgbd3),
            "RGBD-M" | "RGBDM" => Ok(InputVariant::RgbdM),
            "3RGBD-M" | "3RGBDM" => Ok(InputVariant::Rgbd3M),
            _ => Err(Error::Config(format!("unknown waynet variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub ray: usize,
    /// Observed depth along `ray`.
    pub depth_hint: f64,
}

impl Waypoint {
    pub fn at(obs: &Observation, ray: usize) -> Self {
        Self {
            ray,
            depth_hint: obs.depth[ray],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaypointSource {
    GoalMatch,
    Learned,
    Exploration,
}

impl fmt::Display for WaypointSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaypointSource::GoalMatch => "goal_match",
            WaypointSource::Learned => "learned",
            WaypointSource::Exploration => "exploration",
        })
    }
}

/// Average-pool a square crop down to `POOLED × POOLED`.
pub fn pool_crop(crop: &Array2<f64>) -> Array2<f64> {
    let (h, w) = crop.dim();
    let (fy, fx) = (h / POOLED, w / POOLED);
    assert!(fy > 0 && fx > 0 && h % POOLED == 0 && w % POOLED == 0, "crop must be a multiple of {POOLED}");
    Array2::from_shape_fn((POOLED, POOLED), |(r, c)| {
        crop.slice(ndarray::s![r * fy..(r + 1) * fy, c * fx..(c + 1) * fx]).mean().unwrap()
    })
}

/// Per-frame input slice: appearance, then depth, then the pooled crop,
/// each only when the variant uses it.
pub fn frame_vector(variant: InputVariant, obs: &Observation, crop: Option<&Array2<f64>>, max_range: f64) -> Vec<f64> {
    let mut v = obs.appearance.clone();
    if variant.uses_depth() {
        v.extend(obs.depth.iter().map(|d| d / max_range));
    }
    if variant.uses_map() {
        match crop {
            Some(c) => v.extend(pool_crop(c).iter()),
            None => v.extend(std::iter::repeat_n(0.0, POOLED * POOLED)),
        }
    }
    v
}

/// Rolling window of frame vectors, newest first, zero-padded at the start.
#[derive(Debug, Clone)]
pub struct InputHistory {
    frames: VecDeque<Vec<f64>>,
    capacity: usize,
    frame_dim: usize,
}

impl InputHistory {
    pub fn new(variant: InputVariant, frame_dim: usize) -> Self {
        Self {
            frames: VecDeque::new(),
            capacity: variant.frames(),
            frame_dim,
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        debug_assert_eq!(frame.len(), self.frame_dim);
        self.frames.push_front(frame);
        self.frames.truncate(self.capacity);
    }

    pub fn input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.capacity * self.frame_dim);
        for i in 0..self.capacity {
            match self.frames.get(i) {
                Some(f) => v.extend_from_slice(f),
                None => v.extend(std::iter::repeat_n(0.0, self.frame_dim)),
            }
        }
        v
    }
}

/// Anything that scores ray bins for a network input.
pub trait RayPredictor {
    fn ray_probabilities(&self, input: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct WayNetModel {
    pub mlp: Mlp,
    pub variant: InputVariant,
    /// Map variant whose crops the net was trained on.
    pub map: MapVariant,
    pub rays: usize,
    pub app_channels: usize,
    pub max_range: f64,
}

impl WayNetModel {
    pub fn new(
        variant: InputVariant,
        map: MapVariant,
        rays: usize,
        app_channels: usize,
        max_range: f64,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![variant.frames() * variant.frame_dim(rays, app_channels)];
        sizes.extend(hidden);
        sizes.push(rays);
        Self {
            mlp: Mlp::new(&sizes, Activation::Relu, Activation::Identity, &mut rng),
            variant,
            map,
            rays,
            app_channels,
            max_range,
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.variant.frame_dim(self.rays, self.app_channels)
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn history(&self) -> InputHistory {
        InputHistory::new(self.variant, self.frame_dim())
    }

    pub fn loss_and_grad(&self, x: &Array2<f64>, targets: &[usize]) -> (f64, Vec<f64>) {
        let (logits, cache) = self.mlp.forward_cached(x);
        let (loss, d) = cross_entropy(&logits, targets);
        (loss, self.mlp.backward(&cache, &d).0)
    }

    pub fn accuracy(&self, data: &WayNetDataset) -> f64 {
        let probs = softmax_rows(&self.mlp.forward(&data.inputs));
        let hits = probs
            .rows()
            .into_iter()
            .zip(&data.targets)
            .filter(|(row, &t)| argmax(row.as_slice().unwrap()) == t)
            .count();
        hits as f64 / data.len().max(1) as f64
    }

    pub fn to_weights(&self) -> WeightFile {
        WeightFile::new(
            ModelKind::WayNet,
            self.variant.code() | (self.map.code() << 8),
            vec![self.rays as f64, self.app_channels as f64, self.max_range],
            self.mlp.to_tensors(),
        )
    }

    pub fn from_weights(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(ModelKind::WayNet)?;
        let variant = InputVariant::from_code(file.variant & 0xff).ok_or_else(|| Error::format("unknown waynet variant"))?;
        let map = MapVariant::from_code(file.variant >> 8).ok_or_else(|| Error::format("unknown map variant"))?;
        let [rays, app, max_range] = file.meta[..] else {
            return Err(Error::format("waynet metadata has wrong length"));
        };
        let mlp = Mlp::from_tensors(&file.tensors)?;
        let model = Self {
            mlp,
            variant,
            map,
            rays: rays as usize,
            app_channels: app as usize,
            max_range,
        };
        if model.mlp.input_dim() != variant.frames() * model.frame_dim() || model.mlp.output_dim() != model.rays {
            return Err(Error::format("waynet layer sizes disagree with its variant"));
        }
        Ok(model)
    }
}

impl RayPredictor for WayNetModel {
    fn ray_probabilities(&self, input: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        softmax_rows(&self.mlp.forward(&x)).row(0).to_vec()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Goal-match centroid when `goal_match.confidence ≥ alpha_k`, otherwise the
/// predictor's most probable ray.
pub fn propose_with_match(
    predictor: &dyn RayPredictor,
    input: &[f64],
    obs: &Observation,
    goal_match: &MatchResult,
    alpha_k: f64,
) -> (Waypoint, WaypointSource) {
    if goal_match.confidence >= alpha_k {
        if let Ok(ray) = matched_centroid(goal_match, obs) {
            return (Waypoint::at(obs, ray), WaypointSource::GoalMatch);
        }
    }
    let ray = argmax(&predictor.ray_probabilities(input));
    (Waypoint::at(obs, ray), WaypointSource::Learned)
}

pub fn propose_waypoint(
    predictor: &dyn RayPredictor,
    input: &[f64],
    obs: &Observation,
    goal: &Observation,
    alpha_k: f64,
) -> (Waypoint, WaypointSource) {
    propose_with_match(predictor, input, obs, &match_observations(obs, goal), alpha_k)
}

#[derive(Debug, Clone)]
pub struct WayNetDataset {
    pub inputs: Array2<f64>,
    pub targets: Vec<usize>,
    pub rays: usize,
    pub app_channels: usize,
}

impl WayNetDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Replay each demo through the HLM to rebuild the map crops the
    /// operator would have had, one sample per frame targeting the click.
    pub fn from_demos(
        demos: &[DemoTrajectory],
        variant: InputVariant,
        map: MapVariant,
        hlm: Option<&Hlm>,
        max_range: f64,
    ) -> Result<Self> {
        let first = demos
            .iter()
            .find_map(|d| d.frames.first())
            .ok_or_else(|| Error::NoData("no demo frames".into()))?;
        let (rays, app) = (first.observation.rays(), first.observation.app_channels());
        let frame_dim = variant.frame_dim(rays, app);
        if variant.uses_map() && (map == MapVariant::None || hlm.is_none()) {
            return Err(Error::Config(format!("{variant} needs a map and a high-level manager")));
        }
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for demo in demos {
            let mut history = InputHistory::new(variant, frame_dim);
            let mut memory = hlm.map(|h| h.memory(map, DEFAULT_ALPHA_C));
            for f in &demo.frames {
                let crop = match (&mut memory, hlm) {
                    (Some(m), Some(h)) if variant.uses_map() => {
                        let p = h.latent(&f.observation)?;
                        m.observe(p, &f.observation);
                        Some(m.grid.crop(p, DEFAULT_CROP, DEFAULT_CROP))
                    }
                    _ => None,
                };
                if f.observation.rays() != rays {
                    return Err(Error::Shape {
                        expected: rays,
                        actual: f.observation.rays(),
                    });
                }
                history.push(frame_vector(variant, &f.observation, crop.as_ref(), max_range));
                rows.extend(history.input());
                targets.push(f.click);
            }
        }
        let n = targets.len();
        Ok(Self {
            inputs: Array2::from_shape_vec((n, rows.len() / n), rows).expect("rectangular"),
            targets,
            rays,
            app_channels: app,
        })
    }
}

#[derive(Debug, Clone)]
pub struct WayNetTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for WayNetTraining {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 64,
            lr: 1e-3,
            hidden: vec![128, 64],
            seed: 0,
        }
    }
}

/// Cross-entropy on click rays. Returns the model and the mean loss of the
/// final epoch.
pub fn train_waynet(
    data: &WayNetDataset,
    variant: InputVariant,
    map: MapVariant,
    max_range: f64,
    opts: &WayNetTraining,
) -> Result<(WayNetModel, f64)> {
    if data.is_empty() {
        return Err(Error::NoData("empty waynet dataset".into()));
    }
    let mut model = WayNetModel::new(variant, map, data.rays, data.app_channels, max_range, &opts.hidden, opts.seed);
    if model.input_dim() != data.inputs.ncols() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            actual: data.inputs.ncols(),
        });
    }
    let mut opt = Adam::new(opts.lr, model.mlp.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xa11);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = f64::NAN;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch.max(1)) {
            let x = data.inputs.select(Axis(0), chunk);
            let t: Vec<usize> = chunk.iter().map(|&i| data.targets[i]).collect();
            let (loss, grad) = model.loss_and_grad(&x, &t);
            let mut params = model.mlp.params();
            opt.step(&mut params, &grad);
            model.mlp.set_params(&params);
            total += loss * chunk.len() as f64;
        }
        last = total / data.len() as f64;
    }
    Ok((model, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use crate::world::{render, Detection, FloorPlan, Pose};

    struct Sentinel;
    impl RayPredictor for Sentinel {
        fn ray_probabilities(&self, _: &[f64]) -> Vec<f64> {
            panic!("learned head consulted");
        }
    }

    struct Fixed(usize);
    impl RayPredictor for Fixed {
        fn ray_probabilities(&self, _: &[f64]) -> Vec<f64> {
            let mut p = vec![0.0; 128];
            p[self.0] = 1.0;
            p
        }
    }

    fn landmarks(rays: &[usize], ids: &[usize]) -> Observation {
        let mut obs = Observation::blank(128, 3);
        obs.depth = vec![3.0; 128];
        obs.detections = rays
            .iter()
            .zip(ids)
            .map(|(&ray, &id)| {
                let mut descriptor = vec![0.0; 16];
                descriptor[id] = 1.0;
                Detection { ray, descriptor, depth: 3.0 }
            })
            .collect();
        obs
    }

    #[test]
    fn self_goal_uses_centroid_without_the_net() {
        let obs = landmarks(&[10, 20, 60], &[0, 1, 2]);
        let (wp, src) = propose_waypoint(&Sentinel, &[], &obs, &obs, DEFAULT_ALPHA_K);
        assert_eq!(src, WaypointSource::GoalMatch);
        assert_eq!(wp.ray, 30);
        assert_eq!(wp.depth_hint, 3.0);
    }

    #[test]
    fn unrelated_goal_uses_the_net() {
        let obs = landmarks(&[10, 20], &[0, 1]);
        let goal = landmarks(&[10, 20], &[5, 6]);
        let (wp, src) = propose_waypoint(&Fixed(77), &[], &obs, &goal, DEFAULT_ALPHA_K);
        assert_eq!((wp.ray, src), (77, WaypointSource::Learned));
    }

    #[test]
    fn threshold_is_inclusive() {
        // 7 shared out of 10 + 10 detections: 14/20 = 0.7
        let ids: Vec<usize> = (0..10).collect();
        let rays: Vec<usize> = (0..10).map(|i| 5 + i * 12).collect();
        let obs = landmarks(&rays, &ids);
        let goal_ids: Vec<usize> = (0..7).chain(10..13).collect();
        let goal = landmarks(&rays, &goal_ids);
        let m = match_observations(&obs, &goal);
        assert_eq!(m.confidence, 0.7);
        let (_, src) = propose_waypoint(&Sentinel, &[], &obs, &goal, 0.7);
        assert_eq!(src, WaypointSource::GoalMatch);
    }

    #[test]
    fn history_pads_and_shifts() {
        let mut h = InputHistory::new(InputVariant::Rgbd3, 2);
        h.push(vec![1.0, 1.0]);
        assert_eq!(h.input(), vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        h.push(vec![2.0, 2.0]);
        h.push(vec![3.0, 3.0]);
        h.push(vec![4.0, 4.0]);
        assert_eq!(h.input(), vec![4.0, 4.0, 3.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn pooling_averages_blocks() {
        let crop = Array2::from_shape_fn((64, 64), |(r, c)| if r < 4 && c < 4 { 1.0 } else { 0.0 });
        let p = pool_crop(&crop);
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(p.sum(), 1.0);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = WayNetModel::new(InputVariant::RgbdM, MapVariant::H, 128, 3, 10.0, &[16], 1);
        let p = m.ray_probabilities(&vec![0.3; m.input_dim()]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn waynet_gradient_matches_finite_differences() {
        let mut m = WayNetModel::new(InputVariant::Rgbd, MapVariant::None, 6, 1, 10.0, &[5], 2);
        let x = Array2::from_shape_fn((4, m.input_dim()), |(i, j)| ((i * 5 + j) as f64 * 0.61).cos());
        let t = [0, 5, 2, 3];
        let (_, grad) = m.loss_and_grad(&x, &t);
        let params = m.mlp.params();
        let err = gradient_check(&params, &grad, 1e-6, |p| {
            m.mlp.set_params(p);
            m.loss_and_grad(&x, &t).0
        });
        assert!(err < 1e-4, "{err}");
    }

    fn demo_in(plan: FloorPlan, click: usize, start: Pose, n: usize) -> DemoTrajectory {
        use crate::demos::DemoFrame;
        use crate::world::{step, Action};
        let mut pose = start;
        let mut frames = Vec::new();
        for i in 0..n {
            let action = if i % 2 == 0 { Action::TurnLeft } else { Action::TurnRight };
            frames.push(DemoFrame {
                observation: render(&plan, &pose),
                click,
                action,
                pose,
            });
            pose = step(&plan, &pose, action);
        }
        DemoTrajectory {
            plan,
            frames,
            collector: "test".into(),
            seed: 0,
            timestamp: 0,
        }
    }

    #[test]
    fn constant_click_is_learned_exactly() {
        let plan = FloorPlan::empty_room("a", 4.0, 4.0);
        let demo = demo_in(plan, 64, Pose::new(2.0, 2.0, 0.3), 20);
        let data = WayNetDataset::from_demos(&[demo], InputVariant::Rgbd, MapVariant::None, None, 10.0).unwrap();
        let (model, _) = train_waynet(&data, InputVariant::Rgbd, MapVariant::None, 10.0, &WayNetTraining::default()).unwrap();
        assert_eq!(model.accuracy(&data), 1.0);
    }

    #[test]
    fn distinct_rooms_get_distinct_clicks() {
        let a = crate::world::procgen::generate(1, &Default::default());
        let b = crate::world::procgen::generate(2, &Default::default());
        let da = demo_in(a.clone(), 32, Pose::new(a.seed.x, a.seed.y, 0.0), 40);
        let db = demo_in(b.clone(), 96, Pose::new(b.seed.x, b.seed.y, 1.0), 40);
        let data = WayNetDataset::from_demos(&[da, db], InputVariant::Rgbd, MapVariant::None, None, 10.0).unwrap();
        let (model, _) = train_waynet(&data, InputVariant::Rgbd, MapVariant::None, 10.0, &WayNetTraining::default()).unwrap();
        assert!(model.accuracy(&data) >= 0.9);
    }

    #[test]
    fn empty_demos_are_no_data() {
        assert!(matches!(
            WayNetDataset::from_demos(&[], InputVariant::Rgb, MapVariant::None, None, 10.0),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn map_variants_need_an_hlm() {
        let plan = FloorPlan::empty_room("a", 4.0, 4.0);
        let demo = demo_in(plan, 64, Pose::new(2.0, 2.0, 0.3), 3);
        assert!(WayNetDataset::from_demos(&[demo.clone()], InputVariant::RgbdM, MapVariant::H, None, 10.0).is_err());
        let hlm = Hlm::bootstrap(&Default::default(), 1);
        let data = WayNetDataset::from_demos(&[demo], InputVariant::Rgbd3M, MapVariant::H, Some(&hlm), 10.0).unwrap();
        assert_eq!(data.inputs.ncols(), 3 * (128 * 4 + 256));
    }

    #[test]
    fn weights_round_trip_keeps_variants() {
        let m = WayNetModel::new(InputVariant::Rgbd3M, MapVariant::C, 8, 1, 10.0, &[4], 5);
        let back = WayNetModel::from_weights(WeightFile::from_bytes(&m.to_weights().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in InputVariant::ALL {
            assert_eq!(v.to_string().parse::<InputVariant>().unwrap(), v);
        }
    }
}
