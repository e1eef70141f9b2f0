//! The feudal agent loop.
//!
//! Per step: render, project into the latent map and stamp it, test the stop
//! rule, crop the map, ask the mid-level manager for a waypoint (possibly
//! redirected toward unexplored latent space), let the worker pick a motion.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::grouping::DEFAULT_ALPHA_C;
use crate::hlm::Hlm;
use crate::matcher::match_observations;
use crate::mpm::{MapVariant, MemoryMap, DEFAULT_CROP, DENSITY_RADIUS};
use crate::waynet::{
    frame_vector, propose_with_match, InputVariant, RayPredictor, WayNetModel, Waypoint, WaypointSource, DEFAULT_ALPHA_K,
};
use crate::worker::{act_deterministic, act_learned, StopRule, WorkerKind, WorkerModel};
use crate::world::{step, Action, FloorPlan, Observation, Point, Pose, Sensor, TURN_DEGREES};
use crate::{Error, Result};

pub const DEFAULT_MAX_STEPS: usize = 500;
pub const SUCCESS_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub map: MapVariant,
    pub waynet: InputVariant,
    pub worker: WorkerKind,
    pub max_steps: usize,
    /// Density at which the map redirects learned waypoints; `None` disables it.
    pub rho_explore: Option<f64>,
    pub alpha_c: f64,
    pub alpha_k: f64,
    pub stop: StopRule,
    pub sensor: Sensor,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            map: MapVariant::H,
            waynet: InputVariant::RgbdM,
            worker: WorkerKind::Cl,
            max_steps: DEFAULT_MAX_STEPS,
            rho_explore: None,
            alpha_c: DEFAULT_ALPHA_C,
            alpha_k: DEFAULT_ALPHA_K,
            stop: StopRule::default(),
            sensor: Sensor::default(),
        }
    }
}

impl AgentConfig {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.map, self.waynet, self.worker)
    }
}

/// Models an agent runs with. Borrowed, so many episodes can share them.
#[derive(Clone, Copy)]
pub struct AgentModels<'a> {
    pub hlm: Option<&'a Hlm>,
    pub waynet: &'a WayNetModel,
    pub worker: Option<&'a WorkerModel>,
    /// Replaces the waynet's scoring (inputs are still built for it).
    pub predictor: Option<&'a (dyn RayPredictor + Sync)>,
}

impl<'a> AgentModels<'a> {
    pub fn new(hlm: Option<&'a Hlm>, waynet: &'a WayNetModel, worker: Option<&'a WorkerModel>) -> Self {
        Self {
            hlm,
            waynet,
            worker,
            predictor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    pub action: Action,
    pub waypoint_ray: Option<usize>,
    pub waypoint_depth: Option<f64>,
    pub source: Option<String>,
    pub latent: Option<[f64; 2]>,
    pub density: Option<f64>,
    pub stop: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub stopped: bool,
    /// Motion actions executed (a stop is not counted).
    pub steps: usize,
    /// Sum of realized forward displacements.
    pub path_length: f64,
    pub final_pose: Pose,
    pub distance_to_goal: f64,
    pub success: bool,
    pub overrides: usize,
}

/// Online fit of latent displacement per forward step as a linear function
/// of the commanded heading, used to predict where a ray would lead in the
/// latent map.
#[derive(Debug, Clone, Default)]
pub struct LatentMotion {
    samples: VecDeque<([f64; 2], [f64; 2])>,
    window: usize,
}

impl LatentMotion {
    pub fn new(window: usize) -> Self {
        Self {
            samples: VecDeque::new(),
            window,
        }
    }

    pub fn record(&mut self, heading: f64, delta: [f64; 2]) {
        self.samples.push_back(([heading.cos(), heading.sin()], delta));
        while self.samples.len() > self.window {
            self.samples.pop_front();
        }
    }

    /// Least-squares `M` with `delta ≈ M · (cos θ, sin θ)`, if well posed.
    pub fn fit(&self) -> Option<[[f64; 2]; 2]> {
        if self.samples.len() < 4 {
            return None;
        }
        let (mut a, mut b) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
        for (u, d) in &self.samples {
            for i in 0..2 {
                for j in 0..2 {
                    a[i][j] += u[i] * u[j];
                    b[i][j] += d[i] * u[j];
                }
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let scale = a[0][0] + a[1][1];
        if det.abs() < 1e-3 * scale * scale {
            return None;
        }
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = b[i][0] * inv[0][j] + b[i][1] * inv[1][j];
            }
        }
        Some(m)
    }
}

/// How far along a candidate ray the override looks, in forward steps.
pub const OVERRIDE_HORIZON_STEPS: f64 = 8.0;
/// Candidate rays closer than this to a wall are ignored.
pub const OVERRIDE_MIN_DEPTH: f64 = 0.75;

/// Redirect a learned waypoint toward the least explored reachable direction
/// once the map around the agent is dense enough. Goal-match waypoints and
/// sparse regions pass through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn exploration_override(
    rho_explore: f64,
    density: f64,
    proposed: (Waypoint, WaypointSource),
    obs: &Observation,
    sensor: &Sensor,
    memory: &MemoryMap,
    latent: [f64; 2],
    heading: f64,
    motion: &LatentMotion,
) -> (Waypoint, WaypointSource) {
    if proposed.1 != WaypointSource::Learned || density < rho_explore {
        return proposed;
    }
    // Without a motion estimate every candidate projects onto the current
    // cell, so the choice falls to the deepest ray.
    let m = motion.fit().unwrap_or([[0.0; 2]; 2]);
    let stride = (obs.rays() / 16).max(1);
    let mut best: Option<(f64, f64, usize)> = None;
    for ray in (0..obs.rays()).step_by(stride).chain([obs.rays() - 1]) {
        let depth = obs.depth[ray];
        if depth < OVERRIDE_MIN_DEPTH {
            continue;
        }
        let theta = heading + sensor.ray_offset(ray);
        let (c, s) = (theta.cos(), theta.sin());
        let steps = OVERRIDE_HORIZON_STEPS.min(depth / crate::world::FORWARD_STEP);
        let target = [
            latent[0] + steps * (m[0][0] * c + m[0][1] * s),
            latent[1] + steps * (m[1][0] * c + m[1][1] * s),
        ];
        let d = memory.grid.exploration_density(target, DENSITY_RADIUS);
        let better = match best {
            None => true,
            Some((bd, bdepth, _)) => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && depth > bdepth),
        };
        if better {
            best = Some((d, depth, ray));
        }
    }
    match best {
        Some((_, _, ray)) => (Waypoint::at(obs, ray), WaypointSource::Exploration),
        None => proposed,
    }
}

/// A direction chosen by the override, held until the agent has walked the
/// horizon the choice was scored at. Without it the view-relative candidate
/// set changes with every turn and the choice can flip back and forth.
#[derive(Debug, Clone, Copy)]
struct Commitment {
    /// Absolute heading, integrated from the agent's own turn commands.
    heading: f64,
    /// Forward steps left.
    remaining: usize,
}

impl Commitment {
    fn new(wp: &Waypoint, sensor: &Sensor, heading: f64) -> Self {
        let steps = OVERRIDE_HORIZON_STEPS.min(wp.depth_hint / crate::world::FORWARD_STEP).ceil().max(1.0);
        Self {
            heading: heading + sensor.ray_offset(wp.ray),
            remaining: steps as usize,
        }
    }

    /// Ray toward the committed heading (clamped to the field of view), or
    /// `None` once that way is blocked.
    fn waypoint(&self, obs: &Observation, sensor: &Sensor, heading: f64) -> Option<Waypoint> {
        let offset = (self.heading - heading + PI).rem_euclid(TAU) - PI;
        let ray = sensor.ray_for_offset(offset);
        let in_view = offset.abs() <= sensor.fov_degrees.to_radians() / 2.0;
        if in_view && obs.depth[ray] < OVERRIDE_MIN_DEPTH {
            return None;
        }
        Some(Waypoint::at(obs, ray))
    }
}

fn check(config: &AgentConfig, models: &AgentModels) -> Result<()> {
    let w = models.waynet;
    let fail = |m: String| Err(Error::Config(m));
    if config.max_steps == 0 {
        return fail("max_steps must be positive".into());
    }
    if w.variant != config.waynet {
        return fail(format!("waynet model is {} but config asks for {}", w.variant, config.waynet));
    }
    if w.variant.uses_map() && w.map != config.map {
        return fail(format!("waynet trained on map {} but config uses {}", w.map, config.map));
    }
    if w.variant.uses_map() && config.map == MapVariant::None {
        return fail(format!("{} needs a map", w.variant));
    }
    if config.map != MapVariant::None && models.hlm.is_none() {
        return fail(format!("map {} needs a high-level manager", config.map));
    }
    if config.worker == WorkerKind::Cl && models.worker.is_none() {
        return fail("classifier worker requested but no worker model loaded".into());
    }
    if w.rays != config.sensor.rays || w.app_channels != config.sensor.app_channels {
        return fail("waynet sensor shape differs from the configured sensor".into());
    }
    if let Some(wm) = models.worker {
        if config.worker == WorkerKind::Cl && wm.rays() != config.sensor.rays {
            return fail("worker sensor shape differs from the configured sensor".into());
        }
    }
    Ok(())
}

/// Run one image-goal episode from `start` until the stop rule fires or
/// `max_steps` motions have been executed.
pub fn run_episode(
    config: &AgentConfig,
    models: &AgentModels,
    plan: &FloorPlan,
    start: Pose,
    goal_obs: &Observation,
    goal_pos: Point,
) -> Result<(Vec<StepTrace>, EpisodeOutcome)> {
    check(config, models)?;
    let sensor = &config.sensor;
    let waynet = models.waynet;
    let predictor: &dyn RayPredictor = models.predictor.unwrap_or(waynet);
    let mut memory = match (config.map, models.hlm) {
        (MapVariant::None, _) => None,
        (variant, Some(h)) => Some(h.memory(variant, config.alpha_c)),
        (_, None) => unreachable!("checked above"),
    };
    let mut history = waynet.history();
    let mut motion = LatentMotion::new(40);
    let mut heading = start.heading.radians();
    let mut pose = start;
    let mut obs = sensor.render(plan, &pose);
    let mut traces = Vec::new();
    let mut path = 0.0;
    let mut steps = 0;
    let mut stopped = false;
    let mut overrides = 0;
    let mut pending_forward: Option<(f64, [f64; 2])> = None;
    let mut commitment: Option<Commitment> = None;

    loop {
        let latent = match (&mut memory, models.hlm) {
            (Some(m), Some(h)) => {
                let p = h.latent(&obs)?;
                m.observe(p, &obs);
                Some(p)
            }
            _ => None,
        };
        if let (Some((theta, before)), Some(p)) = (pending_forward.take(), latent) {
            motion.record(theta, [p[0] - before[0], p[1] - before[1]]);
        }
        let goal_match = match_observations(&obs, goal_obs);
        let mut trace = StepTrace {
            step: steps,
            x: pose.x,
            y: pose.y,
            heading_deg: pose.heading.degrees(),
            action: Action::Stop,
            waypoint_ray: None,
            waypoint_depth: None,
            source: None,
            latent,
            density: None,
            stop: false,
            confidence: goal_match.confidence,
        };
        if config.stop.decide(&goal_match, &obs) {
            trace.stop = true;
            traces.push(trace);
            stopped = true;
            break;
        }
        if steps >= config.max_steps {
            break;
        }

        let crop = match (&memory, latent) {
            (Some(m), Some(p)) if waynet.variant.uses_map() => Some(m.grid.crop(p, DEFAULT_CROP, DEFAULT_CROP)),
            _ => None,
        };
        history.push(frame_vector(waynet.variant, &obs, crop.as_ref(), waynet.max_range));
        let mut proposal = propose_with_match(predictor, &history.input(), &obs, &goal_match, config.alpha_k);
        if let (Some(rho), Some(m), Some(p)) = (config.rho_explore, &memory, latent) {
            let density = m.grid.exploration_density(p, DENSITY_RADIUS);
            trace.density = Some(density);
            if proposal.1 == WaypointSource::GoalMatch {
                commitment = None;
            } else if let Some(c) = commitment.as_ref().and_then(|c| c.waypoint(&obs, sensor, heading)) {
                proposal = (c, WaypointSource::Exploration);
            } else {
                commitment = None;
                proposal = exploration_override(rho, density, proposal, &obs, sensor, m, p, heading, &motion);
                if proposal.1 == WaypointSource::Exploration {
                    commitment = Some(Commitment::new(&proposal.0, sensor, heading));
                }
            }
            if proposal.1 == WaypointSource::Exploration {
                overrides += 1;
            }
        }
        let (wp, source) = proposal;
        let action = match (config.worker, models.worker) {
            (WorkerKind::Cl, Some(model)) => act_learned(model, &obs, &wp),
            _ => act_deterministic(&obs, &wp),
        };
        let next = step(plan, &pose, action);
        let moved = pose.position().dist(next.position());
        path += moved;
        match action {
            Action::TurnLeft => heading += TURN_DEGREES.to_radians(),
            Action::TurnRight => heading -= TURN_DEGREES.to_radians(),
            Action::MoveForward if moved > 0.0 => pending_forward = latent.map(|p| (heading, p)),
            _ => {}
        }
        if let Some(c) = &mut commitment {
            if action == Action::MoveForward {
                c.remaining = c.remaining.saturating_sub(1);
                if c.remaining == 0 || moved == 0.0 {
                    commitment = None;
                }
            }
        }
        trace.action = action;
        trace.waypoint_ray = Some(wp.ray);
        trace.waypoint_depth = Some(wp.depth_hint);
        trace.source = Some(source.to_string());
        traces.push(trace);
        steps += 1;
        pose = next;
        obs = sensor.render(plan, &pose);
    }

    let distance_to_goal = pose.position().dist(goal_pos);
    Ok((
        traces,
        EpisodeOutcome {
            stopped,
            steps,
            path_length: path,
            final_pose: pose,
            distance_to_goal,
            success: stopped && distance_to_goal <= SUCCESS_RADIUS,
            overrides,
        },
    ))
}

/// Newline-delimited JSON, one record per trace.
pub fn write_traces(out: &mut impl Write, traces: &[StepTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut *out, t).map_err(|e| Error::format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
