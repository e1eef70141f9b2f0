//! Deterministic 2D floorplan simulator: poses, the discrete action space,
//! collision clipping and raycast first-person observations.

mod geometry;
mod nav;
mod planfile;
pub mod procgen;

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use geometry::{Point, Rect, Segment};
pub use nav::NavGraph;
pub use planfile::{parse_plan, write_plan};

use crate::{Error, Result};

/// Collision standoff kept between the agent and any wall.
pub const WALL_EPS: f64 = 0.01;
/// Translation of one `MoveForward`.
pub const FORWARD_STEP: f64 = 0.25;
/// Rotation of one turn action, in degrees.
pub const TURN_DEGREES: f64 = 15.0;

const TURN_STEP_TICKS: u32 = 1 << 16;
const TICKS_PER_TURN: u32 = 24 * TURN_STEP_TICKS;

/// Heading in fixed point: one 15° turn is exactly 2^16 ticks, so any
/// sequence of turns composes without rounding drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Heading(u32);

impl Heading {
    pub fn from_radians(theta: f64) -> Self {
        let turns = theta.rem_euclid(TAU) / TAU;
        let ticks = (turns * TICKS_PER_TURN as f64).round() as u64 % TICKS_PER_TURN as u64;
        Heading(ticks as u32)
    }

    pub fn from_ticks(ticks: u32) -> Self {
        Heading(ticks % TICKS_PER_TURN)
    }

    pub fn ticks(self) -> u32 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0 as f64 * (TAU / TICKS_PER_TURN as f64)
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 * (360.0 / TICKS_PER_TURN as f64)
    }

    /// Rotate by a whole number of 15° increments (positive = counter-clockwise).
    pub fn turned(self, steps: i32) -> Self {
        let delta = (steps as i64 * TURN_STEP_TICKS as i64).rem_euclid(TICKS_PER_TURN as i64);
        Heading(((self.0 as i64 + delta) % TICKS_PER_TURN as i64) as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading_radians: f64) -> Self {
        Self {
            x,
            y,
            heading: Heading::from_radians(heading_radians),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn direction(&self) -> Point {
        Point::from_angle(self.heading.radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    TurnLeft,
    TurnRight,
    MoveForward,
    Stop,
}

impl Action {
    pub const MOVES: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::MoveForward];

    pub fn code(self) -> u8 {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::MoveForward => 2,
            Action::Stop => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Action::TurnLeft),
            1 => Some(Action::TurnRight),
            2 => Some(Action::MoveForward),
            3 => Some(Action::Stop),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::TurnLeft => "TurnLeft",
            Action::TurnRight => "TurnRight",
            Action::MoveForward => "MoveForward",
            Action::Stop => "Stop",
        };
        f.write_str(s)
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "TurnLeft" => Ok(Action::TurnLeft),
            "TurnRight" => Ok(Action::TurnRight),
            "MoveForward" => Ok(Action::MoveForward),
            "Stop" => Ok(Action::Stop),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub position: Point,
    /// Unit-norm descriptor used by the matcher.
    pub descriptor: Vec<f64>,
    /// A ray whose wall hit lies within this distance observes the landmark.
    pub radius: f64,
}

impl Landmark {
    /// Appearance colour in `[0, 1]` for channel `c`, derived from the descriptor.
    pub fn color(&self, c: usize) -> f64 {
        let d = self.descriptor.len() as f64;
        (0.5 * (1.0 + self.descriptor[c % self.descriptor.len()] * d.sqrt())).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct FloorPlan {
    pub id: String,
    pub walls: Vec<Segment>,
    pub landmarks: Vec<Landmark>,
    pub seed: Point,
    pub bounds: Rect,
    nav: OnceLock<NavGraph>,
}

impl PartialEq for FloorPlan {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.walls == other.walls
            && self.landmarks == other.landmarks
            && self.seed == other.seed
            && self.bounds == other.bounds
    }
}

impl FloorPlan {
    pub fn new(
        id: impl Into<String>,
        walls: Vec<Segment>,
        landmarks: Vec<Landmark>,
        seed: Point,
        bounds: Rect,
    ) -> Self {
        Self {
            id: id.into(),
            walls,
            landmarks,
            seed,
            bounds,
            nav: OnceLock::new(),
        }
    }

    /// Empty rectangular room bounded by four walls.
    pub fn empty_room(id: impl Into<String>, width: f64, height: f64) -> Self {
        let (a, b, c, d) = (
            Point::new(0.0, 0.0),
            Point::new(width, 0.0),
            Point::new(width, height),
            Point::new(0.0, height),
        );
        Self::new(
            id,
            vec![
                Segment::new(a, b),
                Segment::new(b, c),
                Segment::new(c, d),
                Segment::new(d, a),
            ],
            Vec::new(),
            Point::new(width / 2.0, height / 2.0),
            Rect::new(a, c),
        )
    }

    pub fn descriptor_dim(&self) -> usize {
        self.landmarks.first().map_or(0, |l| l.descriptor.len())
    }

    /// Visibility graph used for geodesic distances (built on first use).
    pub fn nav_graph(&self) -> &NavGraph {
        self.nav.get_or_init(|| NavGraph::build(self, 1e-3, 0.0))
    }

    pub fn clearance(&self, p: Point) -> f64 {
        self.walls
            .iter()
            .map(|w| w.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest wall hit along a ray, capped at `max_range`.
    pub fn cast(&self, origin: Point, dir: Point, max_range: f64) -> (f64, Option<usize>) {
        let mut best = (max_range, None);
        for (i, w) in self.walls.iter().enumerate() {
            if let Some(t) = w.ray_hit(origin, dir) {
                if t < best.0 {
                    best = (t, Some(i));
                }
            }
        }
        best
    }

    /// Straight segment between two points crosses no wall.
    pub fn visible(&self, a: Point, b: Point) -> bool {
        let s = Segment::new(a, b);
        !self.walls.iter().any(|w| w.intersects(&s))
    }

    pub fn geodesic_distance(&self, a: Point, b: Point) -> Result<f64> {
        self.nav_graph()
            .shortest_path(self, a, b)
            .map(|(len, _)| len)
            .ok_or(Error::NoPath {
                from: (a.x, a.y),
                to: (b.x, b.y),
            })
    }

    /// Free and connected to the plan's seed point.
    pub fn reachable(&self, p: Point) -> bool {
        self.bounds.contains(p) && self.geodesic_distance(self.seed, p).is_ok()
    }
}

pub fn geodesic_distance(plan: &FloorPlan, a: Point, b: Point) -> Result<f64> {
    plan.geodesic_distance(a, b)
}

/// Apply one action. Forward motion is clipped `WALL_EPS` short of the first
/// wall along the heading; it never fails.
pub fn step(plan: &FloorPlan, pose: &Pose, action: Action) -> Pose {
    match action {
        Action::TurnLeft => Pose {
            heading: pose.heading.turned(1),
            ..*pose
        },
        Action::TurnRight => Pose {
            heading: pose.heading.turned(-1),
            ..*pose
        },
        Action::Stop => *pose,
        Action::MoveForward => {
            let dir = pose.direction();
            let (hit, _) = plan.cast(pose.position(), dir, FORWARD_STEP + 1.0);
            let d = FORWARD_STEP.min((hit - WALL_EPS).max(0.0));
            Pose {
                x: pose.x + d * dir.x,
                y: pose.y + d * dir.y,
                heading: pose.heading,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub ray: usize,
    pub descriptor: Vec<f64>,
    pub depth: f64,
}

/// First-person strip: R depths, `C_app` appearance channels per ray
/// (channel-major), and one detection per visible landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub depth: Vec<f64>,
    pub appearance: Vec<f64>,
    pub detections: Vec<Detection>,
}

impl Observation {
    pub fn rays(&self) -> usize {
        self.depth.len()
    }

    pub fn app_channels(&self) -> usize {
        if self.depth.is_empty() {
            0
        } else {
            self.appearance.len() / self.depth.len()
        }
    }

    pub fn appearance_at(&self, channel: usize, ray: usize) -> f64 {
        self.appearance[channel * self.rays() + ray]
    }

    /// All-zero observation of the given shape (history padding).
    pub fn blank(rays: usize, app_channels: usize) -> Self {
        Self {
            depth: vec![0.0; rays],
            appearance: vec![0.0; rays * app_channels],
            detections: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub rays: usize,
    pub fov_degrees: f64,
    pub max_range: f64,
    pub app_channels: usize,
}

impl Default for Sensor {
    fn default() -> Self {
        Self {
            rays: 128,
            fov_degrees: 120.0,
            max_range: 10.0,
            app_channels: 3,
        }
    }
}

impl Sensor {
    /// Angle of ray `i` relative to the heading; ray 0 is the leftmost.
    pub fn ray_offset(&self, i: usize) -> f64 {
        let fov = self.fov_degrees.to_radians();
        if self.rays == 1 {
            return 0.0;
        }
        fov / 2.0 - i as f64 * fov / (self.rays - 1) as f64
    }

    /// Nearest ray index for a heading-relative angle, clamped to the FOV.
    pub fn ray_for_offset(&self, offset: f64) -> usize {
        let fov = self.fov_degrees.to_radians();
        let mut off = offset.rem_euclid(TAU);
        if off > PI {
            off -= TAU;
        }
        let idx = ((fov / 2.0 - off) * (self.rays - 1) as f64 / fov).round();
        idx.clamp(0.0, (self.rays - 1) as f64) as usize
    }

    pub fn center_ray(&self) -> f64 {
        (self.rays - 1) as f64 / 2.0
    }

    pub fn render(&self, plan: &FloorPlan, pose: &Pose) -> Observation {
        let r = self.rays;
        let origin = pose.position();
        let heading = pose.heading.radians();
        let mut depth = vec![self.max_range; r];
        let mut appearance = vec![0.0; r * self.app_channels];
        // per landmark: (distance from hit to landmark, ray, depth)
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; plan.landmarks.len()];

        for i in 0..r {
            let dir = Point::from_angle(heading + self.ray_offset(i));
            let (t, wall) = plan.cast(origin, dir, self.max_range);
            depth[i] = t;
            let Some(w) = wall else { continue };
            let wall = &plan.walls[w];
            let hit = origin.add(dir.scale(t));
            let agent_side = wall.side(origin);
            for (k, lm) in plan.landmarks.iter().enumerate() {
                let d = hit.dist(lm.position);
                if d > 3.0 * lm.radius || wall.side(lm.position) * agent_side <= 0.0 {
                    continue;
                }
                let response = (-d * d / (2.0 * lm.radius * lm.radius)).exp();
                for c in 0..self.app_channels {
                    appearance[c * r + i] += response * lm.color(c);
                }
                if d <= lm.radius && best[k].is_none_or(|(bd, _, _)| d < bd) {
                    best[k] = Some((d, i, t));
                }
            }
        }

        let mut detections: Vec<Detection> = best
            .iter()
            .enumerate()
            .filter_map(|(k, b)| {
                b.map(|(_, ray, t)| Detection {
                    ray,
                    descriptor: plan.landmarks[k].descriptor.clone(),
                    depth: t,
                })
            })
            .collect();
        detections.sort_by_key(|d| d.ray);
        Observation {
            depth,
            appearance,
            detections,
        }
    }
}

/// Render with the default sensor (128 rays, 120° FOV, 10 m range, 3 channels).
pub fn render(plan: &FloorPlan, pose: &Pose) -> Observation {
    Sensor::default().render(plan, pose)
}
