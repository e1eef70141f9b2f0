//! Scripted stand-in for a human teleoperator.
//!
//! The operator tours the plan: it repeatedly picks a far, little-visited
//! target, follows a clearance-respecting shortest path to it, clicks the ray
//! pointing at the path a little ahead, and issues the motion that keeps it on
//! the path. A small fraction of actions are random, as people wobble.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demos::{DemoFrame, DemoTrajectory};
use crate::episodes::SAMPLE_CLEARANCE;
use crate::world::{step, Action, FloorPlan, NavGraph, Point, Pose, Sensor, FORWARD_STEP, TURN_DEGREES};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CollectorConfig {
    pub frames: usize,
    /// Corner offset for the operator's path graph.
    pub corner_offset: f64,
    pub path_clearance: f64,
    /// How far along the path the click aims.
    pub lookahead: f64,
    pub noise: f64,
    pub sensor: Sensor,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            frames: 260,
            corner_offset: 0.45,
            path_clearance: 0.35,
            lookahead: 1.25,
            noise: 0.03,
            sensor: Sensor::default(),
        }
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn free_point(plan: &FloorPlan, rng: &mut ChaCha8Rng) -> Point {
    let b = plan.bounds;
    loop {
        let p = Point::new(rng.gen_range(b.min.x..b.max.x), rng.gen_range(b.min.y..b.max.y));
        if plan.clearance(p) >= SAMPLE_CLEARANCE && plan.reachable(p) {
            return p;
        }
    }
}

/// Point `ahead` meters further along `path` from its closest point to `p`;
/// also returns the index of the segment it lies on.
fn lookahead_point(path: &[Point], p: Point, ahead: f64) -> (Point, usize) {
    let mut best = (f64::INFINITY, 0, 0.0);
    for i in 0..path.len() - 1 {
        let (a, b) = (path[i], path[i + 1]);
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = a.add(ab.scale(t)).dist(p);
        if d < best.0 - 1e-12 {
            best = (d, i, t);
        }
    }
    let (_, mut i, t) = best;
    let mut remaining = ahead;
    let mut from = path[i].add(path[i + 1].sub(path[i]).scale(t));
    loop {
        let seg = path[i + 1].dist(from);
        if remaining <= seg || i + 2 == path.len() {
            let dir = path[i + 1].sub(from);
            let n = dir.norm();
            let q = if n > 0.0 { from.add(dir.scale(remaining.min(seg) / n)) } else { from };
            return (q, i);
        }
        remaining -= seg;
        from = path[i + 1];
        i += 1;
    }
}

/// One scripted tour of `plan`.
pub fn collect_demo(plan: &FloorPlan, seed: u64, cfg: &CollectorConfig) -> Result<DemoTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = NavGraph::build(plan, cfg.corner_offset, cfg.path_clearance);
    let sensor = &cfg.sensor;
    let start = free_point(plan, &mut rng);
    let mut pose = Pose::new(start.x, start.y, (rng.gen_range(0..24) as f64 * TURN_DEGREES).to_radians());
    let mut visited: Vec<Point> = vec![start];
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut path: Vec<Point> = Vec::new();
    let mut stuck = 0;

    while frames.len() < cfg.frames {
        let here = pose.position();
        let arrived = path.last().is_none_or(|g| g.dist(here) < 0.4);
        if arrived || stuck > 12 {
            // farthest of a few random candidates from everything visited so far
            let mut best: Option<(f64, Vec<Point>)> = None;
            for _ in 0..8 {
                let c = free_point(plan, &mut rng);
                let novelty = visited.iter().map(|v| v.dist(c)).fold(f64::INFINITY, f64::min);
                if let Some((_, p)) = graph.shortest_path(plan, here, c) {
                    if best.as_ref().is_none_or(|(n, _)| novelty > *n) {
                        best = Some((novelty, p));
                    }
                }
            }
            path = match best {
                Some((_, p)) if p.len() >= 2 => p,
                _ => vec![here, here.add(pose.direction().scale(FORWARD_STEP))],
            };
            stuck = 0;
        }

        let (aim, _) = lookahead_point(&path, here, cfg.lookahead);
        let (near, _) = lookahead_point(&path, here, 0.3);
        let heading = pose.heading.radians();
        let click_angle = wrap((aim.y - here.y).atan2(aim.x - here.x) - heading);
        let click = sensor.ray_for_offset(click_angle);
        let steer = wrap((near.y - here.y).atan2(near.x - here.x) - heading);
        let half_turn = (TURN_DEGREES / 2.0).to_radians();
        let mut action = if near.dist(here) < 1e-6 || steer.abs() <= half_turn {
            Action::MoveForward
        } else if steer > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        };
        if rng.gen::<f64>() < cfg.noise {
            action = Action::MOVES[rng.gen_range(0..3)];
        }
        let observation = sensor.render(plan, &pose);
        let next = step(plan, &pose, action);
        if action == Action::MoveForward && next.position().dist(here) < 0.5 * FORWARD_STEP {
            stuck += 4;
        } else if action != Action::MoveForward {
            stuck += 1;
        } else {
            stuck = 0;
        }
        frames.push(DemoFrame {
            observation,
            click,
            action,
            pose,
        });
        if next.position().dist(*visited.last().unwrap()) > 0.5 {
            visited.push(next.position());
        }
        pose = next;
    }
    if let Some(last) = frames.last_mut() {
        last.action = Action::Stop;
    }
    let demo = DemoTrajectory {
        plan: plan.clone(),
        frames,
        collector: "scripted".into(),
        seed,
        timestamp: 0,
    };
    demo.validate().map_err(|e| Error::InvalidEpisode(format!("scripted demo broke an invariant: {e}")))?;
    Ok(demo)
}
