//! Seeded procedural floorplans: a grid of rooms joined by doors along a
//! random spanning tree, optional free-standing partitions, and landmarks
//! mounted along every wall face that borders a room.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FloorPlan, Landmark, Point, Rect, Segment};

#[derive(Debug, Clone)]
pub struct ProcGenConfig {
    pub cols: usize,
    pub rows: usize,
    pub room_min: f64,
    pub room_max: f64,
    pub door_width: f64,
    pub extra_door_prob: f64,
    pub partition_prob: f64,
    pub landmark_spacing: f64,
    pub landmark_radius: f64,
    pub landmark_offset: f64,
    pub descriptor_dim: usize,
    /// Grid cells (col, row) left out; they become sealed, unreachable blocks.
    pub excluded: Vec<(usize, usize)>,
}

impl Default for ProcGenConfig {
    fn default() -> Self {
        Self {
            cols: 3,
            rows: 2,
            room_min: 3.0,
            room_max: 4.5,
            door_width: 1.0,
            extra_door_prob: 0.3,
            partition_prob: 0.4,
            landmark_spacing: 0.7,
            landmark_radius: 0.25,
            landmark_offset: 0.05,
            descriptor_dim: 16,
            excluded: Vec::new(),
        }
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(seed: u64, cfg: &ProcGenConfig) -> FloorPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cols, rows) = (cfg.cols, cfg.rows);
    let mut xs = vec![0.0];
    for _ in 0..cols {
        let w = rng.gen_range(cfg.room_min..=cfg.room_max);
        xs.push(xs.last().unwrap() + (w * 20.0).round() / 20.0);
    }
    let mut ys = vec![0.0];
    for _ in 0..rows {
        let h = rng.gen_range(cfg.room_min..=cfg.room_max);
        ys.push(ys.last().unwrap() + (h * 20.0).round() / 20.0);
    }
    let included = |c: usize, r: usize| !cfg.excluded.contains(&(c, r));
    let cell_id = |c: usize, r: usize| r * cols + c;

    // door edges: (cell a, cell b, vertical wall?)
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !included(c, r) {
                continue;
            }
            if c + 1 < cols && included(c + 1, r) {
                edges.push((cell_id(c, r), cell_id(c + 1, r)));
            }
            if r + 1 < rows && included(c, r + 1) {
                edges.push((cell_id(c, r), cell_id(c, r + 1)));
            }
        }
    }
    edges.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..cols * rows).collect();
    let mut doors = Vec::new();
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            doors.push((a, b));
        } else if rng.gen_bool(cfg.extra_door_prob) {
            doors.push((a, b));
        }
    }
    let has_door = |a: usize, b: usize| doors.contains(&(a, b)) || doors.contains(&(b, a));

    let mut walls = Vec::new();
    let mut door_wall = |rng: &mut ChaCha8Rng, a: Point, b: Point, door: bool| {
        if !door {
            walls.push(Segment::new(a, b));
            return;
        }
        let len = a.dist(b);
        let start = rng.gen_range(0.3..=(len - 0.3 - cfg.door_width));
        let start = (start * 20.0).round() / 20.0;
        let u = b.sub(a).scale(1.0 / len);
        walls.push(Segment::new(a, a.add(u.scale(start))));
        walls.push(Segment::new(a.add(u.scale(start + cfg.door_width)), b));
    };
    for c in 0..=cols {
        for r in 0..rows {
            let left = (c > 0 && included(c - 1, r)).then(|| cell_id(c - 1, r));
            let right = (c < cols && included(c, r)).then(|| cell_id(c, r));
            let (a, b) = (Point::new(xs[c], ys[r]), Point::new(xs[c], ys[r + 1]));
            match (left, right) {
                (None, None) => {}
                (Some(l), Some(rt)) => door_wall(&mut rng, a, b, has_door(l, rt)),
                _ => door_wall(&mut rng, a, b, false),
            }
        }
    }
    for r in 0..=rows {
        for c in 0..cols {
            let below = (r > 0 && included(c, r - 1)).then(|| cell_id(c, r - 1));
            let above = (r < rows && included(c, r)).then(|| cell_id(c, r));
            let (a, b) = (Point::new(xs[c], ys[r]), Point::new(xs[c + 1], ys[r]));
            match (below, above) {
                (None, None) => {}
                (Some(l), Some(u)) => door_wall(&mut rng, a, b, has_door(l, u)),
                _ => door_wall(&mut rng, a, b, false),
            }
        }
    }

    let first = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .find(|&(c, r)| included(c, r))
        .expect("at least one room");
    for r in 0..rows {
        for c in 0..cols {
            if !included(c, r) || (c, r) == first || !rng.gen_bool(cfg.partition_prob) {
                continue;
            }
            let (x0, x1, y0, y1) = (xs[c], xs[c + 1], ys[r], ys[r + 1]);
            let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if rng.gen_bool(0.5) {
                let half = 0.225 * (x1 - x0);
                let y = cy + side * 0.25 * (y1 - y0);
                walls.push(Segment::new(Point::new(cx - half, y), Point::new(cx + half, y)));
            } else {
                let half = 0.225 * (y1 - y0);
                let x = cx + side * 0.25 * (x1 - x0);
                walls.push(Segment::new(Point::new(x, cy - half), Point::new(x, cy + half)));
            }
        }
    }

    let bounds = Rect::new(Point::new(0.0, 0.0), Point::new(xs[cols], ys[rows]));
    let in_room = |p: Point| {
        if !bounds.contains(p) {
            return false;
        }
        let c = xs.iter().rposition(|&x| x <= p.x).unwrap_or(0).min(cols - 1);
        let r = ys.iter().rposition(|&y| y <= p.y).unwrap_or(0).min(rows - 1);
        included(c, r)
    };
    let mut landmarks = Vec::new();
    for w in &walls {
        let len = w.length();
        let u = w.b.sub(w.a).scale(1.0 / len);
        let n = Point::new(-u.y, u.x);
        for s in [1.0, -1.0] {
            let probe = w.a.add(u.scale(len / 2.0)).add(n.scale(0.3 * s));
            if !in_room(probe) {
                continue;
            }
            let mut t = cfg.landmark_spacing / 2.0;
            while t <= len - 0.15 {
                let tt = (t + rng.gen_range(-0.1..=0.1)).clamp(0.15, len - 0.15);
                landmarks.push(Landmark {
                    position: w.a.add(u.scale(tt)).add(n.scale(s * cfg.landmark_offset)),
                    descriptor: random_unit(&mut rng, cfg.descriptor_dim),
                    radius: cfg.landmark_radius,
                });
                t += cfg.landmark_spacing;
            }
        }
    }

    let seed_point = Point::new(
        (xs[first.0] + xs[first.0 + 1]) / 2.0,
        (ys[first.1] + ys[first.1 + 1]) / 2.0,
    );
    FloorPlan::new(format!("proc-{seed:04}"), walls, landmarks, seed_point, bounds)
}

/// Layouts cycled through by [`suite`]: (cols, rows, excluded cells).
const LAYOUTS: &[(usize, usize, &[(usize, usize)])] = &[
    (2, 2, &[]),
    (3, 2, &[]),
    (2, 3, &[(1, 2)]),
    (3, 3, &[(2, 2), (0, 2)]),
    (2, 3, &[]),
    (3, 2, &[(2, 1)]),
    (4, 2, &[]),
    (3, 3, &[(1, 1)]),
];

/// `n` plans with varied layouts, seeded from `base_seed`.
pub fn suite(n: usize, base_seed: u64) -> Vec<FloorPlan> {
    (0..n)
        .map(|i| {
            let (cols, rows, excluded) = LAYOUTS[i % LAYOUTS.len()];
            let cfg = ProcGenConfig {
                cols,
                rows,
                excluded: excluded.to_vec(),
                ..ProcGenConfig::default()
            };
            generate(base_seed + i as u64, &cfg)
        })
        .collect()
}
