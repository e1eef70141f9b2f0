use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{FloorPlan, Point, Segment};

/// Visibility graph over points offset diagonally from every wall endpoint.
///
/// With zero-thickness walls and a point agent, shortest obstacle-avoiding
/// paths bend only at wall endpoints, so Dijkstra over this graph (plus the
/// two query points) gives geodesic distances up to the corner offset.
#[derive(Debug, Clone)]
pub struct NavGraph {
    pub nodes: Vec<Point>,
    adj: Vec<Vec<(usize, f64)>>,
    clearance: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct QueueItem(f64, usize);

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NavGraph {
    /// `offset` is the diagonal corner offset; nodes closer than `clearance`
    /// (or half the offset, whichever is larger) to any wall are dropped.
    pub fn build(plan: &FloorPlan, offset: f64, clearance: f64) -> Self {
        let min_clear = clearance.max(offset * 0.5);
        let mut endpoints: Vec<Point> = Vec::new();
        for w in &plan.walls {
            for p in [w.a, w.b] {
                if !endpoints.iter().any(|q| q.dist(p) < 1e-9) {
                    endpoints.push(p);
                }
            }
        }
        let mut nodes: Vec<Point> = Vec::new();
        for e in endpoints {
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                let p = Point::new(e.x + sx * offset, e.y + sy * offset);
                if plan.bounds.contains(p)
                    && plan.clearance(p) >= min_clear - 1e-12
                    && !nodes.iter().any(|q| q.dist(p) < offset * 0.1)
                {
                    nodes.push(p);
                }
            }
        }
        let n = nodes.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if clear_line(plan, nodes[i], nodes[j], clearance) {
                    let d = nodes[i].dist(nodes[j]);
                    adj[i].push((j, d));
                    adj[j].push((i, d));
                }
            }
        }
        Self {
            nodes,
            adj,
            clearance,
        }
    }

    /// Shortest path from `a` to `b` as (length, polyline including both ends).
    pub fn shortest_path(&self, plan: &FloorPlan, a: Point, b: Point) -> Option<(f64, Vec<Point>)> {
        if a.dist(b) == 0.0 {
            return Some((0.0, vec![a]));
        }
        if plan.visible(a, b) {
            return Some((a.dist(b), vec![a, b]));
        }
        let n = self.nodes.len();
        let (src, dst) = (n, n + 1);
        let from_a: Vec<(usize, f64)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| plan.visible(a, **p))
            .map(|(i, p)| (i, a.dist(*p)))
            .collect();
        let to_b: Vec<Option<f64>> = self
            .nodes
            .iter()
            .map(|p| plan.visible(*p, b).then(|| p.dist(b)))
            .collect();

        let mut dist = vec![f64::INFINITY; n + 2];
        let mut prev = vec![usize::MAX; n + 2];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(QueueItem(0.0, src));
        while let Some(QueueItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == dst {
                break;
            }
            let mut relax = |v: usize, w: f64, heap: &mut BinaryHeap<QueueItem>| {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(QueueItem(nd, v));
                }
            };
            if u == src {
                for &(v, w) in &from_a {
                    relax(v, w, &mut heap);
                }
            } else {
                for &(v, w) in &self.adj[u] {
                    relax(v, w, &mut heap);
                }
                if let Some(w) = to_b[u] {
                    relax(dst, w, &mut heap);
                }
            }
        }
        if !dist[dst].is_finite() {
            return None;
        }
        let mut path = vec![b];
        let mut cur = prev[dst];
        while cur != src {
            path.push(self.nodes[cur]);
            cur = prev[cur];
        }
        path.push(a);
        path.reverse();
        Some((dist[dst], path))
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }
}

fn clear_line(plan: &FloorPlan, a: Point, b: Point, clearance: f64) -> bool {
    if !plan.visible(a, b) {
        return false;
    }
    if clearance <= 0.0 {
        return true;
    }
    let s = Segment::new(a, b);
    plan.walls.iter().all(|w| {
        s.distance_to(w.a) >= clearance
            && s.distance_to(w.b) >= clearance
            && w.distance_to(a) >= clearance
            && w.distance_to(b) >= clearance
    })
}
