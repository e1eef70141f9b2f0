//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use feudalnav_core::projector::knn_graph;
use feudalnav_core::{FloorPlan, Point};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_features(seed: u64, n: usize, dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0))
}

/// All-pairs shortest paths over the same k-NN edge set, by Floyd–Warshall.
pub fn floyd_warshall(features: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = features.nrows();
    let adj = knn_graph(features, k);
    let mut d = Array2::from_elem((n, n), f64::INFINITY);
    for i in 0..n {
        d[[i, i]] = 0.0;
        for &(j, w) in &adj[i] {
            d[[i, j]] = w;
        }
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[[i, m]] + d[[m, j]];
                if via < d[[i, j]] {
                    d[[i, j]] = via;
                }
            }
        }
    }
    d
}

/// Full spectrum, descending.
pub fn dense_eigen(b: &Array2<f64>) -> Vec<(f64, Vec<f64>)> {
    let n = b.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| b[[i, j]]));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    idx.iter()
        .map(|&i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect()
}

pub fn grid_5x5() -> Array2<f64> {
    Array2::from_shape_fn((25, 2), |(i, c)| if c == 0 { (i % 5) as f64 } else { (i / 5) as f64 })
}

/// RMS point error after the best similarity transform mapping `x` onto `y`.
pub fn procrustes_residual(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let xm = x.mean_axis(ndarray::Axis(0)).unwrap();
    let ym = y.mean_axis(ndarray::Axis(0)).unwrap();
    let xc = DMatrix::from_fn(n, 2, |i, j| x[[i, j]] - xm[j]);
    let yc = DMatrix::from_fn(n, 2, |i, j| y[[i, j]] - ym[j]);
    let svd = (xc.transpose() * &yc).svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    let scale = svd.singular_values.sum() / xc.norm_squared();
    let fitted = &xc * r * scale;
    ((fitted - yc).norm_squared() / n as f64).sqrt()
}

/// Truncated unit gaussian mass by walking every cell of a generous box.
pub fn gaussian_mass_oracle(sigma: f64, cutoff: f64) -> f64 {
    let reach = (cutoff.ceil() as i64) + 2;
    let mut sum = 0.0;
    for dx in -reach..=reach {
        for dy in -reach..=reach {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2.sqrt() <= cutoff + 1e-12 {
                sum += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    sum
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Lattice shortest paths: nodes every `h` metres, 16-connected, edges kept
/// when the straight segment crosses no wall. Overestimates true geodesics
/// by at most about 3% plus a few cells.
pub struct GridGeodesic<'a> {
    plan: &'a FloorPlan,
    h: f64,
    cols: usize,
    nodes: Vec<Point>,
    adj: Vec<Vec<(usize, f64)>>,
}

const MOVES: [(i64, i64); 16] = [
    (1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1),
    (2, 1), (1, 2), (-1, 2), (-2, 1), (-2, -1), (-1, -2), (1, -2), (2, -1),
];

impl<'a> GridGeodesic<'a> {
    pub const SLACK_FACTOR: f64 = 1.03;

    pub fn new(plan: &'a FloorPlan, h: f64) -> Self {
        let b = plan.bounds;
        let cols = (b.width() / h).floor() as usize;
        let rows = (b.height() / h).floor() as usize;
        let at = |c: i64, r: i64| Point::new(b.min.x + (c as f64 + 0.5) * h, b.min.y + (r as f64 + 0.5) * h);
        let nodes: Vec<Point> = (0..rows as i64).flat_map(|r| (0..cols as i64).map(move |c| at(c, r))).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                let i = (r * cols as i64 + c) as usize;
                for (dc, dr) in MOVES {
                    let (c2, r2) = (c + dc, r + dr);
                    if c2 < 0 || r2 < 0 || c2 >= cols as i64 || r2 >= rows as i64 {
                        continue;
                    }
                    let j = (r2 * cols as i64 + c2) as usize;
                    if plan.visible(nodes[i], nodes[j]) {
                        adj[i].push((j, nodes[i].dist(nodes[j])));
                    }
                }
            }
        }
        Self { plan, h, cols, nodes, adj }
    }

    fn attach(&self, p: Point) -> Vec<(usize, f64)> {
        let b = self.plan.bounds;
        let (c0, r0) = (((p.x - b.min.x) / self.h) as i64, ((p.y - b.min.y) / self.h) as i64);
        let mut out = Vec::new();
        for r in r0 - 2..=r0 + 2 {
            for c in c0 - 2..=c0 + 2 {
                if c < 0 || r < 0 || c >= self.cols as i64 {
                    continue;
                }
                let i = (r * self.cols as i64 + c) as usize;
                if i < self.nodes.len() && self.plan.visible(p, self.nodes[i]) {
                    out.push((i, p.dist(self.nodes[i])));
                }
            }
        }
        out
    }

    /// `None` when either end cannot reach the lattice or no path exists.
    pub fn distance(&self, a: Point, b: Point) -> Option<f64> {
        if self.plan.visible(a, b) {
            return Some(a.dist(b));
        }
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        for (i, d) in self.attach(a) {
            if d < dist[i] {
                dist[i] = d;
                heap.push(Item(d, i));
            }
        }
        while let Some(Item(d, i)) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            for &(j, w) in &self.adj[i] {
                if d + w < dist[j] {
                    dist[j] = d + w;
                    heap.push(Item(d + w, j));
                }
            }
        }
        self.attach(b).into_iter().map(|(i, d)| dist[i] + d).filter(|d| d.is_finite()).min_by(f64::total_cmp)
    }

    /// Lower and upper bounds on the true geodesic implied by a lattice value.
    pub fn bracket(&self, lattice: f64) -> (f64, f64) {
        ((lattice - 6.0 * self.h) / Self::SLACK_FACTOR, lattice + 1e-2)
    }
}
