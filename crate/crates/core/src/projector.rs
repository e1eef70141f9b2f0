//! Isomap embedding of training features and the imitator that reproduces it.
//!
//! `fit_isomap` builds a symmetric k-NN graph over feature distance, bridges
//! disconnected components through their closest cross pair, runs Dijkstra
//! from every node and reduces the squared geodesics to 2D by classical MDS.
//! The imitator is a two-layer ReLU perceptron regressing features onto those
//! coordinates so unseen observations land in the same frame.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::FeatureVec;
use crate::nn::{Activation, Adam, Mlp};
use crate::weights::{ModelKind, Tensor, WeightFile};
use crate::world::Pose;
use crate::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct IsomapModel {
    pub features: Array2<f64>,
    /// `N × 2`, centered.
    pub embedding: Array2<f64>,
    /// Top two MDS eigenvalues, descending and nonnegative.
    pub eigenvalues: [f64; 2],
    pub k: usize,
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric k-NN adjacency lists, with components bridged.
pub fn knn_graph(features: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = features.nrows();
    let dist = |i: usize, j: usize| euclid(features.row(i), features.row(j));
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let add = |adj: &mut Vec<Vec<(usize, f64)>>, i: usize, j: usize, d: f64| {
        if !adj[i].iter().any(|e| e.0 == j) {
            adj[i].push((j, d));
            adj[j].push((i, d));
        }
    };
    let near: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, dist(i, j))).collect();
            others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            others.truncate(k);
            others
        })
        .collect();
    for (i, list) in near.iter().enumerate() {
        for &(j, d) in list {
            add(&mut adj, i, j, d);
        }
    }
    loop {
        let comp = components(&adj);
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        // closest pair between component 0 and anything else
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in (0..n).filter(|&i| comp[i] == 0) {
            for j in (0..n).filter(|&j| comp[j] != 0) {
                let d = dist(i, j);
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        add(&mut adj, best.0, best.1, best.2);
    }
    for list in &mut adj {
        list.sort_by_key(|e| e.0);
    }
    adj
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for s in 0..adj.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, source)]);
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    dist
}

/// All-pairs graph geodesics over the bridged k-NN graph.
pub fn geodesic_matrix(features: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = features.nrows();
    let adj = knn_graph(features, k);
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(&adj, s)).collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// `-1/2 J D² J` with `J` the centering matrix.
pub fn double_center(geodesic: &Array2<f64>) -> Array2<f64> {
    let sq = geodesic.mapv(|d| d * d);
    let row_mean = sq.mean_axis(Axis(1)).unwrap();
    let col_mean = sq.mean_axis(Axis(0)).unwrap();
    let all = sq.mean().unwrap();
    Array2::from_shape_fn(sq.raw_dim(), |(i, j)| -0.5 * (sq[[i, j]] - row_mean[i] - col_mean[j] + all))
}

fn sign_normalize(v: &mut Array1<f64>) {
    let mut pivot = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[pivot].abs() + 1e-12 {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

fn power_iteration(m: &Array2<f64>, seed: u64) -> (f64, Array1<f64>) {
    let n = m.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array1::from(crate::world::procgen::random_unit(&mut rng, n));
    for _ in 0..20_000 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm < 1e-300 {
            return (0.0, v);
        }
        let next = &w / norm;
        let delta = (&next - &v).mapv(f64::abs).sum().min((&next + &v).mapv(f64::abs).sum());
        v = next;
        if delta < 1e-14 * n as f64 {
            break;
        }
    }
    (v.dot(&m.dot(&v)), v)
}

/// Largest algebraic eigenpair of a symmetric matrix by power iteration,
/// shifting when the dominant magnitude belongs to a negative eigenvalue.
pub fn top_eigenpair(m: &Array2<f64>, seed: u64) -> (f64, Array1<f64>) {
    let (lambda, v) = power_iteration(m, seed);
    let (lambda, mut v) = if lambda < 0.0 {
        let shift = lambda.abs();
        let shifted = m + &(Array2::<f64>::eye(m.nrows()) * shift);
        let (mu, v) = power_iteration(&shifted, seed.wrapping_add(1));
        (mu - shift, v)
    } else {
        (lambda, v)
    };
    sign_normalize(&mut v);
    (lambda, v)
}

/// Top-`count` eigenpairs by power iteration with deflation.
pub fn top_eigenpairs(m: &Array2<f64>, count: usize) -> Vec<(f64, Array1<f64>)> {
    let mut work = m.clone();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (lambda, v) = top_eigenpair(&work, 17 + i as u64);
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        work = work - outer * lambda;
        out.push((lambda, v));
    }
    out
}

pub fn fit_isomap(features: &Array2<f64>, k: usize) -> Result<IsomapModel> {
    let n = features.nrows();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if k == 0 {
        return Err(Error::Config("isomap needs k >= 1".into()));
    }
    let b = double_center(&geodesic_matrix(features, k.min(n - 1)));
    let pairs = top_eigenpairs(&b, 2);
    let mut embedding = Array2::zeros((n, 2));
    let mut eigenvalues = [0.0; 2];
    for (c, (lambda, v)) in pairs.iter().enumerate() {
        let lambda = lambda.max(0.0);
        eigenvalues[c] = lambda;
        embedding.column_mut(c).assign(&(v * lambda.sqrt()));
    }
    // exact centering; the eigenvectors are orthogonal to ones up to round-off
    let mean = embedding.mean_axis(Axis(0)).unwrap();
    embedding -= &mean;
    Ok(IsomapModel {
        features: features.clone(),
        embedding,
        eigenvalues,
        k,
    })
}

impl IsomapModel {
    /// Largest pairwise distance between embedding rows.
    pub fn diameter(&self) -> f64 {
        let e = &self.embedding;
        let mut best: f64 = 0.0;
        for i in 0..e.nrows() {
            for j in i + 1..e.nrows() {
                best = best.max(euclid(e.row(i), e.row(j)));
            }
        }
        best
    }

    pub fn to_weights(&self) -> WeightFile {
        let f = &self.features;
        WeightFile::new(
            ModelKind::Isomap,
            0,
            vec![self.k as f64, self.eigenvalues[0], self.eigenvalues[1]],
            vec![
                Tensor::new(vec![f.nrows() as u32, f.ncols() as u32], f.iter().copied().collect()),
                Tensor::new(vec![f.nrows() as u32, 2], self.embedding.iter().copied().collect()),
            ],
        )
    }

    pub fn from_weights(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(ModelKind::Isomap)?;
        let [k, l0, l1] = file.meta[..] else {
            return Err(Error::format("isomap metadata has wrong length"));
        };
        let [f, e] = &file.tensors[..] else {
            return Err(Error::format("isomap needs two tensors"));
        };
        let matrix = |t: &Tensor| -> Result<Array2<f64>> {
            match t.shape[..] {
                [r, c] => Array2::from_shape_vec((r as usize, c as usize), t.data.clone())
                    .map_err(|e| Error::format(e.to_string())),
                _ => Err(Error::format("isomap tensors must be 2-D")),
            }
        };
        Ok(Self {
            features: matrix(f)?,
            embedding: matrix(e)?,
            eigenvalues: [l0, l1],
            k: k as usize,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitatorNet {
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct ImitatorTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ImitatorTraining {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 1e-3,
            batch: 32,
            hidden: 64,
            seed: 0,
        }
    }
}

impl ImitatorNet {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mlp: Mlp::new(&[input, hidden, 2], Activation::Relu, Activation::Identity, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Mean squared error (over both coordinates) and its parameter gradient.
    pub fn mse_and_grad(&self, x: &Array2<f64>, y: &Array2<f64>) -> (f64, Vec<f64>) {
        let (out, cache) = self.mlp.forward_cached(x);
        let diff = &out - y;
        let count = diff.len() as f64;
        let loss = diff.mapv(|v| v * v).sum() / count;
        let (grad, _) = self.mlp.backward(&cache, &(diff * (2.0 / count)));
        (loss, grad)
    }

    pub fn rmse(&self, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let diff = self.mlp.forward(x) - y;
        (diff.mapv(|v| v * v).sum() / x.nrows() as f64).sqrt()
    }

    pub fn project_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        self.mlp.forward(x)
    }

    pub fn to_weights(&self) -> WeightFile {
        WeightFile::new(ModelKind::Imitator, 0, Vec::new(), self.mlp.to_tensors())
    }

    pub fn from_weights(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(ModelKind::Imitator)?;
        let mlp = Mlp::from_tensors(&file.tensors)?;
        if mlp.layers.len() != 2 || mlp.output_dim() != 2 {
            return Err(Error::format("imitator must be a two-layer net with 2 outputs"));
        }
        Ok(Self { mlp })
    }
}

/// Fit the imitator to an isomap embedding. Returns the net and final RMSE
/// (root mean squared Euclidean error per point).
pub fn train_imitator(model: &IsomapModel, opts: &ImitatorTraining) -> (ImitatorNet, f64) {
    let x = &model.features;
    let y = &model.embedding;
    let mut net = ImitatorNet::new(x.ncols(), opts.hidden, opts.seed);
    let mut opt = Adam::new(opts.lr, net.mlp.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1317);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let batch = opts.batch.max(1);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let (_, grad) = net.mse_and_grad(&xb, &yb);
            let mut params = net.mlp.params();
            opt.step(&mut params, &grad);
            net.mlp.set_params(&params);
        }
    }
    let rmse = net.rmse(x, y);
    (net, rmse)
}

pub fn project(net: &ImitatorNet, f: &FeatureVec) -> Result<[f64; 2]> {
    if f.dim() != net.input_dim() {
        return Err(Error::Shape {
            expected: net.input_dim(),
            actual: f.dim(),
        });
    }
    let x = Array2::from_shape_vec((1, f.dim()), f.values.clone()).expect("length checked");
    let out = net.mlp.forward(&x);
    Ok([out[[0, 0]], out[[0, 1]]])
}

/// Feature MSE and pose distance matrices with their Spearman correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub feature: Array2<f64>,
    pub pose: Array2<f64>,
    pub spearman: f64,
}

pub fn distance_matrix_report(features: &[FeatureVec], poses: &[Pose]) -> Result<DistanceReport> {
    if features.len() != poses.len() {
        return Err(Error::Shape {
            expected: features.len(),
            actual: poses.len(),
        });
    }
    let n = features.len();
    let feature = Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (&features[i].values, &features[j].values);
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
    });
    let pose = Array2::from_shape_fn((n, n), |(i, j)| poses[i].position().dist(poses[j].position()));
    let mut fa = Vec::new();
    let mut pa = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            fa.push(feature[[i, j]]);
            pa.push(pose[[i, j]]);
        }
    }
    Ok(DistanceReport {
        spearman: spearman(&fa, &pa),
        feature,
        pose,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties; 0 for constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
