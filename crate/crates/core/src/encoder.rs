//! Grouped momentum contrastive encoder.
//!
//! A perceptron maps a flattened observation (depth normalized by the max
//! range, then the appearance channels) to an L2-normalized feature. Training
//! combines an instance-level InfoNCE term over (anchor, positive, in-batch
//! and explicit negatives) with a group-level term: the anchor's softmax over
//! K momentum-updated group centers is pulled toward the center its positive
//! is closest to. Centers drift toward their assigned members by momentum
//! and are renormalized after every step.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grouping::ClusterBank;
use crate::nn::{softmax_rows, Activation, Adam, Mlp};
use crate::weights::{ModelKind, Tensor, WeightFile};
use crate::world::{procgen::random_unit, Observation};
use crate::{Error, Result};

/// L2-normalized embedding of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec {
    pub values: Vec<f64>,
}

impl FeatureVec {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub rays: usize,
    pub app_channels: usize,
    pub max_range: f64,
    pub feat_dim: usize,
    pub hidden: Vec<usize>,
    pub groups: usize,
    pub momentum: f64,
    pub temperature: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            rays: 128,
            app_channels: 3,
            max_range: 10.0,
            feat_dim: 32,
            hidden: vec![64, 64],
            groups: 8,
            momentum: 0.99,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub mlp: Mlp,
    /// `K × D_feat`, unit rows.
    pub centers: Array2<f64>,
    pub momentum: f64,
    pub temperature: f64,
    pub max_range: f64,
    pub rays: usize,
    pub app_channels: usize,
}

/// Flattened encoder input: `depth / max_range` followed by appearance.
pub fn flatten_observation(obs: &Observation, max_range: f64) -> Vec<f64> {
    obs.depth
        .iter()
        .map(|d| d / max_range)
        .chain(obs.appearance.iter().copied())
        .collect()
}

fn normalize_rows(u: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let mut f = u.clone();
    for (mut row, n) in f.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    (f, norms)
}

/// Per-step loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveLoss {
    pub instance: f64,
    pub group: f64,
}

impl ContrastiveLoss {
    pub fn total(&self) -> f64 {
        self.instance + self.group
    }
}

impl EncoderNet {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![cfg.rays * (1 + cfg.app_channels)];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.feat_dim);
        let mlp = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, &mut rng);
        let mut centers = Array2::zeros((cfg.groups, cfg.feat_dim));
        for mut row in centers.rows_mut() {
            row.assign(&Array1::from(random_unit(&mut rng, cfg.feat_dim)));
        }
        Self {
            mlp,
            centers,
            momentum: cfg.momentum,
            temperature: cfg.temperature,
            max_range: cfg.max_range,
            rays: cfg.rays,
            app_channels: cfg.app_channels,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn feat_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn flatten(&self, obs: &Observation) -> Result<Vec<f64>> {
        let x = flatten_observation(obs, self.max_range);
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(x)
    }

    pub fn inputs(&self, frames: &[&Observation]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((frames.len(), self.input_dim()));
        for (mut row, obs) in x.rows_mut().into_iter().zip(frames) {
            row.assign(&Array1::from(self.flatten(obs)?));
        }
        Ok(x)
    }

    /// Normalized features for a batch of flattened inputs.
    pub fn features(&self, x: &Array2<f64>) -> Array2<f64> {
        normalize_rows(&self.mlp.forward(x)).0
    }

    pub fn encode(&self, obs: &Observation) -> Result<FeatureVec> {
        let x = Array2::from_shape_vec((1, self.input_dim()), self.flatten(obs)?)
            .expect("row length checked by flatten");
        Ok(FeatureVec {
            values: self.features(&x).row(0).to_vec(),
        })
    }

    /// Center each positive is closest to (its group assignment).
    fn assignments(&self, fp: &Array2<f64>) -> Vec<usize> {
        let sims = fp.dot(&self.centers.t());
        sims.rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Loss, flat parameter gradient and the positives' group assignments.
    pub fn loss_and_grad(
        &self,
        anchors: &Array2<f64>,
        positives: &Array2<f64>,
        negatives: &Array2<f64>,
    ) -> (ContrastiveLoss, Vec<f64>, Vec<usize>) {
        let b = anchors.nrows();
        let m = negatives.nrows();
        assert!(b > 0, "contrastive batch must be nonempty");
        assert_eq!(positives.nrows(), b);
        let x = ndarray::concatenate(Axis(0), &[anchors.view(), positives.view(), negatives.view()])
            .expect("matching input widths");
        let (u, cache) = self.mlp.forward_cached(&x);
        let (f, norms) = normalize_rows(&u);
        let fa = f.slice(s![..b, ..]);
        let candidates = f.slice(s![b.., ..]); // positives then negatives
        let tau = self.temperature;

        // instance term: row i's target is candidate i
        let logits = fa.dot(&candidates.t()) / tau;
        let probs = softmax_rows(&logits);
        let mut instance = 0.0;
        let mut d_logits = probs.clone();
        for i in 0..b {
            instance -= probs[[i, i]].max(1e-300).ln();
            d_logits[[i, i]] -= 1.0;
        }
        instance /= b as f64;
        d_logits /= b as f64;

        // group term against the positives' hard assignments
        let fp = f.slice(s![b..2 * b, ..]).to_owned();
        let targets = self.assignments(&fp);
        let g_logits = fa.dot(&self.centers.t()) / tau;
        let g_probs = softmax_rows(&g_logits);
        let mut group = 0.0;
        let mut d_g = g_probs.clone();
        for (i, &t) in targets.iter().enumerate() {
            group -= g_probs[[i, t]].max(1e-300).ln();
            d_g[[i, t]] -= 1.0;
        }
        group /= b as f64;
        d_g /= b as f64;

        let mut d_f = Array2::zeros(f.raw_dim());
        {
            let d_fa = d_logits.dot(&candidates) / tau + d_g.dot(&self.centers) / tau;
            d_f.slice_mut(s![..b, ..]).assign(&d_fa);
            let d_c = d_logits.t().dot(&fa) / tau;
            d_f.slice_mut(s![b.., ..]).assign(&d_c);
        }
        // back through row normalization: (g - f (f·g)) / |u|
        let mut d_u = d_f;
        for i in 0..(2 * b + m) {
            let fr = f.row(i);
            let proj = fr.dot(&d_u.row(i));
            let n = norms[i];
            let mut row = d_u.row_mut(i);
            row.zip_mut_with(&fr, |g, &fv| *g = (*g - fv * proj) / n);
        }
        let (grad, _) = self.mlp.backward(&cache, &d_u);
        (ContrastiveLoss { instance, group }, grad, targets)
    }

    /// One optimizer step followed by the momentum update of the centers.
    pub fn contrastive_step(
        &mut self,
        opt: &mut Adam,
        anchors: &Array2<f64>,
        positives: &Array2<f64>,
        negatives: &Array2<f64>,
    ) -> ContrastiveLoss {
        let (loss, grad, targets) = self.loss_and_grad(anchors, positives, negatives);
        let mut params = self.mlp.params();
        opt.step(&mut params, &grad);
        self.mlp.set_params(&params);

        let fp = self.features(positives);
        let k = self.centers.nrows();
        let mut sums = Array2::<f64>::zeros(self.centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &t) in targets.iter().enumerate() {
            counts[t] += 1;
            let mut row = sums.row_mut(t);
            row += &fp.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|v| v / count as f64);
            let mut center = self.centers.row_mut(c);
            let updated = &center * self.momentum + &mean * (1.0 - self.momentum);
            let n = updated.dot(&updated).sqrt();
            if n > 1e-12 {
                center.assign(&(updated / n));
            }
        }
        loss
    }

    pub fn to_weights(&self) -> WeightFile {
        let mut tensors = self.mlp.to_tensors();
        tensors.push(Tensor::new(
            vec![self.centers.nrows() as u32, self.centers.ncols() as u32],
            self.centers.iter().copied().collect(),
        ));
        WeightFile::new(
            ModelKind::Encoder,
            0,
            vec![
                self.momentum,
                self.temperature,
                self.max_range,
                self.rays as f64,
                self.app_channels as f64,
            ],
            tensors,
        )
    }

    pub fn from_weights(file: WeightFile) -> Result<Self> {
        let file = file.expect_kind(ModelKind::Encoder)?;
        let [momentum, temperature, max_range, rays, app_channels] = file.meta[..] else {
            return Err(Error::format("encoder metadata has wrong length"));
        };
        let (centers_t, layers) = file
            .tensors
            .split_last()
            .ok_or_else(|| Error::format("encoder has no tensors"))?;
        let mlp = Mlp::from_tensors(layers)?;
        let (k, d) = match centers_t.shape.as_slice() {
            [k, d] => (*k as usize, *d as usize),
            _ => return Err(Error::format("centers tensor must be 2-D")),
        };
        if d != mlp.output_dim() {
            return Err(Error::format("centers width differs from feature dim"));
        }
        Ok(Self {
            mlp,
            centers: Array2::from_shape_vec((k, d), centers_t.data.clone())
                .map_err(|e| Error::format(e.to_string()))?,
            momentum,
            temperature,
            max_range,
            rays: rays as usize,
            app_channels: app_channels as usize,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 16,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// One trajectory's frames (as rows of a shared input matrix) and its clusters.
#[derive(Debug, Clone)]
pub struct TrainingTrajectory {
    pub offset: usize,
    pub bank: ClusterBank,
}

/// Train on positive pairs drawn from per-trajectory clusters. Negatives are
/// frames from clusters not represented in the batch. Returns mean loss per epoch.
pub fn train_encoder(
    net: &mut EncoderNet,
    inputs: &Array2<f64>,
    trajectories: &[TrainingTrajectory],
    opts: &EncoderTraining,
) -> Result<Vec<f64>> {
    let usable: Vec<&TrainingTrajectory> = trajectories.iter().filter(|t| !t.bank.eligible().is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    // (global frame, trajectory index, cluster id)
    let labels: Vec<(usize, usize, usize)> = trajectories
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| t.bank.assignments.iter().enumerate().map(move |(f, &k)| (t.offset + f, ti, k)))
        .collect();
    let index_of = |t: &TrainingTrajectory| trajectories.iter().position(|x| std::ptr::eq(x, t)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = Adam::new(opts.lr, net.mlp.num_params());
    let steps = (labels.len() / (2 * opts.batch)).max(1);
    let mut history = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let mut used: Vec<(usize, usize)> = Vec::with_capacity(opts.batch);
            let mut pairs = Vec::with_capacity(opts.batch);
            let mut attempts = 0;
            while pairs.len() < opts.batch && attempts < opts.batch * 20 {
                attempts += 1;
                let traj = usable.choose(&mut rng).unwrap();
                let (a, p) = traj.bank.sample_positive_pair_with(&mut rng)?;
                let key = (index_of(traj), traj.bank.assignments[a]);
                if used.contains(&key) {
                    continue;
                }
                used.push(key);
                pairs.push((traj.offset + a, traj.offset + p));
            }
            let mut negatives = Vec::with_capacity(opts.batch);
            while negatives.len() < opts.batch {
                let (f, ti, k) = labels[rng.gen_range(0..labels.len())];
                if !used.contains(&(ti, k)) {
                    negatives.push(f);
                }
            }
            let xa = inputs.select(Axis(0), &pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let xp = inputs.select(Axis(0), &pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let xn = inputs.select(Axis(0), &negatives);
            total += net.contrastive_step(&mut opt, &xa, &xp, &xn).total();
        }
        history.push(total / steps as f64);
    }
    Ok(history)
}
