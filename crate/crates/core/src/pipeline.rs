//! End-to-end training: grouping, encoder, isomap projector, waynets, worker.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentModels};
use crate::collector::collect_demo;
use crate::config::Config;
use crate::demos::DemoTrajectory;
use crate::encoder::{train_encoder, EncoderNet, FeatureVec, TrainingTrajectory};
use crate::grouping::build_clusters;
use crate::hlm::Hlm;
use crate::mpm::{MapVariant, DENSITY_RADIUS};
use crate::projector::{fit_isomap, train_imitator, ImitatorNet, IsomapModel};
use crate::waynet::{train_waynet, InputVariant, WayNetDataset, WayNetModel};
use crate::weights::WeightFile;
use crate::worker::{train_worker, worker_accuracy, WorkerDataset, WorkerKind, WorkerModel};
use crate::{Error, Result};

/// One row of the ablation grid.
pub type Variant = (MapVariant, InputVariant, WorkerKind);

/// Rows of the ablation table, in table order.
pub fn ablation_grid() -> Vec<Variant> {
    use InputVariant::*;
    use MapVariant::*;
    use WorkerKind::*;
    vec![
        (None, Rgb, Det),
        (None, Rgbd, Det),
        (None, Rgbd3, Det),
        (C, RgbdM, Det),
        (C, Rgbd3M, Det),
        (A, RgbdM, Det),
        (A, Rgbd3M, Det),
        (H, RgbdM, Det),
        (H, Rgbd3M, Det),
        (H, RgbdM, Cl),
        (H, Rgbd3M, Cl),
    ]
}

/// Waynet key: map-free variants are trained once, under `MapVariant::None`.
pub fn waynet_key(map: MapVariant, input: InputVariant) -> (InputVariant, MapVariant) {
    if input.uses_map() {
        (input, map)
    } else {
        (input, MapVariant::None)
    }
}

/// Scripted demos over the configured training plans.
pub fn collect_corpus(cfg: &Config) -> Result<Vec<DemoTrajectory>> {
    let collector = cfg.collector();
    let mut demos = Vec::new();
    for (pi, plan) in cfg.train_suite().iter().enumerate() {
        for d in 0..cfg.demos_per_plan {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((pi * 97 + d) as u64);
            demos.push(collect_demo(plan, seed, &collector)?);
        }
    }
    Ok(demos)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub demos: usize,
    pub frames: usize,
    pub clusters: usize,
    pub encoder_loss: Vec<f64>,
    pub isomap_points: usize,
    pub imitator_rmse: f64,
    pub isomap_diameter: f64,
    pub resolution: f64,
    pub waynet_loss: BTreeMap<String, f64>,
    pub waynet_accuracy: BTreeMap<String, f64>,
    pub worker_loss: f64,
    pub worker_accuracy: f64,
}

/// The grouping → encoder → isomap → imitator half of training.
pub fn train_hlm(cfg: &Config, demos: &[DemoTrajectory], report: &mut TrainReport) -> Result<(Hlm, IsomapModel)> {
    let frames: Vec<_> = demos.iter().flat_map(|d| d.frames.iter().map(|f| &f.observation)).collect();
    if frames.is_empty() {
        return Err(Error::NoData("no demo frames".into()));
    }
    let mut trajectories = Vec::new();
    let mut offset = 0;
    for d in demos {
        let obs: Vec<_> = d.frames.iter().map(|f| f.observation.clone()).collect();
        let bank = build_clusters(&obs, cfg.alpha_c)?;
        report.clusters += bank.len();
        trajectories.push(TrainingTrajectory { offset, bank });
        offset += obs.len();
    }
    let mut encoder = EncoderNet::new(&cfg.encoder(), cfg.seed);
    let inputs = encoder.inputs(&frames)?;
    report.demos = demos.len();
    report.frames = frames.len();
    report.encoder_loss = train_encoder(&mut encoder, &inputs, &trajectories, &cfg.encoder_training())?;
    info!(
        "encoder: {} frames, {} clusters, final loss {:.4}",
        frames.len(),
        report.clusters,
        report.encoder_loss.last().copied().unwrap_or(f64::NAN)
    );

    let features = encoder.features(&inputs);
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    if order.len() > cfg.isomap_points {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x150));
        order.truncate(cfg.isomap_points);
        order.sort_unstable();
    }
    let subset = features.select(Axis(0), &order);
    let isomap = fit_isomap(&subset, cfg.isomap_k)?;
    let (imitator, rmse) = train_imitator(&isomap, &cfg.imitator_training());
    report.isomap_points = order.len();
    report.imitator_rmse = rmse;
    report.isomap_diameter = isomap.diameter();
    info!("isomap: {} points, imitator rmse {:.4} (diameter {:.4})", order.len(), rmse, isomap.diameter());

    let latents = imitator.project_rows(&features);
    let resolution = latent_resolution(&latents, demos);
    report.resolution = resolution;
    Ok((Hlm::new(encoder, imitator, resolution), isomap))
}

/// Median latent displacement between consecutive frames of the same demo;
/// one typical step then spans about one map cell.
fn latent_resolution(latents: &Array2<f64>, demos: &[DemoTrajectory]) -> f64 {
    let mut steps = Vec::new();
    let mut offset = 0;
    for d in demos {
        for i in 1..d.frames.len() {
            let (a, b) = (latents.row(offset + i - 1), latents.row(offset + i));
            let s = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            if s > 0.0 {
                steps.push(s);
            }
        }
        offset += d.frames.len();
    }
    if steps.is_empty() {
        return 0.05;
    }
    steps.sort_by(f64::total_cmp);
    steps[steps.len() / 2].max(1e-6)
}

/// Density percentile seen while replaying the demos through the map.
pub fn exploration_threshold(hlm: &Hlm, demos: &[DemoTrajectory], map: MapVariant, alpha_c: f64, percentile: f64) -> Result<f64> {
    let mut densities = Vec::new();
    for d in demos {
        let mut memory = hlm.memory(map, alpha_c);
        for f in &d.frames {
            let p = hlm.latent(&f.observation)?;
            memory.observe(p, &f.observation);
            densities.push(memory.grid.exploration_density(p, DENSITY_RADIUS));
        }
    }
    if densities.is_empty() {
        return Err(Error::NoData("no frames to calibrate exploration".into()));
    }
    densities.sort_by(f64::total_cmp);
    let idx = ((percentile / 100.0) * (densities.len() - 1) as f64).round() as usize;
    Ok(densities[idx])
}

/// Everything an agent needs, for every trained variant.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub hlm: Hlm,
    pub isomap: Option<IsomapModel>,
    pub waynets: BTreeMap<(InputVariant, MapVariant), WayNetModel>,
    pub worker: WorkerModel,
    pub rho_explore: BTreeMap<MapVariant, f64>,
    pub explore: bool,
    pub report: TrainReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    resolution: f64,
    explore: bool,
    rho_explore: BTreeMap<String, f64>,
    waynets: Vec<String>,
    report: TrainReport,
}

fn waynet_file(input: InputVariant, map: MapVariant) -> String {
    format!("waynet-{}-{}.fnvw", input.code(), map.code())
}

/// Train every model needed to run `variants`.
pub fn train(cfg: &Config, demos: &[DemoTrajectory], variants: &[Variant]) -> Result<TrainedModels> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    let (hlm, isomap) = train_hlm(cfg, demos, &mut report)?;

    let mut keys: Vec<(InputVariant, MapVariant)> = variants.iter().map(|&(m, i, _)| waynet_key(m, i)).collect();
    keys.sort();
    keys.dedup();
    let mut waynets = BTreeMap::new();
    for (input, map) in keys {
        let data = WayNetDataset::from_demos(demos, input, map, Some(&hlm), cfg.max_range)?;
        let (model, loss) = train_waynet(&data, input, map, cfg.max_range, &cfg.waynet_training())?;
        let label = format!("{map}/{input}");
        let acc = model.accuracy(&data);
        info!("waynet {label}: loss {loss:.4}, accuracy {acc:.3}");
        report.waynet_loss.insert(label.clone(), loss);
        report.waynet_accuracy.insert(label, acc);
        waynets.insert((input, map), model);
    }

    let mut rho_explore = BTreeMap::new();
    let mut maps: Vec<MapVariant> = variants.iter().map(|v| v.0).filter(|&m| m != MapVariant::None).collect();
    maps.sort();
    maps.dedup();
    for map in maps {
        let rho = exploration_threshold(&hlm, demos, map, cfg.alpha_c, cfg.explore_percentile)?;
        info!("map {map}: exploration threshold {rho:.4}");
        rho_explore.insert(map, rho);
    }

    let wdata = WorkerDataset::from_demos(demos, cfg.max_range)?;
    let (worker, wloss) = train_worker(&wdata, cfg.max_range, &cfg.worker_training())?;
    report.worker_loss = wloss;
    report.worker_accuracy = worker_accuracy(&worker, &wdata);
    info!("worker: loss {wloss:.4}, accuracy {:.3}", report.worker_accuracy);

    Ok(TrainedModels {
        hlm,
        isomap: Some(isomap),
        waynets,
        worker,
        rho_explore,
        explore: cfg.explore,
        report,
    })
}

impl TrainedModels {
    /// Agent settings for one variant, with the calibrated exploration threshold.
    pub fn agent_config(&self, cfg: &Config, variant: Variant) -> Result<AgentConfig> {
        let mut a = cfg.agent()?;
        a.map = variant.0;
        a.waynet = variant.1;
        a.worker = variant.2;
        a.rho_explore = if self.explore { self.rho_explore.get(&variant.0).copied() } else { None };
        Ok(a)
    }

    pub fn agent_models(&self, config: &AgentConfig) -> Result<AgentModels<'_>> {
        let key = waynet_key(config.map, config.waynet);
        let waynet = self
            .waynets
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no waynet trained for {}/{}", key.1, key.0)))?;
        let hlm = (config.map != MapVariant::None).then_some(&self.hlm);
        let worker = (config.worker == WorkerKind::Cl).then_some(&self.worker);
        Ok(AgentModels::new(hlm, waynet, worker))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.hlm.encoder.to_weights().save(&dir.join("encoder.fnvw"))?;
        self.hlm.imitator.to_weights().save(&dir.join("imitator.fnvw"))?;
        if let Some(iso) = &self.isomap {
            iso.to_weights().save(&dir.join("isomap.fnvw"))?;
        }
        let mut files = Vec::new();
        for (&(input, map), model) in &self.waynets {
            let name = waynet_file(input, map);
            model.to_weights().save(&dir.join(&name))?;
            files.push(name);
        }
        self.worker.to_weights().save(&dir.join("worker.fnvw"))?;
        let manifest = Manifest {
            resolution: self.hlm.resolution,
            explore: self.explore,
            rho_explore: self.rho_explore.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            waynets: files,
            report: self.report.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(format!("manifest: {e}")))?;
        let encoder = EncoderNet::from_weights(WeightFile::load(&dir.join("encoder.fnvw"))?)?;
        let imitator = ImitatorNet::from_weights(WeightFile::load(&dir.join("imitator.fnvw"))?)?;
        let iso_path = dir.join("isomap.fnvw");
        let isomap = if iso_path.exists() { Some(IsomapModel::from_weights(WeightFile::load(&iso_path)?)?) } else { None };
        let mut waynets = BTreeMap::new();
        for name in &m.waynets {
            let model = WayNetModel::from_weights(WeightFile::load(&dir.join(name))?)?;
            let key = waynet_key(model.map, model.variant);
            waynets.insert(key, model);
        }
        let worker = WorkerModel::from_weights(WeightFile::load(&dir.join("worker.fnvw"))?)?;
        let mut rho_explore = BTreeMap::new();
        for (k, v) in m.rho_explore {
            rho_explore.insert(k.parse()?, v);
        }
        Ok(Self {
            hlm: Hlm::new(encoder, imitator, m.resolution),
            isomap,
            waynets,
            worker,
            rho_explore,
            explore: m.explore,
            report: m.report,
        })
    }

    /// Features for arbitrary observations under the trained encoder.
    pub fn features(&self, obs: &[&crate::world::Observation]) -> Result<Vec<FeatureVec>> {
        obs.iter().map(|o| self.hlm.encode(o)).collect()
    }
}
