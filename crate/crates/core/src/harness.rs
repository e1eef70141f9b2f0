//! Batch evaluation: sample episodes, run agents, write traces and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{run_episode, AgentConfig, EpisodeOutcome, StepTrace};
use crate::config::Config;
use crate::episodes::{report_csv, report_text, sample_episodes, Curvature, Episode, MetricsSummary, ScoredEpisode};
use crate::pipeline::{TrainedModels, Variant};
use crate::world::FloorPlan;
use crate::{Error, Result};

pub const PLAN_EXTENSION: &str = "plan";

/// Every `*.plan` file in `dir`, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<FloorPlan>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == PLAN_EXTENSION))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::NoData(format!("no .{PLAN_EXTENSION} files in {}", dir.display())));
    }
    paths.iter().map(|p| FloorPlan::load(p)).collect()
}

pub fn write_suite(dir: &Path, plans: &[FloorPlan]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for plan in plans {
        let path = dir.join(format!("{}.{PLAN_EXTENSION}", plan.id));
        plan.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// One episode as run by one agent configuration.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub index: usize,
    pub episode: Episode,
    pub outcome: EpisodeOutcome,
    pub traces: Vec<StepTrace>,
}

impl EpisodeRecord {
    pub fn scored(&self) -> ScoredEpisode {
        ScoredEpisode {
            difficulty: self.episode.difficulty,
            success: self.outcome.success,
            shortest: self.episode.geodesic,
            path: self.outcome.path_length,
        }
    }
}

/// All episodes for one configuration.
#[derive(Debug, Clone)]
pub struct ConfigRun {
    pub variant: Variant,
    pub config: AgentConfig,
    pub records: Vec<EpisodeRecord>,
}

impl ConfigRun {
    pub fn slug(&self) -> String {
        slug(self.variant)
    }

    /// Straight, curved and pooled rows.
    pub fn summaries(&self) -> Result<Vec<MetricsSummary>> {
        let (m, w, k) = (self.variant.0.to_string(), self.variant.1.to_string(), self.variant.2.to_string());
        let mut rows = Vec::new();
        for c in Curvature::ALL {
            let scored: Vec<ScoredEpisode> =
                self.records.iter().filter(|r| r.episode.curvature == c).map(EpisodeRecord::scored).collect();
            rows.push(MetricsSummary::from_episodes(&m, &w, &k, c.name(), &scored)?);
        }
        let all: Vec<ScoredEpisode> = self.records.iter().map(EpisodeRecord::scored).collect();
        rows.push(MetricsSummary::from_episodes(&m, &w, &k, "all", &all)?);
        Ok(rows)
    }

    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.outcome.success).count() as f64 / self.records.len() as f64
    }
}

/// File-name-safe variant label, e.g. `H-rgbd-m-cl`.
pub fn slug(v: Variant) -> String {
    format!("{}-{}-{}", v.0, v.1, v.2).to_lowercase().replace(' ', "")
}

/// Run `episodes` under one configuration. Episodes run in parallel on the
/// current rayon pool; results keep episode order.
pub fn run_config(models: &TrainedModels, cfg: &Config, variant: Variant, plans: &[FloorPlan], episodes: &[Episode]) -> Result<ConfigRun> {
    let config = models.agent_config(cfg, variant)?;
    let agent = models.agent_models(&config)?;
    let by_id: BTreeMap<&str, &FloorPlan> = plans.iter().map(|p| (p.id.as_str(), p)).collect();
    let records = episodes
        .par_iter()
        .enumerate()
        .map(|(index, ep)| {
            let plan = by_id
                .get(ep.plan_id.as_str())
                .ok_or_else(|| Error::Config(format!("episode refers to unknown plan {}", ep.plan_id)))?;
            let (traces, outcome) = run_episode(&config, &agent, plan, ep.start, &ep.goal_obs, ep.goal_position())?;
            Ok(EpisodeRecord {
                index,
                episode: ep.clone(),
                outcome,
                traces,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let run = ConfigRun { variant, config, records };
    info!("{}: success {:.3} over {} episodes", run.config.label(), run.success_rate(), run.records.len());
    Ok(run)
}

/// Everything produced by one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub episodes: Vec<Episode>,
    pub runs: Vec<ConfigRun>,
}

impl Evaluation {
    pub fn summaries(&self) -> Result<Vec<MetricsSummary>> {
        let mut rows = Vec::new();
        for r in &self.runs {
            rows.extend(r.summaries()?);
        }
        Ok(rows)
    }

    pub fn run(&self, variant: Variant) -> Option<&ConfigRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }
}

/// Sample `cfg.per_bin` episodes per bin from `plans` and run every variant.
/// `jobs == 0` uses the global pool.
pub fn evaluate(models: &TrainedModels, cfg: &Config, plans: &[FloorPlan], variants: &[Variant], seed: u64, jobs: usize) -> Result<Evaluation> {
    let episodes = sample_episodes(plans, cfg.per_bin, seed, &cfg.sensor())?;
    info!("sampled {} episodes over {} plans", episodes.len(), plans.len());
    let work = || -> Result<Vec<ConfigRun>> {
        variants
            .iter()
            .map(|&v| run_config(models, cfg, v, plans, &episodes))
            .collect()
    };
    let runs = if jobs == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)?
    };
    Ok(Evaluation { episodes, runs })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    episode: usize,
    #[serde(flatten)]
    trace: &'a StepTrace,
}

fn episode_rows(eval: &Evaluation) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::format(e.to_string());
    w.write_record([
        "config", "episode", "plan", "start_x", "start_y", "start_heading_deg", "goal_x", "goal_y", "goal_heading_deg",
        "difficulty", "curvature", "geodesic", "euclidean", "stopped", "success", "steps",
        "path_length", "distance_to_goal", "overrides",
    ])
    .map_err(io)?;
    for run in &eval.runs {
        let label = run.config.label();
        for r in &run.records {
            let (e, o) = (&r.episode, &r.outcome);
            w.write_record([
                label.clone(),
                r.index.to_string(),
                e.plan_id.clone(),
                e.start.x.to_string(),
                e.start.y.to_string(),
                e.start.heading.degrees().to_string(),
                e.goal.x.to_string(),
                e.goal.y.to_string(),
                e.goal.heading.degrees().to_string(),
                e.difficulty.to_string(),
                e.curvature.name().to_string(),
                e.geodesic.to_string(),
                e.euclidean.to_string(),
                o.stopped.to_string(),
                o.success.to_string(),
                o.steps.to_string(),
                o.path_length.to_string(),
                o.distance_to_goal.to_string(),
                o.overrides.to_string(),
            ])
            .map_err(io)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::format(e.to_string()))?).map_err(|e| Error::format(e.to_string()))
}

/// Write `traces-<slug>.ndjson` per configuration, `episodes.csv`,
/// `report.csv` and `report.txt` into `out`. Returns the written paths.
pub fn write_outputs(eval: &Evaluation, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for run in &eval.runs {
        let path = out.join(format!("traces-{}.ndjson", run.slug()));
        let mut f = BufWriter::new(std::fs::File::create(&path)?);
        for r in &run.records {
            for t in &r.traces {
                serde_json::to_writer(&mut f, &TraceLine { episode: r.index, trace: t }).map_err(|e| Error::format(e.to_string()))?;
                f.write_all(b"\n")?;
            }
        }
        f.flush()?;
        written.push(path);
    }
    let rows = eval.summaries()?;
    for (name, body) in [
        ("episodes.csv", episode_rows(eval)?),
        ("report.csv", report_csv(&rows)?),
        ("report.txt", report_text(&rows)),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// One line per configuration: pooled success and SPL.
pub fn brief(eval: &Evaluation) -> Result<String> {
    let mut s = String::new();
    for run in &eval.runs {
        let rows = run.summaries()?;
        let all = rows.last().expect("pooled row");
        let (succ, spl) = all.average();
        let _ = writeln!(s, "{:<20} n={:<4} succ={:.3} spl={:.3}", run.config.label(), all.n(), succ, spl);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpm::MapVariant;
    use crate::pipeline::{collect_corpus, train};
    use crate::waynet::InputVariant;
    use crate::worker::WorkerKind;
    use crate::world::procgen;

    #[test]
    fn suites_round_trip_through_a_directory() {
        let plans = procgen::suite(3, 40);
        let dir = tempfile::tempdir().unwrap();
        write_suite(dir.path(), &plans).unwrap();
        let back = load_suite(dir.path()).unwrap();
        assert_eq!(back, plans);
        let empty = tempfile::tempdir().unwrap();
        assert!(load_suite(empty.path()).is_err());
    }

    #[test]
    fn evaluation_writes_one_trace_file_per_config() {
        let cfg = Config {
            train_plans: 2,
            demos_per_plan: 1,
            demo_frames: 60,
            encoder_epochs: 1,
            imitator_epochs: 10,
            waynet_epochs: 1,
            worker_epochs: 1,
            isomap_points: 60,
            per_bin: 1,
            max_steps: 20,
            ..Config::default()
        };
        let variants = [(MapVariant::H, InputVariant::RgbdM, WorkerKind::Cl), (MapVariant::None, InputVariant::Rgbd, WorkerKind::Det)];
        let models = train(&cfg, &collect_corpus(&cfg).unwrap(), &variants).unwrap();
        let plans = procgen::suite(4, 900);
        let eval = evaluate(&models, &cfg, &plans, &variants, 5, 1).unwrap();
        assert_eq!(eval.runs.len(), 2);
        for run in &eval.runs {
            assert_eq!(run.records.len(), 6);
            assert!(run.records.iter().all(|r| r.outcome.steps <= 20));
            assert_eq!(run.summaries().unwrap().len(), 3);
        }
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&eval, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        assert!(dir.path().join("traces-h-rgbd-m-cl.ndjson").exists());
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(crate::episodes::parse_report_csv(&csv).unwrap(), eval.summaries().unwrap());
    }
}
