//! Image-goal episodes, SPL and report tables.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::world::{FloorPlan, Observation, Point, Pose, Sensor};
use crate::{Error, Result};

/// Bin edges on geodesic start-goal distance, meters.
pub const EASY: (f64, f64) = (1.5, 3.0);
pub const MEDIUM: (f64, f64) = (3.0, 5.0);
pub const HARD: (f64, f64) = (5.0, 10.0);
/// Geodesic / Euclidean ratio at or above which a pair counts as curved.
pub const CURVED_RATIO: f64 = 1.2;
/// Minimum wall clearance for sampled starts and goals.
pub const SAMPLE_CLEARANCE: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn classify(geodesic: f64) -> Option<Self> {
        if (EASY.0..EASY.1).contains(&geodesic) {
            Some(Difficulty::Easy)
        } else if (MEDIUM.0..MEDIUM.1).contains(&geodesic) {
            Some(Difficulty::Medium)
        } else if (HARD.0..=HARD.1).contains(&geodesic) {
            Some(Difficulty::Hard)
        } else {
            None
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            Difficulty::Easy => EASY,
            Difficulty::Medium => MEDIUM,
            Difficulty::Hard => HARD,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Curvature {
    Straight,
    Curved,
}

impl Curvature {
    pub const ALL: [Curvature; 2] = [Curvature::Straight, Curvature::Curved];

    pub fn classify(geodesic: f64, euclidean: f64) -> Self {
        if geodesic >= CURVED_RATIO * euclidean {
            Curvature::Curved
        } else {
            Curvature::Straight
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Curvature::Straight => "straight",
            Curvature::Curved => "curved",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub plan_id: String,
    pub start: Pose,
    pub goal: Pose,
    pub goal_obs: Observation,
    /// Geodesic start-goal distance.
    pub geodesic: f64,
    pub euclidean: f64,
    pub curvature: Curvature,
    pub difficulty: Difficulty,
}

impl Episode {
    pub fn goal_position(&self) -> Point {
        self.goal.position()
    }
}

/// Heading (multiple of one turn) whose center ray sees the most free space.
pub fn open_heading(plan: &FloorPlan, p: Point, sensor: &Sensor) -> Pose {
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..24 {
        let theta = (k as f64 * 15.0).to_radians();
        let (t, _) = plan.cast(p, Point::from_angle(theta), sensor.max_range);
        if t > best.0 {
            best = (t, k);
        }
    }
    Pose::new(p.x, p.y, (best.1 as f64 * 15.0).to_radians())
}

fn random_free_point(plan: &FloorPlan, rng: &mut ChaCha8Rng) -> Option<Point> {
    let b = plan.bounds;
    let p = Point::new(rng.gen_range(b.min.x..b.max.x), rng.gen_range(b.min.y..b.max.y));
    (plan.clearance(p) >= SAMPLE_CLEARANCE && plan.reachable(p)).then_some(p)
}

/// Rejection-sample `per_bin` episodes for every curvature × difficulty bin,
/// drawing plans uniformly.
pub fn sample_episodes(plans: &[FloorPlan], per_bin: usize, seed: u64, sensor: &Sensor) -> Result<Vec<Episode>> {
    if plans.is_empty() {
        return Err(Error::NoData("no plans to sample episodes from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<(Curvature, Difficulty), usize> = BTreeMap::new();
    let mut episodes = Vec::with_capacity(per_bin * 6);
    let budget = 4000 * (per_bin.max(1) * 6) + 20_000;
    let mut attempts = 0;
    while episodes.len() < per_bin * 6 {
        attempts += 1;
        if attempts > budget {
            let (c, d) = Curvature::ALL
                .iter()
                .flat_map(|&c| Difficulty::ALL.iter().map(move |&d| (c, d)))
                .find(|k| counts.get(k).copied().unwrap_or(0) < per_bin)
                .expect("some bin unfilled");
            return Err(Error::BinExhausted(format!("{}/{}", c.name(), d.name())));
        }
        let plan = &plans[rng.gen_range(0..plans.len())];
        let (Some(start), Some(goal)) = (random_free_point(plan, &mut rng), random_free_point(plan, &mut rng)) else {
            continue;
        };
        let heading_turns = rng.gen_range(0..24);
        let euclidean = start.dist(goal);
        if euclidean < EASY.0 * 0.5 {
            continue;
        }
        let Ok(geodesic) = plan.geodesic_distance(start, goal) else {
            continue;
        };
        let Some(difficulty) = Difficulty::classify(geodesic) else {
            continue;
        };
        let curvature = Curvature::classify(geodesic, euclidean);
        let count = counts.entry((curvature, difficulty)).or_insert(0);
        if *count >= per_bin {
            continue;
        }
        *count += 1;
        let goal_pose = open_heading(plan, goal, sensor);
        episodes.push(Episode {
            plan_id: plan.id.clone(),
            start: Pose::new(start.x, start.y, (heading_turns as f64 * 15.0).to_radians()),
            goal: goal_pose,
            goal_obs: sensor.render(plan, &goal_pose),
            geodesic,
            euclidean,
            curvature,
            difficulty,
        });
    }
    Ok(episodes)
}

/// Mean over episodes of `S_i · l_i / max(l_i, p_i)`.
pub fn spl(outcomes: &[(bool, f64, f64)]) -> Result<f64> {
    if outcomes.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &(s, l, p) in outcomes {
        if !(l > 0.0) || !(p >= 0.0) {
            return Err(Error::InvalidEpisode(format!("shortest path {l} / path {p}")));
        }
        if s {
            sum += l / l.max(p);
        }
    }
    Ok(sum / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinMetrics {
    pub n: usize,
    pub success: f64,
    pub spl: f64,
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub map: String,
    pub waynet: String,
    pub worker: String,
    /// Which episodes the row covers, e.g. `straight`, `curved` or `all`.
    pub split: String,
    pub bins: BTreeMap<Difficulty, BinMetrics>,
}

/// One evaluated episode as far as metrics are concerned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredEpisode {
    pub difficulty: Difficulty,
    pub success: bool,
    pub shortest: f64,
    pub path: f64,
}

impl MetricsSummary {
    pub fn from_episodes(map: &str, waynet: &str, worker: &str, split: &str, scored: &[ScoredEpisode]) -> Result<Self> {
        let mut bins = BTreeMap::new();
        for d in Difficulty::ALL {
            let rows: Vec<(bool, f64, f64)> = scored
                .iter()
                .filter(|e| e.difficulty == d)
                .map(|e| (e.success, e.shortest, e.path))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let success = rows.iter().filter(|r| r.0).count() as f64 / rows.len() as f64;
            bins.insert(d, BinMetrics { n: rows.len(), success, spl: spl(&rows)? });
        }
        Ok(Self {
            map: map.into(),
            waynet: waynet.into(),
            worker: worker.into(),
            split: split.into(),
            bins,
        })
    }

    pub fn n(&self) -> usize {
        self.bins.values().map(|b| b.n).sum()
    }

    /// Unweighted mean over the populated difficulty bins.
    pub fn average(&self) -> (f64, f64) {
        if self.bins.is_empty() {
            return (0.0, 0.0);
        }
        let k = self.bins.len() as f64;
        (
            self.bins.values().map(|b| b.success).sum::<f64>() / k,
            self.bins.values().map(|b| b.spl).sum::<f64>() / k,
        )
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.map, self.waynet, self.worker)
    }
}

const HEADER: [&str; 16] = [
    "map", "waynet", "worker", "split", "n", "easy_n", "easy_succ", "easy_spl", "medium_n", "medium_succ",
    "medium_spl", "hard_n", "hard_succ", "hard_spl", "avg_succ", "avg_spl",
];

/// CSV with one row per summary; fractions in [0, 1] written exactly.
pub fn report_csv(rows: &[MetricsSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::format(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.map.clone(), r.waynet.clone(), r.worker.clone(), r.split.clone(), r.n().to_string()];
        for d in Difficulty::ALL {
            match r.bins.get(&d) {
                Some(b) => rec.extend([b.n.to_string(), b.success.to_string(), b.spl.to_string()]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        let (s, p) = r.average();
        rec.extend([s.to_string(), p.to_string()]);
        w.write_record(&rec).map_err(io)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::format(e.to_string()))?).map_err(|e| Error::format(e.to_string()))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<MetricsSummary>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| Error::format(m);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(bad("unexpected report header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", HEADER[i]))) };
        let mut bins = BTreeMap::new();
        for (k, d) in Difficulty::ALL.into_iter().enumerate() {
            let base = 5 + 3 * k;
            if rec[base].is_empty() {
                continue;
            }
            bins.insert(
                d,
                BinMetrics {
                    n: rec[base].parse().map_err(|e| bad(format!("{e}")))?,
                    success: num(base + 1)?,
                    spl: num(base + 2)?,
                },
            );
        }
        out.push(MetricsSummary {
            map: rec[0].to_string(),
            waynet: rec[1].to_string(),
            worker: rec[2].to_string(),
            split: rec[3].to_string(),
            bins,
        });
    }
    Ok(out)
}

/// Aligned text table in percent, columns as in the ablation table.
pub fn report_text(rows: &[MetricsSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:<6} {:<9} {:<9} {:>5} | {:>7} {:>7} | {:>7} {:>7} | {:>7} {:>7} || {:>7} {:>7}",
        "split", "MPM", "WayNet", "LLW", "N", "E.Succ", "E.SPL", "M.Succ", "M.SPL", "H.Succ", "H.SPL", "Succ", "SPL"
    );
    for r in rows {
        let cell = |d: Difficulty| match r.bins.get(&d) {
            Some(b) => format!("{:>7.2} {:>7.2}", 100.0 * b.success, 100.0 * b.spl),
            None => format!("{:>7} {:>7}", "-", "-"),
        };
        let (a, p) = r.average();
        let _ = writeln!(
            s,
            "{:<9} {:<6} {:<9} {:<9} {:>5} | {} | {} | {} || {:>7.2} {:>7.2}",
            r.split,
            if r.map == "None" { "-" } else { &r.map },
            r.waynet,
            r.worker,
            r.n(),
            cell(Difficulty::Easy),
            cell(Difficulty::Medium),
            cell(Difficulty::Hard),
            100.0 * a,
            100.0 * p
        );
    }
    s
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown difficulty {s:?}")))
    }
}
