//! Online visual clustering along a trajectory. The first frame seeds the
//! first cluster; every later frame joins the best-matching existing center
//! when the match confidence reaches `alpha_c`, otherwise it becomes a new
//! center. Frames sharing a cluster are positive pairs for the encoder.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matcher::match_observations;
use crate::world::Observation;
use crate::{Error, Result};

pub const DEFAULT_ALPHA_C: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBank {
    /// Frame index of each cluster's center; cluster ids are positions here.
    pub centers: Vec<usize>,
    /// Cluster id of every frame.
    pub assignments: Vec<usize>,
    pub alpha_c: f64,
}

pub fn build_clusters(frames: &[Observation], alpha_c: f64) -> Result<ClusterBank> {
    if frames.is_empty() {
        return Err(Error::NoData("no frames to cluster".into()));
    }
    let mut centers: Vec<usize> = vec![0];
    let mut assignments = vec![0];
    for (t, frame) in frames.iter().enumerate().skip(1) {
        let mut best: Option<(usize, f64)> = None;
        for (k, &c) in centers.iter().enumerate() {
            let conf = match_observations(&frames[c], frame).confidence;
            // strict > keeps the lowest id on ties
            if best.is_none_or(|(_, b)| conf > b) {
                best = Some((k, conf));
            }
        }
        match best {
            Some((k, conf)) if conf >= alpha_c => assignments.push(k),
            _ => {
                assignments.push(centers.len());
                centers.push(t);
            }
        }
    }
    Ok(ClusterBank {
        centers,
        assignments,
        alpha_c,
    })
}

impl ClusterBank {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (t, &k) in self.assignments.iter().enumerate() {
            out[k].push(t);
        }
        out
    }

    /// Cluster ids with at least two members.
    pub fn eligible(&self) -> Vec<usize> {
        self.members()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(k, _)| k)
            .collect()
    }

    /// Uniform over eligible clusters, then two distinct members uniformly.
    pub fn sample_positive_pair_with(&self, rng: &mut impl Rng) -> Result<(usize, usize)> {
        let members = self.members();
        let eligible: Vec<&Vec<usize>> = members.iter().filter(|m| m.len() >= 2).collect();
        let cluster = eligible.choose(rng).ok_or(Error::NoPositivePairs)?;
        let pick: Vec<&usize> = cluster.choose_multiple(rng, 2).collect();
        Ok((*pick[0], *pick[1]))
    }

    pub fn sample_positive_pair(&self, seed: u64) -> Result<(usize, usize)> {
        self.sample_positive_pair_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `cluster <id> center_frame <t>` lines followed by `assign <t> <id>` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("# alpha_c {}\n", self.alpha_c);
        for (k, c) in self.centers.iter().enumerate() {
            let _ = writeln!(out, "cluster {k} center_frame {c}");
        }
        for (t, k) in self.assignments.iter().enumerate() {
            let _ = writeln!(out, "assign {t} {k}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut centers = Vec::new();
        let mut assignments = Vec::new();
        let mut alpha_c = DEFAULT_ALPHA_C;
        for (i, line) in text.lines().enumerate() {
            let bad = || Error::format(format!("cluster file line {}: {line:?}", i + 1));
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                [] => {}
                ["#", "alpha_c", v] => alpha_c = v.parse().map_err(|_| bad())?,
                [c, ..] if c.starts_with('#') => {}
                ["cluster", k, "center_frame", t] => {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k != centers.len() {
                        return Err(bad());
                    }
                    centers.push(t.parse().map_err(|_| bad())?);
                }
                ["assign", t, k] => {
                    let t: usize = t.parse().map_err(|_| bad())?;
                    if t != assignments.len() {
                        return Err(bad());
                    }
                    assignments.push(k.parse().map_err(|_| bad())?);
                }
                _ => return Err(bad()),
            }
        }
        if assignments.iter().any(|&k| k >= centers.len()) {
            return Err(Error::format("assignment references unknown cluster"));
        }
        Ok(Self {
            centers,
            assignments,
            alpha_c,
        })
    }
}
