//! Teleoperation demonstrations and their binary container.
//!
//! ```text
//! magic b"FDNV", version u16
//! rays u32, app_channels u32, descriptor_dim u32, frames u32
//! plan id, collector: u32 length + utf-8
//! seed u64, timestamp u64
//! plan text: u32 length + utf-8 (the floor plan file, so replay needs nothing else)
//! per frame:
//!   x f64, y f64, heading ticks u32, click u32, action u8
//!   depth f64 × rays, appearance f64 × rays·app_channels
//!   detections u32, then per detection: ray u32, depth f64, descriptor f64 × descriptor_dim
//! ```
//!
//! Loading replays every action from frame 0 and rejects the file at the
//! first frame whose recorded pose disagrees with the simulator.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{put_string, Reader};
use crate::world::{parse_plan, step, write_plan, Action, Detection, FloorPlan, Heading, Observation, Pose};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FDNV";
pub const VERSION: u16 = 1;
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoFrame {
    pub observation: Observation,
    /// Ray the operator clicked.
    pub click: usize,
    /// Action executed after this frame.
    pub action: Action,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrajectory {
    pub plan: FloorPlan,
    pub frames: Vec<DemoFrame>,
    pub collector: String,
    pub seed: u64,
    /// Seconds since the unix epoch.
    pub timestamp: u64,
}

impl DemoTrajectory {
    pub fn plan_id(&self) -> &str {
        &self.plan.id
    }

    fn shape(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::InvalidEpisode("demo has no frames".into()))?;
        Ok((first.observation.rays(), first.observation.app_channels(), self.plan.descriptor_dim()))
    }

    /// Check every invariant the container promises.
    pub fn validate(&self) -> Result<()> {
        let (rays, app, dim) = self.shape()?;
        for (t, f) in self.frames.iter().enumerate() {
            let o = &f.observation;
            if o.rays() != rays || o.appearance.len() != rays * app {
                return Err(Error::format_at(t, "observation shape changes mid-trajectory"));
            }
            if f.click >= rays {
                return Err(Error::format_at(t, format!("click ray {} outside [0, {rays})", f.click)));
            }
            if let Some(d) = o.detections.iter().find(|d| d.descriptor.len() != dim || d.ray >= rays) {
                return Err(Error::format_at(t, format!("detection at ray {} is malformed", d.ray)));
            }
        }
        self.check_replay()
    }

    /// Re-simulate the recorded actions from frame 0.
    pub fn check_replay(&self) -> Result<()> {
        for t in 1..self.frames.len() {
            let expected = step(&self.plan, &self.frames[t - 1].pose, self.frames[t - 1].action);
            let got = &self.frames[t].pose;
            if (expected.x - got.x).abs() > REPLAY_TOLERANCE
                || (expected.y - got.y).abs() > REPLAY_TOLERANCE
                || expected.heading != got.heading
            {
                return Err(Error::format_at(t, "recorded pose diverges from replayed actions"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (rays, app, dim) = self.shape()?;
        let mut out = Vec::with_capacity(encoded_size_estimate(self.frames.len(), rays, app, dim, 0));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [rays, app, dim, self.frames.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        put_string(&mut out, &self.plan.id);
        put_string(&mut out, &self.collector);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        put_string(&mut out, &write_plan(&self.plan));
        for f in &self.frames {
            out.extend_from_slice(&f.pose.x.to_le_bytes());
            out.extend_from_slice(&f.pose.y.to_le_bytes());
            out.extend_from_slice(&f.pose.heading.ticks().to_le_bytes());
            out.extend_from_slice(&(f.click as u32).to_le_bytes());
            out.push(f.action.code());
            for v in f.observation.depth.iter().chain(&f.observation.appearance) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(f.observation.detections.len() as u32).to_le_bytes());
            for d in &f.observation.detections {
                out.extend_from_slice(&(d.ray as u32).to_le_bytes());
                out.extend_from_slice(&d.depth.to_le_bytes());
                for v in &d.descriptor {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "demo file");
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a demo file (bad magic)"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported demo version {version}")));
        }
        let rays = r.u32()? as usize;
        let app = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let plan_id = r.string()?;
        let collector = r.string()?;
        let seed = r.u64()?;
        let timestamp = r.u64()?;
        let plan_text = r.string()?;
        let plan = parse_plan(&plan_id, &plan_text, Path::new("<embedded plan>"))?;
        if count == 0 {
            return Err(Error::format("demo has no frames"));
        }
        let mut frames = Vec::with_capacity(count.min(1 << 16));
        for t in 0..count {
            let at = |e: Error| match e {
                Error::Format { message, .. } => Error::format_at(t, message),
                other => other,
            };
            let x = r.f64().map_err(at)?;
            let y = r.f64().map_err(at)?;
            let heading = Heading::from_ticks(r.u32().map_err(at)?);
            let click = r.u32().map_err(at)? as usize;
            let code = r.u8().map_err(at)?;
            let action = Action::from_code(code).ok_or_else(|| Error::format_at(t, format!("unknown action code {code}")))?;
            let mut values = Vec::with_capacity(rays * (1 + app));
            for _ in 0..rays * (1 + app) {
                values.push(r.f64().map_err(at)?);
            }
            let appearance = values.split_off(rays);
            let n_det = r.u32().map_err(at)? as usize;
            if n_det > rays {
                return Err(Error::format_at(t, format!("{n_det} detections exceed {rays} rays")));
            }
            let mut detections = Vec::with_capacity(n_det);
            for _ in 0..n_det {
                let ray = r.u32().map_err(at)? as usize;
                let depth = r.f64().map_err(at)?;
                let mut descriptor = Vec::with_capacity(dim);
                for _ in 0..dim {
                    descriptor.push(r.f64().map_err(at)?);
                }
                detections.push(Detection { ray, descriptor, depth });
            }
            frames.push(DemoFrame {
                observation: Observation {
                    depth: values,
                    appearance,
                    detections,
                },
                click,
                action,
                pose: Pose { x, y, heading },
            });
        }
        if r.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes after last frame", r.remaining())));
        }
        let demo = Self {
            plan,
            frames,
            collector,
            seed,
            timestamp,
        };
        demo.validate()?;
        Ok(demo)
    }

    /// Byte-deterministic; refuses trajectories that break an invariant.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let (rays, app, dim) = self.shape().unwrap_or((0, 0, 0));
        let mut counts = [0usize; 4];
        let mut path = 0.0;
        for w in self.frames.windows(2) {
            path += w[0].pose.position().dist(w[1].pose.position());
        }
        for f in &self.frames {
            counts[f.action.code() as usize] += 1;
        }
        let detections: usize = self.frames.iter().map(|f| f.observation.detections.len()).sum();
        let _ = writeln!(s, "plan        {}", self.plan.id);
        let _ = writeln!(s, "collector   {}", self.collector);
        let _ = writeln!(s, "seed        {}", self.seed);
        let _ = writeln!(s, "timestamp   {}", self.timestamp);
        let _ = writeln!(s, "frames      {}", self.frames.len());
        let _ = writeln!(s, "sensor      {rays} rays, {app} appearance channels, descriptor dim {dim}");
        let _ = writeln!(
            s,
            "actions     left {} right {} forward {} stop {}",
            counts[0], counts[1], counts[2], counts[3]
        );
        let _ = writeln!(s, "path        {path:.2} m");
        let _ = writeln!(
            s,
            "detections  {detections} ({:.2} per frame)",
            detections as f64 / self.frames.len().max(1) as f64
        );
        if let (Some(a), Some(b)) = (self.frames.first(), self.frames.last()) {
            let _ = writeln!(s, "start       ({:.2}, {:.2}) {:.0} deg", a.pose.x, a.pose.y, a.pose.heading.degrees());
            let _ = writeln!(s, "end         ({:.2}, {:.2}) {:.0} deg", b.pose.x, b.pose.y, b.pose.heading.degrees());
        }
        s
    }
}

/// Exact encoded size for a trajectory with `detections` detections in total,
/// excluding the variable-length strings and plan text.
pub fn encoded_size_estimate(frames: usize, rays: usize, app: usize, dim: usize, detections: usize) -> usize {
    let header = 4 + 2 + 4 * 4 + 8 + 8 + 3 * 4;
    let frame = 8 + 8 + 4 + 4 + 1 + 8 * rays * (1 + app) + 4;
    let detection = 4 + 8 + 8 * dim;
    header + frames * frame + detections * detection
}

/// Every `*.fdnv` file in a directory, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<DemoTrajectory>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "fdnv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| DemoTrajectory::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::render;

    fn short_demo() -> DemoTrajectory {
        let plan = FloorPlan::empty_room("room", 4.0, 3.0);
        let actions = [Action::MoveForward, Action::TurnLeft, Action::MoveForward, Action::Stop];
        let mut pose = Pose::new(1.0, 1.0, 0.0);
        let mut frames = Vec::new();
        for a in actions {
            frames.push(DemoFrame {
                observation: render(&plan, &pose),
                click: 64,
                action: a,
                pose,
            });
            pose = step(&plan, &pose, a);
        }
        DemoTrajectory {
            plan,
            frames,
            collector: "tester".into(),
            seed: 3,
            timestamp: 1_700_000_000,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let demo = short_demo();
        let bytes = demo.to_bytes().unwrap();
        let back = DemoTrajectory::from_bytes(&bytes).unwrap();
        assert_eq!(back, demo);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn empty_demo_is_rejected_before_write() {
        let mut demo = short_demo();
        demo.frames.clear();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fdnv");
        assert!(demo.save(&path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = short_demo().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(DemoTrajectory::from_bytes(&bad), Err(Error::Format { .. })));
        for cut in [3, 40, bytes.len() - 1] {
            assert!(matches!(DemoTrajectory::from_bytes(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn summary_mentions_counts() {
        let s = short_demo().summary();
        assert!(s.contains("frames      4"));
        assert!(s.contains("forward 2"));
    }
}
