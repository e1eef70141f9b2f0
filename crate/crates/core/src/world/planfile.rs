//! Line-oriented floorplan text format:
//!
//! ```text
//! # comment
//! bounds xmin ymin xmax ymax
//! seed x y
//! wall x1 y1 x2 y2
//! landmark x y r d0 d1 ... d{D-1}
//! ```
//!
//! All units are meters. The plan id is supplied by the caller (usually the
//! file stem).

use std::fmt::Write as _;
use std::path::Path;

use super::{FloorPlan, Landmark, Point, Rect, Segment};
use crate::{Error, Result};

pub fn parse_plan(id: &str, text: &str, origin: &Path) -> Result<FloorPlan> {
    let mut walls = Vec::new();
    let mut landmarks: Vec<Landmark> = Vec::new();
    let mut seed = None;
    let mut bounds = None;
    for (lineno, raw) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap_or_default();
        let nums: Vec<f64> = parts
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let expect = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(err(format!("`{keyword}` takes {n} numbers, got {}", nums.len())))
            }
        };
        match keyword {
            "wall" => {
                expect(4)?;
                walls.push(Segment::new(Point::new(nums[0], nums[1]), Point::new(nums[2], nums[3])));
            }
            "seed" => {
                expect(2)?;
                seed = Some(Point::new(nums[0], nums[1]));
            }
            "bounds" => {
                expect(4)?;
                bounds = Some(Rect::new(Point::new(nums[0], nums[1]), Point::new(nums[2], nums[3])));
            }
            "landmark" => {
                if nums.len() < 4 {
                    return Err(err("landmark needs x y r and a descriptor".into()));
                }
                let descriptor = nums[3..].to_vec();
                let norm = descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(err(format!("descriptor norm {norm} is not 1")));
                }
                if let Some(first) = landmarks.first() {
                    if first.descriptor.len() != descriptor.len() {
                        return Err(err("descriptor dimension differs from first landmark".into()));
                    }
                }
                landmarks.push(Landmark {
                    position: Point::new(nums[0], nums[1]),
                    descriptor,
                    radius: nums[2],
                });
            }
            other => return Err(err(format!("unknown keyword {other:?}"))),
        }
    }
    let missing = |what: &str| Error::Parse {
        path: origin.to_path_buf(),
        line: 0,
        message: format!("missing `{what}` line"),
    };
    Ok(FloorPlan::new(
        id,
        walls,
        landmarks,
        seed.ok_or_else(|| missing("seed"))?,
        bounds.ok_or_else(|| missing("bounds"))?,
    ))
}

pub fn write_plan(plan: &FloorPlan) -> String {
    let mut out = String::new();
    let b = &plan.bounds;
    let _ = writeln!(out, "# floorplan {}", plan.id);
    let _ = writeln!(out, "bounds {} {} {} {}", b.min.x, b.min.y, b.max.x, b.max.y);
    let _ = writeln!(out, "seed {} {}", plan.seed.x, plan.seed.y);
    for w in &plan.walls {
        let _ = writeln!(out, "wall {} {} {} {}", w.a.x, w.a.y, w.b.x, w.b.y);
    }
    for l in &plan.landmarks {
        let _ = write!(out, "landmark {} {} {}", l.position.x, l.position.y, l.radius);
        for d in &l.descriptor {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
    }
    out
}

impl FloorPlan {
    pub fn load(path: &Path) -> Result<FloorPlan> {
        let text = std::fs::read_to_string(path)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("plan")
            .to_string();
        parse_plan(&id, &text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, write_plan(self))?;
        Ok(())
    }
}
