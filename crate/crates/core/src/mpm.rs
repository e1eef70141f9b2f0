//! Memory proxy map: a density grid over latent 2D coordinates.
//!
//! Cells are addressed by the cell whose center is nearest the latent point,
//! so every stamp is centered on a cell. The grid grows on demand in any
//! direction; reads outside it are zero.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::matcher::match_observations;
use crate::world::Observation;
use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_CROP: usize = 64;
pub const DISC_RADIUS_A: f64 = 3.0;
pub const DENSITY_RADIUS: f64 = 2.0;

/// How observations are written into the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapVariant {
    /// Additive gaussian per observation.
    H,
    /// Binary discs at cluster centers, radius growing with revisits.
    C,
    /// Binary fixed-radius disc per observation.
    A,
    None,
}

impl MapVariant {
    pub const ALL: [MapVariant; 4] = [MapVariant::None, MapVariant::C, MapVariant::A, MapVariant::H];

    pub fn code(self) -> u32 {
        match self {
            MapVariant::H => 0,
            MapVariant::C => 1,
            MapVariant::A => 2,
            MapVariant::None => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for MapVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MapVariant::H => "H",
            MapVariant::C => "C",
            MapVariant::A => "A",
            MapVariant::None => "None",
        })
    }
}

impl FromStr for MapVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(MapVariant::H),
            "C" | "c" => Ok(MapVariant::C),
            "A" | "a" => Ok(MapVariant::A),
            "None" | "none" | "-" | "--" => Ok(MapVariant::None),
            other => Err(Error::Config(format!("unknown map variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpmGrid {
    /// Indexed `[row = y, col = x]`.
    cells: Array2<f64>,
    /// Latent units per cell.
    pub resolution: f64,
    /// Integer cell coordinate of `cells[[0, 0]]`.
    offset: (i64, i64),
    pub sigma: f64,
    pub variant: MapVariant,
    max: f64,
}

impl MpmGrid {
    pub fn new(variant: MapVariant, resolution: f64) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            cells: Array2::zeros((0, 0)),
            resolution,
            offset: (0, 0),
            sigma: DEFAULT_SIGMA,
            variant,
            max: 0.0,
        }
    }

    /// Integer (x, y) cell holding latent point `p`.
    pub fn cell_of(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.resolution).round() as i64, (p[1] / self.resolution).round() as i64)
    }

    /// Latent coordinate of the (x, y) cell center.
    pub fn cell_center(&self, cell: (i64, i64)) -> [f64; 2] {
        [cell.0 as f64 * self.resolution, cell.1 as f64 * self.resolution]
    }

    /// Latent coordinate of the first stored cell's center.
    pub fn origin(&self) -> [f64; 2] {
        self.cell_center(self.offset)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cells.ncols(), self.cells.nrows())
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn total(&self) -> f64 {
        self.cells.sum()
    }

    pub fn cells(&self) -> &Array2<f64> {
        &self.cells
    }

    pub fn get(&self, cell: (i64, i64)) -> f64 {
        let (x, y) = (cell.0 - self.offset.0, cell.1 - self.offset.1);
        if x < 0 || y < 0 || x >= self.cells.ncols() as i64 || y >= self.cells.nrows() as i64 {
            0.0
        } else {
            self.cells[[y as usize, x as usize]]
        }
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.get(self.cell_of(p))
    }

    /// Grow so that the inclusive cell box `lo..=hi` is stored.
    fn ensure(&mut self, lo: (i64, i64), hi: (i64, i64)) {
        let (w, h) = (self.cells.ncols() as i64, self.cells.nrows() as i64);
        if w > 0 && lo.0 >= self.offset.0 && lo.1 >= self.offset.1 && hi.0 < self.offset.0 + w && hi.1 < self.offset.1 + h {
            return;
        }
        let (cur_lo, cur_hi) = if w == 0 {
            (lo, hi)
        } else {
            (self.offset, (self.offset.0 + w - 1, self.offset.1 + h - 1))
        };
        let pad = 16;
        let new_lo = (
            if lo.0 < cur_lo.0 { lo.0 - pad } else { cur_lo.0 },
            if lo.1 < cur_lo.1 { lo.1 - pad } else { cur_lo.1 },
        );
        let new_hi = (
            if hi.0 > cur_hi.0 { hi.0 + pad } else { cur_hi.0 },
            if hi.1 > cur_hi.1 { hi.1 + pad } else { cur_hi.1 },
        );
        let mut cells = Array2::zeros(((new_hi.1 - new_lo.1 + 1) as usize, (new_hi.0 - new_lo.0 + 1) as usize));
        if w > 0 {
            let dx = (self.offset.0 - new_lo.0) as usize;
            let dy = (self.offset.1 - new_lo.1) as usize;
            cells
                .slice_mut(ndarray::s![dy..dy + h as usize, dx..dx + w as usize])
                .assign(&self.cells);
        }
        self.cells = cells;
        self.offset = new_lo;
    }

    fn apply(&mut self, center: (i64, i64), reach: i64, mut f: impl FnMut(f64, &mut f64)) {
        self.ensure((center.0 - reach, center.1 - reach), (center.0 + reach, center.1 + reach));
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                let x = (center.0 + dx - self.offset.0) as usize;
                let y = (center.1 + dy - self.offset.1) as usize;
                let cell = &mut self.cells[[y, x]];
                f(d, cell);
                if *cell > self.max {
                    self.max = *cell;
                }
            }
        }
    }

    /// Add a unit-peak gaussian centered on `p`'s cell, truncated at 3σ.
    pub fn stamp_gaussian(&mut self, p: [f64; 2]) {
        let sigma = self.sigma;
        let cutoff = 3.0 * sigma;
        self.apply(self.cell_of(p), cutoff.floor() as i64, |d, cell| {
            if d <= cutoff + 1e-12 {
                *cell += (-d * d / (2.0 * sigma * sigma)).exp();
            }
        });
    }

    /// Set every cell within `radius` cells of `p`'s cell to 1.
    pub fn stamp_disc(&mut self, p: [f64; 2], radius: f64) {
        self.apply(self.cell_of(p), radius.max(0.0).floor() as i64, |d, cell| {
            if d <= radius + 1e-12 {
                *cell = 1.0;
            }
        });
    }

    /// Variant-dependent stamp: gaussian for H, fixed disc for A and C.
    /// A no-op for `None`.
    pub fn stamp(&mut self, p: [f64; 2]) {
        match self.variant {
            MapVariant::H => self.stamp_gaussian(p),
            MapVariant::A | MapVariant::C => self.stamp_disc(p, DISC_RADIUS_A),
            MapVariant::None => {}
        }
    }

    /// `w × h` window centered on `center`'s cell, divided by the grid max.
    pub fn crop(&self, center: [f64; 2], w: usize, h: usize) -> Array2<f64> {
        let (cx, cy) = self.cell_of(center);
        let scale = if self.max > 0.0 { 1.0 / self.max } else { 0.0 };
        Array2::from_shape_fn((h, w), |(r, c)| {
            self.get((cx + c as i64 - (w / 2) as i64, cy + r as i64 - (h / 2) as i64)) * scale
        })
    }

    /// Mean value over cells within `radius` cells of `p`'s cell.
    pub fn exploration_density(&self, p: [f64; 2], radius: f64) -> f64 {
        let (cx, cy) = self.cell_of(p);
        let reach = radius.max(0.0).floor() as i64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy) as f64).sqrt() <= radius + 1e-12 {
                    sum += self.get((cx + dx, cy + dy));
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// 16-bit binary PGM (rows top to bottom = decreasing y) and a sidecar
    /// `<path>.txt` describing the grid placement.
    pub fn export_pgm(&self, path: &Path) -> Result<()> {
        let (w, h) = self.shape();
        let mut bytes = format!("P5\n{} {}\n65535\n", w.max(1), h.max(1)).into_bytes();
        if w == 0 {
            bytes.extend([0, 0]);
        }
        let scale = if self.max > 0.0 { 65535.0 / self.max } else { 0.0 };
        for row in (0..h).rev() {
            for col in 0..w {
                let v = (self.cells[[row, col]] * scale).round().clamp(0.0, 65535.0) as u16;
                bytes.extend(v.to_be_bytes());
            }
        }
        std::fs::write(path, bytes)?;
        let mut side = std::fs::File::create(sidecar_path(path))?;
        let origin = self.origin();
        writeln!(side, "variant {}", self.variant)?;
        writeln!(side, "width {w}")?;
        writeln!(side, "height {h}")?;
        writeln!(side, "origin {} {}", origin[0], origin[1])?;
        writeln!(side, "resolution {}", self.resolution)?;
        writeln!(side, "sigma {}", self.sigma)?;
        writeln!(side, "max {}", self.max)?;
        Ok(())
    }
}

pub fn sidecar_path(pgm: &Path) -> std::path::PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".txt");
    s.into()
}

#[derive(Debug, Clone)]
struct Center {
    observation: Observation,
    position: [f64; 2],
    visits: usize,
}

/// A grid plus the bookkeeping variant C needs: observations are grouped
/// online into cluster centers and each center's disc grows with its visits.
#[derive(Debug, Clone)]
pub struct MemoryMap {
    pub grid: MpmGrid,
    centers: Vec<Center>,
    alpha_c: f64,
}

impl MemoryMap {
    pub fn new(variant: MapVariant, resolution: f64, alpha_c: f64) -> Self {
        Self {
            grid: MpmGrid::new(variant, resolution),
            centers: Vec::new(),
            alpha_c,
        }
    }

    pub fn variant(&self) -> MapVariant {
        self.grid.variant
    }

    pub fn cluster_count(&self) -> usize {
        self.centers.len()
    }

    /// Record one observation projected to latent point `p`.
    pub fn observe(&mut self, p: [f64; 2], obs: &Observation) {
        match self.grid.variant {
            MapVariant::None => {}
            MapVariant::H | MapVariant::A => self.grid.stamp(p),
            MapVariant::C => {
                let mut best: Option<(usize, f64)> = None;
                for (i, c) in self.centers.iter().enumerate() {
                    let conf = match_observations(obs, &c.observation).confidence;
                    if conf >= self.alpha_c && best.is_none_or(|(_, b)| conf > b) {
                        best = Some((i, conf));
                    }
                }
                match best {
                    Some((i, _)) => {
                        let c = &mut self.centers[i];
                        c.visits += 1;
                        let (pos, r) = (c.position, 1.0 + c.visits as f64);
                        self.grid.stamp_disc(pos, r);
                    }
                    None => {
                        self.centers.push(Center {
                            observation: obs.clone(),
                            position: p,
                            visits: 0,
                        });
                        self.grid.stamp_disc(p, 1.0);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peak_and_neighbor() {
        let mut g = MpmGrid::new(MapVariant::H, 1.0);
        g.stamp([0.2, -0.3]);
        assert_eq!(g.get((0, 0)), 1.0);
        assert!((g.get((1, 0)) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.get((0, -1)) - 0.6065306597126334).abs() < 1e-12);
        g.stamp([0.0, 0.0]);
        assert_eq!(g.get((0, 0)), 2.0);
        assert_eq!(g.get((4, 0)), 0.0);
    }

    #[test]
    fn stamp_is_truncated_at_three_sigma() {
        let mut g = MpmGrid::new(MapVariant::H, 1.0);
        g.stamp([0.0, 0.0]);
        assert!(g.get((3, 0)) > 0.0);
        assert_eq!(g.get((3, 1)), 0.0);
        assert_eq!(g.get((2, 3)), 0.0);
    }

    #[test]
    fn grid_grows_in_every_direction() {
        let mut g = MpmGrid::new(MapVariant::H, 0.5);
        g.stamp([0.0, 0.0]);
        g.stamp([-40.0, 25.0]);
        g.stamp([60.0, -33.0]);
        assert_eq!(g.value_at([0.0, 0.0]), 1.0);
        assert_eq!(g.value_at([-40.0, 25.0]), 1.0);
        assert_eq!(g.value_at([60.0, -33.0]), 1.0);
        assert!((g.total() - 3.0 * g_mass()).abs() < 1e-9);
    }

    fn g_mass() -> f64 {
        let mut g = MpmGrid::new(MapVariant::H, 1.0);
        g.stamp([0.0, 0.0]);
        g.total()
    }

    #[test]
    fn variant_a_sets_binary_disc() {
        let mut g = MpmGrid::new(MapVariant::A, 1.0);
        g.stamp([0.0, 0.0]);
        g.stamp([0.0, 0.0]);
        assert_eq!(g.get((3, 0)), 1.0);
        assert_eq!(g.get((3, 1)), 0.0);
        assert_eq!(g.max(), 1.0);
        assert!(g.cells().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn empty_crop_and_density() {
        let g = MpmGrid::new(MapVariant::H, 1.0);
        assert!(g.crop([3.0, 4.0], 8, 6).iter().all(|&v| v == 0.0));
        assert_eq!(g.exploration_density([0.0, 0.0], 2.0), 0.0);
    }

    #[test]
    fn crop_centers_on_stamp() {
        let mut g = MpmGrid::new(MapVariant::H, 1.0);
        g.stamp([5.0, 5.0]);
        g.stamp([5.0, 5.0]);
        let c = g.crop([5.0, 5.0], 64, 64);
        assert_eq!(c[[32, 32]], 1.0);
        assert_eq!(c.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn density_counts_repeated_stamps() {
        let mut g = MpmGrid::new(MapVariant::H, 1.0);
        for _ in 0..5 {
            g.stamp([1.0, 1.0]);
        }
        assert_eq!(g.exploration_density([1.0, 1.0], 0.0), 5.0);
    }

    #[test]
    fn variant_c_grows_with_revisits() {
        use crate::world::Detection;
        let det = |v: f64| Detection {
            ray: 3,
            descriptor: vec![v, (1.0 - v * v).sqrt()],
            depth: 1.0,
        };
        let obs = |v: f64| Observation {
            detections: vec![det(v)],
            ..Observation::blank(8, 1)
        };
        let mut m = MemoryMap::new(MapVariant::C, 1.0, 0.7);
        m.observe([0.0, 0.0], &obs(1.0));
        assert_eq!(m.grid.get((1, 0)), 1.0);
        assert_eq!(m.grid.get((2, 0)), 0.0);
        // same place seen again, projected elsewhere: the center's disc grows
        m.observe([9.0, 9.0], &obs(1.0));
        assert_eq!(m.grid.get((2, 0)), 1.0);
        assert_eq!(m.grid.value_at([9.0, 9.0]), 0.0);
        m.observe([9.0, 9.0], &obs(0.0));
        assert_eq!(m.cluster_count(), 2);
        assert_eq!(m.grid.value_at([9.0, 9.0]), 1.0);
    }

    #[test]
    fn pgm_export_writes_header_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let mut g = MpmGrid::new(MapVariant::H, 0.5);
        g.stamp([1.0, 1.0]);
        g.export_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (w, h) = g.shape();
        let header = format!("P5\n{w} {h}\n65535\n");
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + 2 * w * h);
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("resolution 0.5"));
        assert!(side.contains("sigma 1"));
    }

    #[test]
    fn variant_parsing() {
        for v in MapVariant::ALL {
            assert_eq!(v.to_string().parse::<MapVariant>().unwrap(), v);
            assert_eq!(MapVariant::from_code(v.code()), Some(v));
        }
        assert!("Q".parse::<MapVariant>().is_err());
    }
}
