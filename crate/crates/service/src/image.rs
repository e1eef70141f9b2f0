//! Netpbm renderings for the teleop client.

use ndarray::Array2;

use feudalnav_core::Observation;

pub const STRIP_HEIGHT: usize = 16;

/// Binary PPM, one column per ray (ray 0 leftmost). Color comes from the
/// first three appearance channels (a single channel is shown as gray);
/// brightness falls off as 1 / (1 + depth).
pub fn strip_ppm(obs: &Observation, max_range: f64) -> Vec<u8> {
    let rays = obs.rays();
    let app = obs.app_channels();
    let mut out = format!("P6\n{rays} {STRIP_HEIGHT}\n255\n").into_bytes();
    let column: Vec<[u8; 3]> = (0..rays)
        .map(|i| {
            let depth = obs.depth[i].clamp(0.0, max_range);
            let b = 1.0 / (1.0 + depth);
            let mut rgb = [0u8; 3];
            for (c, px) in rgb.iter_mut().enumerate() {
                let v = obs.appearance_at(c.min(app - 1), i).clamp(0.0, 1.0);
                *px = (v * b * 255.0).round() as u8;
            }
            rgb
        })
        .collect();
    for _ in 0..STRIP_HEIGHT {
        for px in &column {
            out.extend_from_slice(px);
        }
    }
    out
}

/// 8-bit binary PGM of a normalized crop; the top image row is the highest y.
pub fn crop_pgm(crop: &Array2<f64>) -> Vec<u8> {
    let (h, w) = crop.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for r in (0..h).rev() {
        for c in 0..w {
            out.push((crop[[r, c]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}
