//! Procedural nail images for desk-scale experiments: a tinted nail ellipse
//! on a skin background with one motif per category.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::mix_seed;
use crate::error::{Error, Result};
use crate::explain::encode_png;
use crate::taxonomy::{CATEGORY_NAMES, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    /// Dark longitudinal band.
    Streak,
    Plain,
    /// Thickened darker rim.
    ThickRim,
    /// Hue only.
    Tint,
    /// Wider, bulged outline.
    Bulge,
    /// 5 to 12 dark dots.
    Pits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub category: &'static str,
    pub nail_rgb: [f64; 3],
    pub marker: Marker,
}

/// Indexed like the canonical taxonomy.
pub const MOTIFS: [Motif; NUM_CLASSES] = [
    Motif { category: CATEGORY_NAMES[0], nail_rgb: [0.50, 0.32, 0.25], marker: Marker::Streak },
    Motif { category: CATEGORY_NAMES[1], nail_rgb: [0.96, 0.78, 0.78], marker: Marker::Plain },
    Motif { category: CATEGORY_NAMES[2], nail_rgb: [0.85, 0.78, 0.30], marker: Marker::ThickRim },
    Motif { category: CATEGORY_NAMES[3], nail_rgb: [0.40, 0.50, 0.95], marker: Marker::Tint },
    Motif { category: CATEGORY_NAMES[4], nail_rgb: [0.95, 0.55, 0.35], marker: Marker::Bulge },
    Motif { category: CATEGORY_NAMES[5], nail_rgb: [0.70, 0.85, 0.95], marker: Marker::Pits },
];

const SKIN: [f64; 3] = [0.86, 0.67, 0.55];
const STREAK: [f64; 3] = [0.28, 0.18, 0.14];
const RIM: [f64; 3] = [0.55, 0.45, 0.25];
const PIT: [f64; 3] = [0.45, 0.35, 0.35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub per_category: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Multiplier on the nail's semi-axes.
    pub nail_scale: f64,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { per_category: 100, seed: 7, image_size: 224, nail_scale: 1.5, noise_std: 0.02 }
    }
}

/// Draws image `index` of `category`. Depends only on the `SynthSpec`, the
/// category and the index.
pub fn render(spec: &SynthSpec, category: usize, index: usize) -> RgbImage {
    let motif = &MOTIFS[category];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(spec.seed, category as u64), index as u64));
    let s = spec.image_size;
    let sf = s as f64;
    let k = sf / 224.0;

    let skin: Vec<f64> = SKIN.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect();
    let cx = sf / 2.0 + rng.random_range(-12.0..12.0) * k;
    let cy = sf / 2.0 + rng.random_range(-12.0..12.0) * k;
    let mut a = rng.random_range(42.0..50.0) * spec.nail_scale * k;
    let mut b = rng.random_range(58.0..68.0) * spec.nail_scale * k;
    if motif.marker == Marker::Bulge {
        a *= 1.3;
        b *= 1.05;
    }
    let th: f64 = rng.random_range(-0.15..0.15);
    let (ct, st) = (th.cos(), th.sin());
    let nail: Vec<f64> = motif.nail_rgb.iter().map(|c| c + rng.random_range(-0.04..0.04)).collect();

    let rim = 1.0 - rng.random_range(0.15..0.22);
    let streak_off = rng.random_range(-0.3..0.3) * a;
    let streak_half = rng.random_range(5.0..8.0) * k;
    let pits: Vec<(f64, f64, f64)> = if motif.marker == Marker::Pits {
        (0..rng.random_range(5..=12))
            .map(|_| {
                let rr = rng.random_range(0.0f64..0.7).sqrt();
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                (cx + rr * a * ang.cos(), cy + rr * b * ang.sin(), rng.random_range(3.0..5.0) * k)
            })
            .collect()
    } else {
        Vec::new()
    };

    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let mut buf = Vec::with_capacity(s * s * 3);
    for py in 0..s {
        let y = py as f64 + 0.5;
        let shade = 1.0 + 0.05 * (y / sf - 0.5);
        for px in 0..s {
            let x = px as f64 + 0.5;
            let u = (x - cx) * ct + (y - cy) * st;
            let v = -(x - cx) * st + (y - cy) * ct;
            let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            let mut color = [skin[0] * shade, skin[1] * shade, skin[2] * shade];
            if r < 1.0 {
                color.copy_from_slice(&nail);
                match motif.marker {
                    Marker::ThickRim if r > rim => color = RIM,
                    Marker::Streak if (u - streak_off).abs() < streak_half => color = STREAK,
                    Marker::Pits if pits.iter().any(|&(qx, qy, qr)| (x - qx).powi(2) + (y - qy).powi(2) < qr * qr) => {
                        color = PIT;
                    }
                    _ => {}
                }
            }
            for c in color {
                let val = c + noise.sample(&mut rng);
                buf.push((val * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(s as u32, s as u32, buf).expect("buffer size matches")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
    pub per_category: [usize; NUM_CLASSES],
}

/// Writes `<root>/<category>/<category>_<index>.png` for every category.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<SynthReport> {
    if spec.image_size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    for motif in &MOTIFS {
        let dir = root.join(motif.category);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let jobs: Vec<(usize, usize)> =
        (0..NUM_CLASSES).flat_map(|c| (0..spec.per_category).map(move |i| (c, i))).collect();
    let files = jobs
        .par_iter()
        .map(|&(c, i)| {
            let name = MOTIFS[c].category;
            let path = root.join(name).join(format!("{name}_{i:04}.png"));
            let png = encode_png(&render(spec, c, i))?;
            std::fs::write(&path, png).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthReport { root: root.to_path_buf(), files, per_category: [spec.per_category; NUM_CLASSES] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let spec = SynthSpec::default();
        for c in 0..NUM_CLASSES {
            assert_eq!(render(&spec, c, 3), render(&spec, c, 3));
            assert_ne!(render(&spec, c, 3), render(&spec, c, 4));
        }
    }

    #[test]
    fn motif_table_follows_taxonomy() {
        for (m, name) in MOTIFS.iter().zip(CATEGORY_NAMES) {
            assert_eq!(m.category, name);
        }
        let blue = MOTIFS[3].nail_rgb;
        assert!(blue[2] > blue[0] && blue[2] > blue[1]);
    }

    #[test]
    fn nail_center_carries_category_hue() {
        let spec = SynthSpec { noise_std: 0.0, ..SynthSpec::default() };
        let img = render(&spec, 3, 0);
        let p = img.get_pixel(112, 112);
        assert!(p[2] > p[0] + 80);
    }
}
