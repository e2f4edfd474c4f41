use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttributionMap, AttributionMethod};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::pipeline::{PreprocessedImage, CHANNELS, IMAGE_SIZE};

pub const MAX_SEGMENTS: usize = 16;
/// Exact mode enumerates all `2^n` coalitions.
pub const MAX_EXACT_SEGMENTS: usize = 12;

/// Segment id per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub height: usize,
    pub width: usize,
    /// Grid rows and columns.
    pub grid: [usize; 2],
    pub ids: Vec<u8>,
    pub n_segments: usize,
}

impl Segmentation {
    pub fn segment_of(&self, y: usize, x: usize) -> usize {
        self.ids[y * self.width + x] as usize
    }

    /// Pixel count per segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_segments];
        self.ids.iter().for_each(|&id| out[id as usize] += 1);
        out
    }
}

/// Row-major block segmentation of a 224×224 image. Both grid sides must
/// divide 224 and the product may not exceed 16.
pub fn segment_grid(rows: usize, cols: usize) -> Result<Segmentation> {
    for side in [rows, cols] {
        if side == 0 || IMAGE_SIZE % side != 0 {
            return Err(Error::Config(format!("grid side {side} does not divide {IMAGE_SIZE}")));
        }
    }
    let n = rows * cols;
    if n > MAX_SEGMENTS {
        return Err(Error::Config(format!("{n} segments exceed the limit of {MAX_SEGMENTS}")));
    }
    let (bh, bw) = (IMAGE_SIZE / rows, IMAGE_SIZE / cols);
    let ids =
        (0..IMAGE_SIZE * IMAGE_SIZE).map(|i| ((i / IMAGE_SIZE / bh) * cols + (i % IMAGE_SIZE) / bw) as u8).collect();
    Ok(Segmentation { height: IMAGE_SIZE, width: IMAGE_SIZE, grid: [rows, cols], ids, n_segments: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ShapleyMode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

/// Pixels substituted for masked segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Baseline {
    Blur { sigma: f64 },
    Gray,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Blur { sigma: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub phi: Vec<f64>,
    /// Value with every segment masked.
    pub base_value: f64,
    /// Value on the intact input.
    pub full_value: f64,
    pub mode: ShapleyMode,
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// Shapley values of an `n`-player game. `v` receives a coalition as a
/// bitmask (bit `i` set means player `i` is present).
pub fn shapley_values<F>(n: usize, v: F, mode: ShapleyMode) -> Result<ShapleyResult>
where
    F: Fn(u32) -> Result<f64> + Sync,
{
    if n == 0 || n > MAX_SEGMENTS {
        return Err(Error::Config(format!("player count {n} outside 1..={MAX_SEGMENTS}")));
    }
    let full = (1u32 << n) - 1;
    match mode {
        ShapleyMode::Exact => {
            if n > MAX_EXACT_SEGMENTS {
                return Err(Error::Config(format!(
                    "exact Shapley needs at most {MAX_EXACT_SEGMENTS} segments, got {n}; use sampled mode"
                )));
            }
            let values: Vec<f64> = (0..=full).into_par_iter().map(&v).collect::<Result<_>>()?;
            let f = factorials(n);
            let phi = (0..n)
                .map(|i| {
                    let bit = 1u32 << i;
                    (0..=full)
                        .filter(|s| s & bit == 0)
                        .map(|s| {
                            let size = s.count_ones() as usize;
                            f[size] * f[n - size - 1] / f[n] * (values[(s | bit) as usize] - values[s as usize])
                        })
                        .sum()
                })
                .collect();
            Ok(ShapleyResult { phi, base_value: values[0], full_value: values[full as usize], mode })
        }
        ShapleyMode::Sampled { permutations, seed } => {
            if permutations == 0 {
                return Err(Error::Config("sampled Shapley needs at least one permutation".into()));
            }
            let mut cache: HashMap<u32, f64> = HashMap::new();
            let mut value = |s: u32| -> Result<f64> {
                if let Some(&x) = cache.get(&s) {
                    return Ok(x);
                }
                let x = v(s)?;
                cache.insert(s, x);
                Ok(x)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            let mut sums = vec![0.0; n];
            let base_value = value(0)?;
            for _ in 0..permutations {
                order.shuffle(&mut rng);
                let mut s = 0u32;
                let mut prev = base_value;
                for &i in &order {
                    s |= 1 << i;
                    let cur = value(s)?;
                    sums[i] += cur - prev;
                    prev = cur;
                }
            }
            Ok(ShapleyResult {
                phi: sums.iter().map(|x| x / permutations as f64).collect(),
                base_value,
                full_value: value(full)?,
                mode,
            })
        }
    }
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(image: &PreprocessedImage, sigma: f64) -> PreprocessedImage {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let n = IMAGE_SIZE as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..n {
            for x in 0..n {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for (k, d) in kernel.iter().zip(-radius..=radius) {
                        let (sy, sx) =
                            if horizontal { (y, (x + d).clamp(0, n - 1)) } else { ((y + d).clamp(0, n - 1), x) };
                        acc += k * src[((sy * n + sx) as usize) * CHANNELS + c];
                    }
                    out[((y * n + x) as usize) * CHANNELS + c] = acc.clamp(0.0, 1.0);
                }
            }
        }
        out
    };
    let h = pass(&image.pixels, true);
    PreprocessedImage { pixels: pass(&h, false), source_id: image.source_id.clone() }
}

fn baseline_image(image: &PreprocessedImage, baseline: Baseline) -> PreprocessedImage {
    match baseline {
        Baseline::Blur { sigma } => gaussian_blur(image, sigma),
        Baseline::Gray => PreprocessedImage::filled(0.5, image.source_id.clone()),
    }
}

/// Shapley attribution over segments. The value of a coalition is the
/// target-category probability with every segment outside it replaced by
/// baseline pixels.
pub fn shapley_attribution(
    classifier: &Classifier,
    image: &PreprocessedImage,
    seg: &Segmentation,
    target_category: usize,
    mode: ShapleyMode,
    baseline: Baseline,
) -> Result<ShapleyResult> {
    if seg.height != IMAGE_SIZE || seg.width != IMAGE_SIZE {
        return Err(Error::Shape("segmentation does not cover a 224×224 image".into()));
    }
    if target_category >= classifier.taxonomy().len() {
        return Err(Error::Label(format!("target category {target_category} out of range")));
    }
    let masked = baseline_image(image, baseline);
    let v = |coalition: u32| -> Result<f64> {
        let mut pixels = masked.pixels.clone();
        for (p, &id) in seg.ids.iter().enumerate() {
            if coalition & (1 << id) != 0 {
                let r = p * CHANNELS..(p + 1) * CHANNELS;
                pixels[r.clone()].copy_from_slice(&image.pixels[r]);
            }
        }
        let probe = PreprocessedImage { pixels, source_id: image.source_id.clone() };
        Ok(classifier.predict(&probe)?[target_category])
    };
    shapley_values(seg.n_segments, v, mode)
}

/// Diverging pixel map: `0.5 + φ / (2 max|φ|)`; all-zero φ gives 0.5
/// everywhere.
pub fn to_pixel_map(result: &ShapleyResult, seg: &Segmentation, target_category: usize) -> AttributionMap {
    let scale = result.phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let seg_value: Vec<f64> =
        result.phi.iter().map(|p| if scale > 0.0 { (0.5 + p / (2.0 * scale)).clamp(0.0, 1.0) } else { 0.5 }).collect();
    AttributionMap {
        height: seg.height,
        width: seg.width,
        values: seg.ids.iter().map(|&id| seg_value[id as usize]).collect(),
        method: AttributionMethod::Shapley,
        target_category,
    }
}
