//! Decoding, resizing, augmentation and batching.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mix_seed, DatasetManifest, Partition, SplitAssignment};
use crate::error::{Error, Result};
use crate::taxonomy::NUM_CLASSES;

pub const IMAGE_SIZE: usize = 224;
pub const CHANNELS: usize = 3;
pub const PIXELS_PER_IMAGE: usize = IMAGE_SIZE * IMAGE_SIZE * CHANNELS;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// A 224×224×3 image, row-major, channels last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub pixels: Vec<f64>,
    pub source_id: String,
}

impl PreprocessedImage {
    pub fn new(pixels: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if pixels.len() != PIXELS_PER_IMAGE {
            return Err(Error::Shape(format!("expected {PIXELS_PER_IMAGE} pixel values, got {}", pixels.len())));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, source_id: source_id.into() })
    }

    pub fn filled(value: f64, source_id: impl Into<String>) -> Self {
        Self { pixels: vec![value.clamp(0.0, 1.0); PIXELS_PER_IMAGE], source_id: source_id.into() }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * IMAGE_SIZE + x) * CHANNELS + c]
    }

    /// Quantizes to 8-bit RGB.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let data = self.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        image::RgbImage::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, data).expect("buffer size matches")
    }
}

/// Decodes JPG/PNG bytes and bilinearly resizes to 224×224 with values in
/// `[0, 1]`.
pub fn load_and_resize(bytes: &[u8], sample_id: &str) -> Result<PreprocessedImage> {
    let decoded = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Decode { sample_id: sample_id.to_string(), reason: e.to_string() })?
        .decode()
        .map_err(|e| Error::Decode { sample_id: sample_id.to_string(), reason: e.to_string() })?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let src: Vec<f64> = decoded.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    let pixels = resize_bilinear(&src, h as usize, w as usize, IMAGE_SIZE, IMAGE_SIZE);
    Ok(PreprocessedImage { pixels, source_id: sample_id.to_string() })
}

/// Bilinear resampling with half-pixel centers and edge clamping, channels
/// last with three channels.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    resize_bilinear_n(src, sh, sw, dh, dw, CHANNELS)
}

/// [`resize_bilinear`] for any channel count.
pub fn resize_bilinear_n(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize, channels: usize) -> Vec<f64> {
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f64)> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(s - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(dh, sh);
    let xs = axis(dw, sw);
    let mut out = vec![0.0; dh * dw * channels];
    let px = |y: usize, x: usize, c: usize| src[(y * sw + x) * channels + c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let top = lerp(px(y0, x0, c), px(y0, x1, c), fx);
                let bottom = lerp(px(y1, x0, c), px(y1, x1, c), fx);
                out[(oy * dw + ox) * channels + c] = lerp(top, bottom, fy);
            }
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        a + (b - a) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub horizontal_flip: bool,
    pub rotation_max_degrees: f64,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            horizontal_flip: true,
            rotation_max_degrees: 15.0,
            brightness_jitter: 0.1,
            contrast_jitter: 0.1,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.rotation_max_degrees) {
            return Err(Error::Config("rotation_max_degrees must be >= 0".into()));
        }
        for (name, v) in [("brightness_jitter", self.brightness_jitter), ("contrast_jitter", self.contrast_jitter)] {
            if !finite_nonneg(v) || v > 1.0 {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Mirrors the image left to right.
pub fn flip_horizontal(img: &PreprocessedImage) -> PreprocessedImage {
    let mut out = img.clone();
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let src = (y * IMAGE_SIZE + (IMAGE_SIZE - 1 - x)) * CHANNELS;
            let dst = (y * IMAGE_SIZE + x) * CHANNELS;
            out.pixels[dst..dst + CHANNELS].copy_from_slice(&img.pixels[src..src + CHANNELS]);
        }
    }
    out
}

/// Rotates about the image center with bilinear sampling; samples outside the
/// frame are clamped to the nearest edge pixel.
pub fn rotate(img: &PreprocessedImage, degrees: f64) -> PreprocessedImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let c = (IMAGE_SIZE as f64 - 1.0) / 2.0;
    let max = (IMAGE_SIZE - 1) as f64;
    let mut out = img.clone();
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let sx = (cos * dx + sin * dy + c).clamp(0.0, max);
            let sy = (-sin * dx + cos * dy + c).clamp(0.0, max);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(IMAGE_SIZE - 1), (y0 + 1).min(IMAGE_SIZE - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..CHANNELS {
                let top = lerp(img.at(y0, x0, ch), img.at(y0, x1, ch), fx);
                let bottom = lerp(img.at(y1, x0, ch), img.at(y1, x1, ch), fx);
                out.pixels[(y * IMAGE_SIZE + x) * CHANNELS + ch] = lerp(top, bottom, fy);
            }
        }
    }
    out
}

/// Applies the configured random transforms, deterministically for a seed.
/// The output is clipped to `[0, 1]`.
pub fn augment(img: &PreprocessedImage, cfg: &AugmentationConfig, seed: u64) -> PreprocessedImage {
    if !cfg.enabled {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Every draw happens regardless of which transforms are active so that a
    // given seed maps to the same parameters under any config.
    let flip = rng.random_bool(0.5);
    let angle = rng.random_range(-1.0..=1.0) * cfg.rotation_max_degrees;
    let brightness = 1.0 + rng.random_range(-1.0..=1.0) * cfg.brightness_jitter;
    let contrast = 1.0 + rng.random_range(-1.0..=1.0) * cfg.contrast_jitter;

    let mut out = if cfg.horizontal_flip && flip { flip_horizontal(img) } else { img.clone() };
    if cfg.rotation_max_degrees > 0.0 {
        out = rotate(&out, angle);
    }
    if cfg.brightness_jitter > 0.0 {
        out.pixels.iter_mut().for_each(|v| *v *= brightness);
    }
    if cfg.contrast_jitter > 0.0 {
        let mut mean = [0.0; CHANNELS];
        for px in out.pixels.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                mean[c] += px[c];
            }
        }
        let n = (IMAGE_SIZE * IMAGE_SIZE) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        for px in out.pixels.chunks_exact_mut(CHANNELS) {
            for c in 0..CHANNELS {
                if px[c] != mean[c] {
                    px[c] = mean[c] + (px[c] - mean[c]) * contrast;
                }
            }
        }
    }
    out.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// A batch of images with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Vec<PreprocessedImage>,
    pub labels: Vec<[f64; NUM_CLASSES]>,
}

pub fn one_hot(category: usize) -> [f64; NUM_CLASSES] {
    let mut row = [0.0; NUM_CLASSES];
    row[category] = 1.0;
    row
}

impl ImageBatch {
    pub fn new(images: Vec<PreprocessedImage>, categories: &[usize]) -> Result<Self> {
        if let Some(&bad) = categories.iter().find(|&&c| c >= NUM_CLASSES) {
            return Err(Error::Label(format!("category index {bad} out of range")));
        }
        Self::with_label_rows(images, categories.iter().map(|&c| one_hot(c)).collect())
    }

    /// Builds a batch from raw label rows. Rows are not checked for being
    /// one-hot here; the loss rejects rows that are not.
    pub fn with_label_rows(images: Vec<PreprocessedImage>, labels: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("a batch needs at least one image".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} label rows", images.len(), labels.len())));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<&str> {
        self.images.iter().map(|i| i.source_id.as_str()).collect()
    }

    /// Category index of each row; fails if a row is not one-hot.
    pub fn categories(&self) -> Result<Vec<usize>> {
        self.labels.iter().map(one_hot_index).collect()
    }

    /// Appends another batch (used to mix clean and adversarial halves).
    pub fn concat(mut self, other: ImageBatch) -> Self {
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        self
    }
}

pub fn one_hot_index(row: &[f64; NUM_CLASSES]) -> Result<usize> {
    let mut hot = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::Label(format!("label row {row:?} is not one-hot")));
            }
            hot = Some(j);
        } else if v != 0.0 {
            return Err(Error::Label(format!("label row {row:?} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::Label(format!("label row {row:?} is not one-hot")))
}

/// Decoded images of a dataset, held in memory with their categories.
///
/// Pixels are cached as `f32` to halve the footprint; batches widen them
/// back to `f64`.
#[derive(Debug, Clone)]
pub struct ImageStore {
    images: HashMap<String, (usize, Arc<[f32]>)>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self { images: HashMap::new() }
    }

    /// Decodes every manifest entry below `root`.
    pub fn load(manifest: &DatasetManifest, root: &Path) -> Result<Self> {
        let decoded: Vec<(String, usize, Arc<[f32]>)> = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = root.join(&e.path);
                let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
                let img = load_and_resize(&bytes, &e.id)?;
                Ok((e.id.clone(), e.category, to_f32(&img.pixels)))
            })
            .collect::<Result<_>>()?;
        let mut store = Self::new();
        for (id, category, pixels) in decoded {
            store.images.insert(id, (category, pixels));
        }
        Ok(store)
    }

    pub fn insert(&mut self, img: &PreprocessedImage, category: usize) {
        self.images.insert(img.source_id.clone(), (category, to_f32(&img.pixels)));
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn category(&self, id: &str) -> Option<usize> {
        self.images.get(id).map(|(c, _)| *c)
    }

    pub fn get(&self, id: &str) -> Result<PreprocessedImage> {
        let (_, px) = self.images.get(id).ok_or_else(|| Error::Config(format!("sample {id} not in image store")))?;
        Ok(PreprocessedImage { pixels: px.iter().map(|&v| v as f64).collect(), source_id: id.to_string() })
    }
}

impl Default for ImageStore {
    fn default() -> Self {
        Self::new()
    }
}

fn to_f32(pixels: &[f64]) -> Arc<[f32]> {
    pixels.iter().map(|&v| v as f32).collect()
}

/// A loaded dataset together with its split: the input to training and
/// evaluation.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub store: Arc<ImageStore>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitData {
    pub fn from_split(store: Arc<ImageStore>, manifest: &DatasetManifest, split: &SplitAssignment) -> Self {
        let ids = |p| split.ids(manifest, p).into_iter().map(String::from).collect::<Vec<_>>();
        Self { train: ids(Partition::Train), val: ids(Partition::Val), test: ids(Partition::Test), store }
    }

    pub fn ids(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Sample order for one epoch of a partition: train ids are shuffled with
/// `shuffle_seed`, val/test keep their given order.
pub fn epoch_order(ids: &[String], part: Partition, shuffle_seed: u64) -> Vec<String> {
    let mut order = ids.to_vec();
    if part == Partition::Train {
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        order.shuffle(&mut rng);
    }
    order
}

/// Iterator over the batches of one epoch.
pub struct BatchStream<'a> {
    store: &'a ImageStore,
    order: Vec<String>,
    part: Partition,
    batch_size: usize,
    augmentation: AugmentationConfig,
    shuffle_seed: u64,
    cursor: usize,
}

/// Streams batches of `ids` drawn from `store`. The last partial batch is
/// kept. Augmentation applies only to the train partition.
pub fn make_batches<'a>(
    store: &'a ImageStore,
    ids: &[String],
    part: Partition,
    batch_size: usize,
    shuffle_seed: u64,
    augmentation: &AugmentationConfig,
) -> Result<BatchStream<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    augmentation.validate()?;
    Ok(BatchStream {
        store,
        order: epoch_order(ids, part, shuffle_seed),
        part,
        batch_size,
        augmentation: augmentation.clone(),
        shuffle_seed,
        cursor: 0,
    })
}

impl BatchStream<'_> {
    pub fn order(&self) -> &[String] {
        &self.order
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<ImageBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let start = self.cursor;
        self.cursor = end;
        let augment_on = self.part == Partition::Train && self.augmentation.enabled;
        let loaded: Result<Vec<(PreprocessedImage, usize)>> = self.order[start..end]
            .par_iter()
            .enumerate()
            .map(|(k, id)| {
                let img = self.store.get(id)?;
                let category = self.store.category(id).expect("present after get");
                let img = if augment_on {
                    augment(&img, &self.augmentation, mix_seed(self.shuffle_seed, (start + k) as u64))
                } else {
                    img
                };
                Ok((img, category))
            })
            .collect();
        Some(loaded.and_then(|items| {
            let (images, cats): (Vec<_>, Vec<_>) = items.into_iter().unzip();
            ImageBatch::new(images, &cats)
        }))
    }
}
