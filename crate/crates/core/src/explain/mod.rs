//! Grad-CAM heatmaps, Shapley segment attributions and overlay rendering.

mod shapley;

use std::io::Cursor;

use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Classifier, FeatureMap};
use crate::pipeline::{resize_bilinear_n, PreprocessedImage, CHANNELS, IMAGE_SIZE};

pub use shapley::{
    gaussian_blur, segment_grid, shapley_attribution, shapley_values, to_pixel_map, Baseline, Segmentation,
    ShapleyMode, ShapleyResult, MAX_EXACT_SEGMENTS, MAX_SEGMENTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionMethod {
    Gradcam,
    Shapley,
}

impl std::str::FromStr for AttributionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gradcam" | "grad-cam" | "grad_cam" => Ok(Self::Gradcam),
            "shapley" | "shap" => Ok(Self::Shapley),
            other => Err(Error::Config(format!("unknown attribution method {other:?}"))),
        }
    }
}

/// Per-pixel attribution values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub method: AttributionMethod,
    pub target_category: usize,
}

impl AttributionMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::models::argmax(&self.values);
        (i / self.width, i % self.width)
    }
}

/// Raw Grad-CAM map `max(0, Σ_k α_k A_k)` with `α_k` the spatial mean of
/// `G_k`. Returns `h*w` values.
pub fn grad_cam_raw(a: &FeatureMap, g: &FeatureMap) -> Result<Vec<f64>> {
    if a.shape() != g.shape() {
        return Err(Error::Shape(format!(
            "activation shape {:?} differs from gradient shape {:?}",
            a.shape(),
            g.shape()
        )));
    }
    let alpha = g.channel_means();
    Ok(a.data
        .chunks_exact(a.channels)
        .map(|px| px.iter().zip(&alpha).map(|(v, w)| v * w).sum::<f64>().max(0.0))
        .collect())
}

/// Min-max normalization in place; a flat map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let span = hi - lo;
    values.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
}

/// Grad-CAM from tap maps: raw map, bilinear upsample to `out_h × out_w`,
/// min-max normalize.
pub fn grad_cam_from_maps(a: &FeatureMap, g: &FeatureMap, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    let raw = grad_cam_raw(a, g)?;
    let mut up = resize_bilinear_n(&raw, a.height, a.width, out_h, out_w, 1);
    min_max_normalize(&mut up);
    Ok(up)
}

pub fn grad_cam(classifier: &Classifier, image: &PreprocessedImage, target_category: usize) -> Result<AttributionMap> {
    let (a, g) = classifier.activations_and_grads(image, target_category)?;
    Ok(AttributionMap {
        height: IMAGE_SIZE,
        width: IMAGE_SIZE,
        values: grad_cam_from_maps(&a, &g, IMAGE_SIZE, IMAGE_SIZE)?,
        method: AttributionMethod::Gradcam,
        target_category,
    })
}

/// Jet colormap for `v` in `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f64| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

pub const DEFAULT_ALPHA: f64 = 0.4;

/// `(1 - alpha) * rgb + alpha * jet(map)` per pixel. `rgb` is channels last
/// with one map value per pixel.
pub fn blend(rgb: &[f64], map: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if rgb.len() != map.len() * CHANNELS {
        return Err(Error::Shape(format!("image has {} values but map has {} pixels", rgb.len(), map.len())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(rgb.len());
    for (px, &m) in rgb.chunks_exact(CHANNELS).zip(map) {
        let color = jet(m);
        for c in 0..CHANNELS {
            out.push((1.0 - alpha) * px[c] + alpha * color[c]);
        }
    }
    Ok(out)
}

pub fn overlay_rgb(image: &PreprocessedImage, map: &AttributionMap, alpha: f64) -> Result<RgbImage> {
    if map.height != IMAGE_SIZE || map.width != IMAGE_SIZE {
        return Err(Error::Shape(format!("map is {}×{}, image is {IMAGE_SIZE}×{IMAGE_SIZE}", map.height, map.width)));
    }
    let blended = blend(&image.pixels, &map.values, alpha)?;
    let bytes = blended.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    Ok(RgbImage::from_raw(IMAGE_SIZE as u32, IMAGE_SIZE as u32, bytes).expect("buffer size matches"))
}

/// Colormapped map alpha-blended over the image, encoded as PNG.
pub fn overlay(image: &PreprocessedImage, map: &AttributionMap, alpha: f64) -> Result<Vec<u8>> {
    encode_png(&overlay_rgb(image, map, alpha)?)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Config(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// JSON export of an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationExport {
    pub method: AttributionMethod,
    pub target: String,
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_value: Option<f64>,
}

impl ExplanationExport {
    pub fn gradcam(map: &AttributionMap, target: &str) -> Self {
        Self {
            method: AttributionMethod::Gradcam,
            target: target.to_string(),
            height: map.height,
            width: map.width,
            values: Some(map.values.clone()),
            phi: None,
            segments: None,
            base_value: None,
            full_value: None,
        }
    }

    pub fn shapley(result: &ShapleyResult, seg: &Segmentation, target: &str) -> Self {
        Self {
            method: AttributionMethod::Shapley,
            target: target.to_string(),
            height: seg.height,
            width: seg.width,
            values: None,
            phi: Some(result.phi.clone()),
            segments: Some(seg.grid),
            base_value: Some(result.base_value),
            full_value: Some(result.full_value),
        }
    }
}
