//! Classifier abstraction: a backbone feature extractor plus a global
//! average pooling → affine → softmax head.

mod checkpoint;
mod tiny;

use std::any::Any;
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMetadata, CheckpointMetrics, PreprocessInfo};
pub use tiny::{TinyCnn, INPUT_MEAN, INPUT_SCALE, TINY_PARAM_COUNT};

use crate::error::{Error, Result};
use crate::pipeline::{ImageBatch, PreprocessedImage, CHANNELS, IMAGE_SIZE};
use crate::taxonomy::{LabelTaxonomy, NUM_CLASSES};

/// Clamp added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    InceptionV3,
    Densenet201,
    EfficientnetV2,
    Resnet50,
    TinyTest,
}

impl BackboneId {
    pub const ALL: [BackboneId; 5] = [
        BackboneId::InceptionV3,
        BackboneId::Densenet201,
        BackboneId::EfficientnetV2,
        BackboneId::Resnet50,
        BackboneId::TinyTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneId::InceptionV3 => "inception_v3",
            BackboneId::Densenet201 => "densenet201",
            BackboneId::EfficientnetV2 => "efficientnet_v2",
            BackboneId::Resnet50 => "resnet50",
            BackboneId::TinyTest => "tiny_test",
        }
    }

    pub fn is_pretrained(self) -> bool {
        self != BackboneId::TinyTest
    }
}

impl fmt::Display for BackboneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| Error::UnknownBackbone(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: BackboneId,
    pub input_shape: [usize; 3],
    /// Name of the last convolutional feature map; Grad-CAM reads it.
    pub gradcam_tap: String,
    /// `[h, w, k]` of the tap at the 224×224 input size.
    pub tap_shape: [usize; 3],
    pub provenance: String,
}

impl BackboneSpec {
    pub fn for_id(id: BackboneId) -> Self {
        let (tap, shape, provenance) = match id {
            BackboneId::InceptionV3 => ("mixed10", [5, 5, 2048], "ImageNet weights (keras.applications.InceptionV3)"),
            BackboneId::Densenet201 => ("relu", [7, 7, 1920], "ImageNet weights (keras.applications.DenseNet201)"),
            BackboneId::EfficientnetV2 => (
                "top_activation",
                [7, 7, 1280],
                "ImageNet weights (keras.applications.EfficientNetV2B0, smallest variant)",
            ),
            BackboneId::Resnet50 => {
                ("conv5_block3_out", [7, 7, 2048], "ImageNet weights (keras.applications.ResNet50)")
            }
            BackboneId::TinyTest => ("pool2", [56, 56, 16], "seeded He-normal initialization, no download"),
        };
        Self {
            id,
            input_shape: [IMAGE_SIZE, IMAGE_SIZE, CHANNELS],
            gradcam_tap: tap.to_string(),
            tap_shape: shape,
            provenance: provenance.to_string(),
        }
    }
}

/// A channels-last `h × w × k` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self { height, width, channels, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + k]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Spatial mean of every channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (o, v) in out.iter_mut().zip(px) {
                *o += v;
            }
        }
        let n = (self.height * self.width) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Result of a backbone forward pass: the tap feature map and whatever the
/// backbone needs to run its backward pass.
pub struct BackboneTrace {
    pub tap: FeatureMap,
    pub cache: Box<dyn Any + Send + Sync>,
}

/// A feature extractor mapping a 224×224×3 unit-interval image to its tap
/// feature map, with exact gradients.
/// `(parameter gradient, input gradient)` from a backward pass.
pub type BackwardGrads = (Option<Vec<f64>>, Option<Vec<f64>>);

pub trait Backbone: Send + Sync + fmt::Debug {
    fn spec(&self) -> &BackboneSpec;
    fn num_params(&self) -> usize;
    /// Named parameter arrays in flattening order.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn forward(&self, image: &[f64]) -> Result<BackboneTrace>;
    /// Back-propagates `d_tap` (gradient of a scalar w.r.t. the tap map).
    /// Returns `(parameter gradient, input gradient)`, each present when asked.
    fn backward(
        &self,
        trace: &BackboneTrace,
        d_tap: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> Result<BackwardGrads>;
    fn clone_box(&self) -> Box<dyn Backbone>;
}

impl Clone for Box<dyn Backbone> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

type AdapterFn = dyn Fn(&BackboneSpec, &Path) -> Result<Box<dyn Backbone>> + Send + Sync;

/// Supplies pretrained backbones. Weights are looked up in
/// `<root>/<backbone id>/`; an adapter registered for the id turns that
/// directory into a runnable backbone.
#[derive(Clone)]
pub struct WeightsProvider {
    root: PathBuf,
    adapters: HashMap<BackboneId, Arc<AdapterFn>>,
}

impl fmt::Debug for WeightsProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightsProvider")
            .field("root", &self.root)
            .field("adapters", &self.adapters.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl WeightsProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), adapters: HashMap::new() }
    }

    /// Root from `NAILGUARD_WEIGHTS`, falling back to `./weights`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os("NAILGUARD_WEIGHTS").map_or_else(|| PathBuf::from("weights"), PathBuf::from))
    }

    pub fn register(
        &mut self,
        id: BackboneId,
        adapter: impl Fn(&BackboneSpec, &Path) -> Result<Box<dyn Backbone>> + Send + Sync + 'static,
    ) {
        self.adapters.insert(id, Arc::new(adapter));
    }

    pub fn load(&self, spec: &BackboneSpec) -> Result<Box<dyn Backbone>> {
        let dir = self.root.join(spec.id.as_str());
        if !dir.is_dir() {
            return Err(Error::MissingWeights { backbone: spec.id.to_string(), path: dir });
        }
        let adapter = self.adapters.get(&spec.id).ok_or_else(|| {
            Error::Config(format!(
                "weights for {} found at {} but no backbone adapter is registered",
                spec.id,
                dir.display()
            ))
        })?;
        adapter(spec, &dir)
    }
}

/// Which gradients [`Classifier::loss_and_grads`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Params,
    Input,
    Both,
}

impl Wrt {
    fn params(self) -> bool {
        matches!(self, Wrt::Params | Wrt::Both)
    }

    fn input(self) -> bool {
        matches!(self, Wrt::Input | Wrt::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `[category][feature]`.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
    pub features: usize,
}

impl Head {
    pub fn zeros(features: usize) -> Self {
        Self { weights: vec![0.0; NUM_CLASSES * features], bias: [0.0; NUM_CLASSES], features }
    }

    pub fn logits(&self, pooled: &[f64]) -> [f64; NUM_CLASSES] {
        let mut out = self.bias;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.features..(c + 1) * self.features];
            *o += row.iter().zip(pooled).map(|(w, f)| w * f).sum::<f64>();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<[f64; NUM_CLASSES]>,
    pub probs: Vec<[f64; NUM_CLASSES]>,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    pub loss: f64,
    pub probs: Vec<[f64; NUM_CLASSES]>,
    /// Gradient of the mean loss w.r.t. the flattened parameters.
    pub params: Option<Vec<f64>>,
    /// Gradient of the mean loss w.r.t. each input image.
    pub inputs: Option<Vec<Vec<f64>>>,
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// `−Σ y_j ln(p_j + 1e-12)` for one row.
pub fn cross_entropy(probs: &[f64; NUM_CLASSES], label: &[f64; NUM_CLASSES]) -> f64 {
    -probs.iter().zip(label).map(|(p, y)| y * (p + LOG_EPS).min(1.0).ln()).sum::<f64>()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Classifier {
    backbone: Box<dyn Backbone>,
    pub head: Head,
    taxonomy: LabelTaxonomy,
    /// When false only the head is trained.
    pub fine_tune_backbone: bool,
}

impl Classifier {
    /// Builds a classifier. `tiny_test` is constructed locally from `seed`;
    /// every other backbone must come from `provider`. The head starts at
    /// zero so every class begins equiprobable.
    pub fn build(id: BackboneId, provider: &WeightsProvider, seed: u64) -> Result<Self> {
        let spec = BackboneSpec::for_id(id);
        let backbone: Box<dyn Backbone> = match id {
            BackboneId::TinyTest => Box::new(TinyCnn::new(seed)),
            _ => provider.load(&spec)?,
        };
        Ok(Self::from_parts(backbone, LabelTaxonomy::nail()))
    }

    pub fn tiny(seed: u64) -> Self {
        Self::from_parts(Box::new(TinyCnn::new(seed)), LabelTaxonomy::nail())
    }

    pub fn from_parts(backbone: Box<dyn Backbone>, taxonomy: LabelTaxonomy) -> Self {
        let features = backbone.spec().tap_shape[2];
        Self { backbone, head: Head::zeros(features), taxonomy, fine_tune_backbone: true }
    }

    pub fn spec(&self) -> &BackboneSpec {
        self.backbone.spec()
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.weights.len() + NUM_CLASSES
    }

    /// Named parameter arrays, backbone first, in flattening order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut shapes = self.backbone.param_shapes();
        shapes.push(("head.weight", vec![NUM_CLASSES, self.head.features]));
        shapes.push(("head.bias", vec![NUM_CLASSES]));
        shapes
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.backbone.params();
        p.extend_from_slice(&self.head.weights);
        p.extend_from_slice(&self.head.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.num_params(), params.len())));
        }
        let nb = self.backbone.num_params();
        let nw = self.head.weights.len();
        self.backbone.set_params(&params[..nb])?;
        self.head.weights.copy_from_slice(&params[nb..nb + nw]);
        self.head.bias.copy_from_slice(&params[nb + nw..]);
        Ok(())
    }

    /// Mask of parameters the optimizer may update.
    pub fn trainable(&self) -> Vec<bool> {
        let nb = self.backbone.num_params();
        (0..self.num_params()).map(|i| i >= nb || self.fine_tune_backbone).collect()
    }

    fn check_input(&self, img: &PreprocessedImage) -> Result<()> {
        let [h, w, c] = self.spec().input_shape;
        if img.pixels.len() != h * w * c {
            return Err(Error::Shape(format!(
                "image {} has {} values, expected {h}×{w}×{c}",
                img.source_id,
                img.pixels.len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, img: &PreprocessedImage) -> Result<[f64; NUM_CLASSES]> {
        self.check_input(img)?;
        let trace = self.backbone.forward(&img.pixels)?;
        let logits = self.head.logits(&trace.tap.channel_means());
        check_finite(&logits, &img.source_id)?;
        Ok(logits)
    }

    pub fn predict(&self, img: &PreprocessedImage) -> Result<[f64; NUM_CLASSES]> {
        Ok(softmax(&self.logits(img)?))
    }

    pub fn forward(&self, batch: &ImageBatch) -> Result<ForwardOutput> {
        let logits: Vec<[f64; NUM_CLASSES]> =
            batch.images.par_iter().map(|img| self.logits(img)).collect::<Result<_>>()?;
        let probs = logits.iter().map(softmax).collect();
        Ok(ForwardOutput { logits, probs })
    }

    /// Mean categorical cross-entropy over the batch and its exact gradients.
    pub fn loss_and_grads(&self, batch: &ImageBatch, wrt: Wrt) -> Result<LossAndGrads> {
        let categories = batch.categories()?;
        let n = batch.len() as f64;
        // (loss, dlogits, parameter grads, input grads) per image
        type Sample = (f64, [f64; NUM_CLASSES], Option<Vec<f64>>, Option<Vec<f64>>);
        let per_sample: Vec<Sample> = batch
            .images
            .par_iter()
            .zip(categories.par_iter())
            .map(|(img, &target)| {
                self.check_input(img)?;
                let trace = self.backbone.forward(&img.pixels)?;
                let pooled = trace.tap.channel_means();
                let logits = self.head.logits(&pooled);
                check_finite(&logits, &img.source_id)?;
                let probs = softmax(&logits);
                let loss = -(probs[target] + LOG_EPS).ln();
                // d/dz of −ln(p_t + δ) through the softmax is r·(p − y),
                // r = p_t / (p_t + δ).
                let r = probs[target] / (probs[target] + LOG_EPS);
                let mut dz = [0.0; NUM_CLASSES];
                for c in 0..NUM_CLASSES {
                    let y = if c == target { 1.0 } else { 0.0 };
                    dz[c] = r * (probs[c] - y) / n;
                }
                let (pg, ig) = self.backprop(&trace, &pooled, &dz, wrt.params(), wrt.input())?;
                Ok((loss, probs, pg, ig))
            })
            .collect::<Result<_>>()?;

        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(per_sample.len());
        let mut params = wrt.params().then(|| vec![0.0; self.num_params()]);
        let mut inputs = wrt.input().then(Vec::new);
        for (l, p, pg, ig) in per_sample {
            loss += l;
            probs.push(p);
            if let (Some(acc), Some(g)) = (params.as_mut(), pg) {
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if let (Some(acc), Some(g)) = (inputs.as_mut(), ig) {
                acc.push(g);
            }
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        Ok(LossAndGrads { loss, probs, params, inputs })
    }

    /// Back-propagates a logit gradient `dz` through head and backbone.
    fn backprop(
        &self,
        trace: &BackboneTrace,
        pooled: &[f64],
        dz: &[f64; NUM_CLASSES],
        want_params: bool,
        want_input: bool,
    ) -> Result<BackwardGrads> {
        let k = self.head.features;
        let d_tap = self.tap_gradient(&trace.tap, dz);
        let need_backbone_params = want_params && self.fine_tune_backbone;
        let (bp, input) = if need_backbone_params || want_input {
            self.backbone.backward(trace, &d_tap, need_backbone_params, want_input)?
        } else {
            (None, None)
        };
        let params = want_params.then(|| {
            let mut g = bp.unwrap_or_else(|| vec![0.0; self.backbone.num_params()]);
            for c in 0..NUM_CLASSES {
                g.extend(pooled.iter().map(|f| dz[c] * f));
            }
            g.extend_from_slice(dz);
            debug_assert_eq!(g.len(), self.backbone.num_params() + NUM_CLASSES * k + NUM_CLASSES);
            g
        });
        Ok((params, input))
    }

    /// Gradient w.r.t. the tap map of `Σ_c dz_c · logit_c`: global average
    /// pooling spreads each pooled-feature gradient evenly over positions.
    fn tap_gradient(&self, tap: &FeatureMap, dz: &[f64; NUM_CLASSES]) -> Vec<f64> {
        let k = self.head.features;
        let n = (tap.height * tap.width) as f64;
        let mut dpooled = vec![0.0; k];
        for c in 0..NUM_CLASSES {
            for (d, w) in dpooled.iter_mut().zip(&self.head.weights[c * k..(c + 1) * k]) {
                *d += dz[c] * w;
            }
        }
        dpooled.iter_mut().for_each(|d| *d /= n);
        let mut out = Vec::with_capacity(tap.data.len());
        for _ in 0..tap.height * tap.width {
            out.extend_from_slice(&dpooled);
        }
        out
    }

    /// Tap feature maps `A` and the gradient `G = ∂logit_target/∂A`.
    pub fn activations_and_grads(&self, img: &PreprocessedImage, target: usize) -> Result<(FeatureMap, FeatureMap)> {
        if target >= NUM_CLASSES {
            return Err(Error::Label(format!("target category {target} out of range")));
        }
        self.check_input(img)?;
        let trace = self.backbone.forward(&img.pixels)?;
        let [h, w, k] = trace.tap.shape();
        if h < 2 || w < 2 || k != self.head.features {
            return Err(Error::Config(format!(
                "tap {} resolved to unusable shape {h}×{w}×{k}",
                self.spec().gradcam_tap
            )));
        }
        let mut dz = [0.0; NUM_CLASSES];
        dz[target] = 1.0;
        let grads = FeatureMap::new(h, w, k, self.tap_gradient(&trace.tap, &dz));
        Ok((trace.tap, grads))
    }

    /// Gradient of one category's logit w.r.t. the input image.
    pub fn input_gradient_of_logit(&self, img: &PreprocessedImage, target: usize) -> Result<Vec<f64>> {
        let trace = self.backbone.forward(&img.pixels)?;
        let pooled = trace.tap.channel_means();
        let mut dz = [0.0; NUM_CLASSES];
        dz[target] = 1.0;
        let (_, input) = self.backprop(&trace, &pooled, &dz, false, true)?;
        Ok(input.expect("input gradient requested"))
    }

    pub fn save(&self, dir: &Path, metadata: CheckpointMetadata) -> Result<Checkpoint> {
        let ckpt = Checkpoint::capture(self, metadata);
        ckpt.save(dir)?;
        Ok(ckpt)
    }

    /// Restores a classifier from a checkpoint directory, rejecting it if its
    /// taxonomy differs from `expected` (including order).
    pub fn load(dir: &Path, expected: &LabelTaxonomy, provider: &WeightsProvider) -> Result<Self> {
        Checkpoint::load(dir)?.restore(expected, provider)
    }
}

fn check_finite(row: &[f64], source: &str) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite logits for {source}")))
    }
}
