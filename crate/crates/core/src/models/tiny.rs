//! The `tiny_test` backbone: two 3×3 conv/ReLU/2×2-max-pool stages.
//!
//! Feature maps are channels-last. The forward pass never materializes the
//! full-resolution conv outputs: each pair of conv rows is pooled as soon as
//! it is computed, and the pooling argmax is kept for the backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Backbone, BackboneId, BackboneSpec, BackboneTrace, BackwardGrads, FeatureMap};
use crate::error::{Error, Result};
use crate::pipeline::{CHANNELS, IMAGE_SIZE, PIXELS_PER_IMAGE};

const C1: usize = 8;
const C2: usize = 16;
const H0: usize = IMAGE_SIZE;
const H1: usize = H0 / 2;
const H2: usize = H1 / 2;
const K1: usize = 9 * CHANNELS;
const K2: usize = 9 * C1;

/// Fixed input normalization inside the backbone: mean-centred and put back
/// on the 0..255 scale, as in caffe-style backbones. Callers always pass
/// unit-interval pixels.
pub const INPUT_MEAN: [f64; CHANNELS] = [0.485, 0.456, 0.406];
pub const INPUT_SCALE: f64 = 255.0;

pub const TINY_PARAM_COUNT: usize = K1 * C1 + C1 + K2 * C2 + C2;

/// Weights are stored `[dy][dx][ci][co]` followed by the bias, for each conv.
#[derive(Debug, Clone)]
pub struct TinyCnn {
    spec: BackboneSpec,
    w1: Vec<f64>,
    b1: [f64; C1],
    w2: Vec<f64>,
    b2: [f64; C2],
}

struct TinyCache {
    /// Standardized input, zero padded to 226×226×3.
    input: Vec<f64>,
    /// First pooled map, zero padded to 114×114×8.
    pool1: Vec<f64>,
    argmax1: Vec<u8>,
    argmax2: Vec<u8>,
}

impl TinyCnn {
    /// He-normal conv weights, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        Self {
            spec: BackboneSpec::for_id(BackboneId::TinyTest),
            w1: draw(K1 * C1, K1),
            b1: [0.0; C1],
            w2: draw(K2 * C2, K2),
            b2: [0.0; C2],
        }
    }

    fn run_forward(&self, image: &[f64]) -> (Vec<f64>, TinyCache) {
        let input = pad_normalized(image);
        let w1 = rows::<C1>(&self.w1);
        let w2 = rows::<C2>(&self.w2);

        let p1w = H1 + 2;
        let mut pool1 = vec![0.0; p1w * p1w * C1];
        let mut argmax1 = vec![0u8; H1 * H1 * C1];
        let mut pair = vec![[0.0; C1]; 2 * H0];
        for r in 0..H1 {
            let (top, bottom) = pair.split_at_mut(H0);
            conv_row::<CHANNELS, C1>(&input, H0 + 2, 2 * r, &w1, &self.b1, top);
            conv_row::<CHANNELS, C1>(&input, H0 + 2, 2 * r + 1, &w1, &self.b1, bottom);
            for c in 0..H1 {
                let dst = ((r + 1) * p1w + c + 1) * C1;
                let quad = [&top[2 * c], &top[2 * c + 1], &bottom[2 * c], &bottom[2 * c + 1]];
                pool_quad(&quad, &mut pool1[dst..dst + C1], &mut argmax1[(r * H1 + c) * C1..][..C1]);
            }
        }

        let mut tap = vec![0.0; H2 * H2 * C2];
        let mut argmax2 = vec![0u8; H2 * H2 * C2];
        let mut pair = vec![[0.0; C2]; 2 * H1];
        for r in 0..H2 {
            let (top, bottom) = pair.split_at_mut(H1);
            conv_row::<C1, C2>(&pool1, p1w, 2 * r, &w2, &self.b2, top);
            conv_row::<C1, C2>(&pool1, p1w, 2 * r + 1, &w2, &self.b2, bottom);
            for c in 0..H2 {
                let at = (r * H2 + c) * C2;
                let quad = [&top[2 * c], &top[2 * c + 1], &bottom[2 * c], &bottom[2 * c + 1]];
                pool_quad(&quad, &mut tap[at..at + C2], &mut argmax2[at..at + C2]);
            }
        }

        (tap, TinyCache { input, pool1, argmax1, argmax2 })
    }
}

fn pad_normalized(image: &[f64]) -> Vec<f64> {
    let w = H0 + 2;
    let mut out = vec![0.0; w * w * CHANNELS];
    for y in 0..H0 {
        for x in 0..H0 {
            let src = (y * H0 + x) * CHANNELS;
            let dst = ((y + 1) * w + x + 1) * CHANNELS;
            for c in 0..CHANNELS {
                out[dst + c] = (image[src + c] - INPUT_MEAN[c]) * INPUT_SCALE;
            }
        }
    }
    out
}

fn rows<const CO: usize>(w: &[f64]) -> Vec<[f64; CO]> {
    w.chunks_exact(CO).map(|c| c.try_into().expect("exact chunk")).collect()
}

/// One output row of a same-padded 3×3 convolution over a padded input of
/// width `wp` (in pixels).
#[inline(always)]
fn conv_row<const CI: usize, const CO: usize>(
    input: &[f64],
    wp: usize,
    y: usize,
    w: &[[f64; CO]],
    b: &[f64; CO],
    out: &mut [[f64; CO]],
) {
    let span = 3 * CI;
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = *b;
        for dy in 0..3 {
            let start = ((y + dy) * wp + x) * CI;
            let patch = &input[start..start + span];
            let wrow = &w[dy * span..(dy + 1) * span];
            for (v, wr) in patch.iter().zip(wrow) {
                for co in 0..CO {
                    acc[co] += v * wr[co];
                }
            }
        }
        *o = acc;
    }
}

/// ReLU followed by 2×2 max pooling of four conv outputs. The argmax is the
/// first maximal position in (top-left, top-right, bottom-left, bottom-right)
/// order.
#[inline(always)]
fn pool_quad<const C: usize>(quad: &[&[f64; C]; 4], out: &mut [f64], argmax: &mut [u8]) {
    for ch in 0..C {
        let mut best = quad[0][ch];
        let mut at = 0u8;
        for (k, q) in quad.iter().enumerate().skip(1) {
            if q[ch] > best {
                best = q[ch];
                at = k as u8;
            }
        }
        out[ch] = best.max(0.0);
        argmax[ch] = at;
    }
}

impl Backbone for TinyCnn {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn num_params(&self) -> usize {
        TINY_PARAM_COUNT
    }

    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("conv1.weight", vec![3, 3, CHANNELS, C1]),
            ("conv1.bias", vec![C1]),
            ("conv2.weight", vec![3, 3, C1, C2]),
            ("conv2.bias", vec![C2]),
        ]
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(TINY_PARAM_COUNT);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != TINY_PARAM_COUNT {
            return Err(Error::Shape(format!("tiny_test expects {TINY_PARAM_COUNT} parameters, got {}", params.len())));
        }
        let (w1, rest) = params.split_at(K1 * C1);
        let (b1, rest) = rest.split_at(C1);
        let (w2, b2) = rest.split_at(K2 * C2);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
        Ok(())
    }

    fn forward(&self, image: &[f64]) -> Result<BackboneTrace> {
        if image.len() != PIXELS_PER_IMAGE {
            return Err(Error::Shape(format!(
                "tiny_test expects {PIXELS_PER_IMAGE} input values, got {}",
                image.len()
            )));
        }
        let (tap, cache) = self.run_forward(image);
        Ok(BackboneTrace { tap: FeatureMap::new(H2, H2, C2, tap), cache: Box::new(cache) })
    }

    fn backward(
        &self,
        trace: &BackboneTrace,
        d_tap: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> Result<BackwardGrads> {
        let cache = trace
            .cache
            .downcast_ref::<TinyCache>()
            .ok_or_else(|| Error::Config("trace was not produced by tiny_test".into()))?;
        if d_tap.len() != H2 * H2 * C2 {
            return Err(Error::Shape("tap gradient has wrong size".into()));
        }
        let tap = &trace.tap.data;
        let p1w = H1 + 2;
        let iw = H0 + 2;

        // Transposed weights: [co][k] so that per-channel scatter is contiguous.
        let w2t = transpose::<C2>(&self.w2, K2);
        let mut dw2t = vec![0.0; C2 * K2];
        let mut db2 = [0.0; C2];
        let mut dpool1 = vec![0.0; p1w * p1w * C1];

        for s in 0..H2 * H2 {
            let (sy, sx) = (s / H2, s % H2);
            for k in 0..C2 {
                let g = d_tap[s * C2 + k];
                if g == 0.0 || tap[s * C2 + k] <= 0.0 {
                    continue;
                }
                let a = cache.argmax2[s * C2 + k];
                let (y, x) = (2 * sy + (a >> 1) as usize, 2 * sx + (a & 1) as usize);
                db2[k] += g;
                let dw = &mut dw2t[k * K2..(k + 1) * K2];
                let wt = &w2t[k * K2..(k + 1) * K2];
                for dy in 0..3 {
                    let start = ((y + dy) * p1w + x) * C1;
                    let patch = &cache.pool1[start..start + 3 * C1];
                    let dwr = &mut dw[dy * 3 * C1..(dy + 1) * 3 * C1];
                    for (d, p) in dwr.iter_mut().zip(patch) {
                        *d += g * p;
                    }
                    let dst = &mut dpool1[start..start + 3 * C1];
                    for (d, w) in dst.iter_mut().zip(&wt[dy * 3 * C1..(dy + 1) * 3 * C1]) {
                        *d += g * w;
                    }
                }
            }
        }

        let w1t = transpose::<C1>(&self.w1, K1);
        let mut dw1t = vec![0.0; C1 * K1];
        let mut db1 = [0.0; C1];
        let mut dinput = if want_input { vec![0.0; iw * iw * CHANNELS] } else { Vec::new() };
        for q in 0..H1 * H1 {
            let (qy, qx) = (q / H1, q % H1);
            let at = ((qy + 1) * p1w + qx + 1) * C1;
            for c in 0..C1 {
                let g = dpool1[at + c];
                if g == 0.0 || cache.pool1[at + c] <= 0.0 {
                    continue;
                }
                let a = cache.argmax1[q * C1 + c];
                let (y, x) = (2 * qy + (a >> 1) as usize, 2 * qx + (a & 1) as usize);
                db1[c] += g;
                let dw = &mut dw1t[c * K1..(c + 1) * K1];
                let wt = &w1t[c * K1..(c + 1) * K1];
                for dy in 0..3 {
                    let start = ((y + dy) * iw + x) * CHANNELS;
                    let patch = &cache.input[start..start + 3 * CHANNELS];
                    for (d, p) in dw[dy * 3 * CHANNELS..(dy + 1) * 3 * CHANNELS].iter_mut().zip(patch) {
                        *d += g * p;
                    }
                    if want_input {
                        let dst = &mut dinput[start..start + 3 * CHANNELS];
                        for (d, w) in dst.iter_mut().zip(&wt[dy * 3 * CHANNELS..]) {
                            *d += g * w;
                        }
                    }
                }
            }
        }

        let params = want_params.then(|| {
            let mut out = Vec::with_capacity(TINY_PARAM_COUNT);
            out.extend(untranspose::<C1>(&dw1t, K1));
            out.extend_from_slice(&db1);
            out.extend(untranspose::<C2>(&dw2t, K2));
            out.extend_from_slice(&db2);
            out
        });
        let input = want_input.then(|| {
            let mut out = vec![0.0; PIXELS_PER_IMAGE];
            for y in 0..H0 {
                for x in 0..H0 {
                    let src = ((y + 1) * iw + x + 1) * CHANNELS;
                    let dst = (y * H0 + x) * CHANNELS;
                    for c in 0..CHANNELS {
                        out[dst + c] = dinput[src + c] * INPUT_SCALE;
                    }
                }
            }
            out
        });
        Ok((params, input))
    }

    fn clone_box(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

/// `[k][co]` → `[co][k]`.
fn transpose<const CO: usize>(w: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; CO * k];
    for i in 0..k {
        for co in 0..CO {
            out[co * k + i] = w[i * CO + co];
        }
    }
    out
}

/// `[co][k]` → `[k][co]`.
fn untranspose<const CO: usize>(w: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; CO * k];
    for co in 0..CO {
        for i in 0..k {
            out[i * CO + co] = w[co * k + i];
        }
    }
    out
}
