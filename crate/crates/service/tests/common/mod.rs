#![allow(dead_code)]

use std::sync::Arc;

use nailguard::explain::{AttributionMap, AttributionMethod};
use nailguard::models::softmax;
use nailguard::pipeline::{PreprocessedImage, IMAGE_SIZE};
use nailguard::{LabelTaxonomy, NUM_CLASSES};
use nailguard_service::{CaseStore, ManualClock, Predictor, SeverityWeights, Triage};

/// Probabilities driven by the mean colour, so test images pick their class.
pub struct ColorModel(pub LabelTaxonomy);

impl Predictor for ColorModel {
    fn backbone(&self) -> &str {
        "color_stub"
    }

    fn taxonomy(&self) -> &LabelTaxonomy {
        &self.0
    }

    fn predict(&self, image: &PreprocessedImage) -> nailguard::Result<[f64; NUM_CLASSES]> {
        let mut m = [0.0; 3];
        for px in image.pixels.chunks_exact(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        let n = (image.pixels.len() / 3) as f64;
        let m = m.map(|v| v / n);
        Ok(softmax(&[6.0 * m[0], 6.0 * m[1], 6.0 * m[2], 3.0 * (m[0] - m[1]).abs(), 3.0 * (m[1] - m[2]).abs(), 2.0]))
    }

    fn explain(
        &self,
        image: &PreprocessedImage,
        method: AttributionMethod,
        target: usize,
    ) -> nailguard::Result<AttributionMap> {
        let values = image.pixels.chunks_exact(3).map(|px| px[target % 3]).collect();
        Ok(AttributionMap { height: IMAGE_SIZE, width: IMAGE_SIZE, values, method, target_category: target })
    }
}

pub fn png(rgb: [u8; 3]) -> Vec<u8> {
    let img = image::RgbImage::from_fn(8, 8, |x, y| {
        let shade = ((x + y) % 2) as u8 * 8;
        image::Rgb(rgb.map(|c| c.saturating_add(shade)))
    });
    nailguard::explain::encode_png(&img).unwrap()
}

pub fn triage(store: CaseStore, clock: Arc<ManualClock>) -> Triage {
    let mut t = Triage::new(store, clock, SeverityWeights::default());
    t.register("color", Arc::new(ColorModel(LabelTaxonomy::nail())));
    t.register("color_b", Arc::new(ColorModel(LabelTaxonomy::nail())));
    t
}
