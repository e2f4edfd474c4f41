mod common;

use nailguard::explain::{
    grad_cam, grad_cam_from_maps, jet, overlay, overlay_rgb, segment_grid, shapley_attribution, shapley_values,
    to_pixel_map, AttributionMap, AttributionMethod, Baseline, ExplanationExport, ShapleyMode,
};
use nailguard::models::{Classifier, FeatureMap};
use nailguard::pipeline::{PreprocessedImage, IMAGE_SIZE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(seed: u64) -> Classifier {
    let mut c = Classifier::tiny(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    c.head.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.02..0.02));
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradcam_argmax_ignores_gradient_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = FeatureMap::new(4, 4, 3, (0..48).map(|_| rng.random::<f64>()).collect());
        let g = FeatureMap::new(4, 4, 3, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect());
        let scaled = FeatureMap::new(4, 4, 3, g.data.iter().map(|v| v * scale).collect());
        let m1 = grad_cam_from_maps(&a, &g, 16, 16).unwrap();
        let m2 = grad_cam_from_maps(&a, &scaled, 16, 16).unwrap();
        prop_assert_eq!(nailguard::models::argmax(&m1), nailguard::models::argmax(&m2));
        prop_assert!(m1.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pixel_maps_stay_in_unit_range(phi in prop::collection::vec(-5.0f64..5.0, 4)) {
        let seg = segment_grid(2, 2).unwrap();
        let r = nailguard::explain::ShapleyResult { phi, base_value: 0.0, full_value: 0.0, mode: ShapleyMode::Exact };
        let m = to_pixel_map(&r, &seg, 0);
        prop_assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn exact_shapley_is_efficient(table in prop::collection::vec(-1.0f64..1.0, 16)) {
        let r = shapley_values(4, |s| Ok(table[s as usize]), ShapleyMode::Exact).unwrap();
        prop_assert!((r.phi.iter().sum::<f64>() - (table[15] - table[0])).abs() < 1e-12);
    }
}

#[test]
fn gradcam_on_the_tiny_model() {
    let c = model(1);
    let img = common::noise_image(4);
    let m = grad_cam(&c, &img, 2).unwrap();
    assert_eq!((m.height, m.width, m.values.len()), (IMAGE_SIZE, IMAGE_SIZE, IMAGE_SIZE * IMAGE_SIZE));
    assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(m.method, AttributionMethod::Gradcam);
    // The zero head leaves nothing to attribute.
    let flat = grad_cam(&Classifier::tiny(1), &img, 2).unwrap();
    assert!(flat.values.iter().all(|&v| v == 0.0));
}

#[test]
fn overlay_alpha_endpoints() {
    let img = common::noise_image(5);
    let map = AttributionMap {
        height: IMAGE_SIZE,
        width: IMAGE_SIZE,
        values: (0..IMAGE_SIZE * IMAGE_SIZE).map(|i| (i % 17) as f64 / 16.0).collect(),
        method: AttributionMethod::Gradcam,
        target_category: 0,
    };
    assert_eq!(overlay_rgb(&img, &map, 0.0).unwrap(), img.to_rgb8());
    let pure = overlay_rgb(&img, &map, 1.0).unwrap();
    for (i, px) in pure.pixels().enumerate() {
        let want = jet(map.values[i]).map(|v| (v * 255.0).round() as u8);
        assert_eq!(px.0, want);
    }
    assert_eq!(overlay(&img, &map, 0.4).unwrap(), overlay(&img, &map, 0.4).unwrap());
    let small = AttributionMap { height: 2, width: 2, values: vec![0.0; 4], ..map };
    assert!(overlay(&img, &small, 0.4).is_err());
}

#[test]
fn exact_parallel_table_is_order_independent() {
    let c = model(3);
    let img = common::noise_image(6);
    let seg = segment_grid(2, 4).unwrap();
    let a = shapley_attribution(&c, &img, &seg, 1, ShapleyMode::Exact, Baseline::default()).unwrap();
    let b = shapley_attribution(&c, &img, &seg, 1, ShapleyMode::Exact, Baseline::default()).unwrap();
    assert_eq!(a, b);
    assert!((a.phi.iter().sum::<f64>() - (a.full_value - a.base_value)).abs() < 1e-6);
}

#[test]
fn sampled_shapley_is_seeded() {
    let table: Vec<f64> = (0..64).map(|s: u32| (s.count_ones() as f64).sqrt() + (s & 5) as f64 * 0.1).collect();
    let run =
        |seed| shapley_values(6, |s| Ok(table[s as usize]), ShapleyMode::Sampled { permutations: 50, seed }).unwrap();
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).phi, run(2).phi);
    // Permutation estimates are efficient by construction.
    assert!((run(3).phi.iter().sum::<f64>() - (table[63] - table[0])).abs() < 1e-12);
}

#[test]
fn segment_limits() {
    assert!(shapley_values(17, |_| Ok(0.0), ShapleyMode::Exact).is_err());
    assert!(segment_grid(4, 4).is_ok());
    assert!(segment_grid(3, 3).is_err());
}

#[test]
fn exports_serialize() {
    let seg = segment_grid(2, 2).unwrap();
    let r = shapley_values(4, |s| Ok(s.count_ones() as f64), ShapleyMode::Exact).unwrap();
    let json = serde_json::to_value(ExplanationExport::shapley(&r, &seg, "pitting")).unwrap();
    assert_eq!(json["method"], "shapley");
    assert_eq!(json["segments"], serde_json::json!([2, 2]));
    assert_eq!(json["phi"].as_array().unwrap().len(), 4);
    assert!(json.get("values").is_none());
    let map = AttributionMap {
        height: 1,
        width: 2,
        values: vec![0.0, 1.0],
        method: AttributionMethod::Gradcam,
        target_category: 5,
    };
    let json = serde_json::to_value(ExplanationExport::gradcam(&map, "pitting")).unwrap();
    assert_eq!(json["method"], "gradcam");
    assert_eq!(json["values"], serde_json::json!([0.0, 1.0]));
}

#[test]
fn blurred_baseline_differs_from_gray() {
    let c = model(8);
    let img = PreprocessedImage { source_id: "x".into(), ..common::noise_image(8) };
    let seg = segment_grid(1, 2).unwrap();
    let blur = shapley_attribution(&c, &img, &seg, 0, ShapleyMode::Exact, Baseline::Blur { sigma: 4.0 }).unwrap();
    let gray = shapley_attribution(&c, &img, &seg, 0, ShapleyMode::Exact, Baseline::Gray).unwrap();
    assert_eq!(blur.full_value, gray.full_value);
    assert_ne!(blur.base_value, gray.base_value);
}
