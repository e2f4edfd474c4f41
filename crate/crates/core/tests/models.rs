mod common;

use nailguard::models::{
    argmax, cross_entropy, softmax, BackboneId, BackboneSpec, Checkpoint, CheckpointMetadata, Classifier,
    WeightsProvider, Wrt, TINY_PARAM_COUNT,
};
use nailguard::pipeline::{one_hot, ImageBatch, PreprocessedImage};
use nailguard::{Error, LabelTaxonomy, NUM_CLASSES};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_head(c: &mut Classifier, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in c.head.weights.iter_mut() {
        *w = rng.random_range(-0.01..0.01);
    }
    for b in c.head.bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(logits in prop::array::uniform6(-700.0f64..700.0)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn cross_entropy_is_non_negative(logits in prop::array::uniform6(-50.0f64..50.0), c in 0usize..NUM_CLASSES) {
        prop_assert!(cross_entropy(&softmax(&logits), &one_hot(c)) >= 0.0);
    }
}

#[test]
fn uniform_prediction_costs_ln_six() {
    let c = Classifier::tiny(3);
    let img = common::noise_image(1);
    let p = c.predict(&img).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    for label in 0..NUM_CLASSES {
        let batch = ImageBatch::new(vec![img.clone()], &[label]).unwrap();
        let loss = c.loss_and_grads(&batch, Wrt::Params).unwrap().loss;
        assert!((loss - 6f64.ln()).abs() < 1e-9, "{loss}");
    }
    assert!((6f64.ln() - 1.7918).abs() < 1e-4);
}

#[test]
fn tiny_shapes() {
    let c = Classifier::tiny(0);
    assert_eq!(c.num_params(), TINY_PARAM_COUNT + 16 * 6 + 6);
    assert_eq!(c.spec().tap_shape, [56, 56, 16]);
    let (a, g) = c.activations_and_grads(&common::noise_image(0), 0).unwrap();
    assert_eq!(a.shape(), [56, 56, 16]);
    assert_eq!(g.shape(), [56, 56, 16]);
    assert!(c.activations_and_grads(&common::noise_image(0), 6).is_err());
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut c = Classifier::tiny(4);
    random_head(&mut c, 4);
    let batch = ImageBatch::new(vec![common::noise_image(7), common::noise_image(8)], &[1, 4]).unwrap();
    let grads = c.loss_and_grads(&batch, Wrt::Params).unwrap().params.unwrap();
    let base = c.params();
    let loss_at = |p: &[f64]| {
        let mut m = c.clone();
        m.set_params(p).unwrap();
        m.loss_and_grads(&batch, Wrt::Params).unwrap().loss
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    // Both conv layers and the head.
    let mut picks = Vec::new();
    for range in [0..216, 224..TINY_PARAM_COUNT - 16, TINY_PARAM_COUNT..base.len()] {
        for _ in 0..8 {
            picks.push(rng.random_range(range.clone()));
        }
    }
    for i in picks {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let rel = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-6);
        assert!(rel < 1e-3, "param {i}: analytic {} numeric {numeric}", grads[i]);
    }
}

#[test]
fn frozen_backbone_is_not_trainable() {
    let mut c = Classifier::tiny(0);
    assert!(c.trainable().iter().all(|&t| t));
    c.fine_tune_backbone = false;
    let mask = c.trainable();
    assert_eq!(mask.iter().filter(|&&t| t).count(), c.num_params() - TINY_PARAM_COUNT);
    assert!(!mask[0]);
    c.head.weights[0] = 0.5;
    let batch = ImageBatch::new(vec![common::noise_image(1)], &[0]).unwrap();
    let g = c.loss_and_grads(&batch, Wrt::Params).unwrap().params.unwrap();
    assert!(g[..TINY_PARAM_COUNT].iter().all(|&v| v == 0.0));
}

#[test]
fn pretrained_without_weights_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let provider = WeightsProvider::new(dir.path());
    for id in BackboneId::ALL.into_iter().filter(|id| id.is_pretrained()) {
        match Classifier::build(id, &provider, 0) {
            Err(Error::MissingWeights { backbone, path }) => {
                assert_eq!(backbone, id.as_str());
                assert!(path.ends_with(id.as_str()));
            }
            other => panic!("{id}: {:?}", other.map(|_| ())),
        }
    }
    assert!(Classifier::build(BackboneId::TinyTest, &provider, 0).is_ok());
}

#[test]
fn backbone_ids_parse() {
    for id in BackboneId::ALL {
        assert_eq!(id.as_str().parse::<BackboneId>().unwrap(), id);
        assert_eq!(BackboneSpec::for_id(id).id, id);
    }
    assert!("vgg16".parse::<BackboneId>().is_err());
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Classifier::tiny(2);
    random_head(&mut c, 2);
    let probe = ImageBatch::new((0..4).map(common::noise_image).collect(), &[0, 1, 2, 3]).unwrap();
    c.save(dir.path(), CheckpointMetadata::bare(&c)).unwrap();
    let provider = WeightsProvider::new(dir.path());
    let back = Classifier::load(dir.path(), &LabelTaxonomy::nail(), &provider).unwrap();
    assert_eq!(back.params(), c.params());
    assert_eq!(back.forward(&probe).unwrap().probs, c.forward(&probe).unwrap().probs);

    let mut names = LabelTaxonomy::nail().names().to_vec();
    names.swap(0, 1);
    let reordered = LabelTaxonomy::from_names(names).unwrap();
    assert!(matches!(Classifier::load(dir.path(), &reordered, &provider), Err(Error::CheckpointMismatch(_))));

    let weights = dir.path().join("weights.bin");
    let mut bytes = std::fs::read(&weights).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&weights, bytes).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn input_gradient_of_logit_matches_tap_chain() {
    let mut c = Classifier::tiny(6);
    random_head(&mut c, 6);
    let img = common::noise_image(9);
    let g = c.input_gradient_of_logit(&img, 3).unwrap();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let i = rng.random_range(0..g.len());
        let mut plus = img.clone();
        plus.pixels[i] += h;
        let mut minus = img.clone();
        minus.pixels[i] -= h;
        let numeric = (c.logits(&plus).unwrap()[3] - c.logits(&minus).unwrap()[3]) / (2.0 * h);
        assert!((numeric - g[i]).abs() <= 1e-3 * numeric.abs().max(g[i].abs()).max(1e-6), "{i}");
    }
}

#[test]
fn wrong_shape_is_rejected() {
    let c = Classifier::tiny(0);
    let bad = PreprocessedImage { pixels: vec![0.0; 12], source_id: "bad".into() };
    assert!(matches!(c.predict(&bad), Err(Error::Shape(_))));
}
