mod common;

use nailguard::models::Classifier;
use nailguard::pipeline::{ImageBatch, PIXELS_PER_IMAGE};
use nailguard::training::{
    epsilon_sweep, fgsm, fgsm_from_gradients, fit, EarlyStopState, StopDecision, TrainingConfig, DEFAULT_EPSILONS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fgsm_stays_in_the_epsilon_ball(seed in any::<u64>(), eps in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = common::noise_image(seed % 50);
        let g: Vec<f64> = (0..PIXELS_PER_IMAGE).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = ImageBatch::new(vec![img], &[0]).unwrap();
        let out = fgsm_from_gradients(&batch, std::slice::from_ref(&g), eps).unwrap();
        for ((a, b), gi) in batch.images[0].pixels.iter().zip(&out.images[0].pixels).zip(&g) {
            prop_assert!((b - a).abs() <= eps + 1e-12);
            prop_assert!((0.0..=1.0).contains(b));
            if (0.0..=1.0).contains(&(a + eps * gi.signum())) {
                prop_assert!(((b - a).abs() - eps).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn early_stop_needs_patience_non_improvements(
        metrics in prop::collection::vec(0.0f64..2.0, 1..40),
        patience in 1usize..6,
    ) {
        let mut s = EarlyStopState::new(patience, 1e-4);
        let mut best = f64::INFINITY;
        let mut streak = 0;
        for (epoch, &m) in metrics.iter().enumerate() {
            if epoch == 0 || m < best - 1e-4 {
                best = m;
                streak = 0;
            } else {
                streak += 1;
            }
            let d = s.update(epoch, m);
            prop_assert!(s.epochs_since_improvement <= patience);
            prop_assert_eq!(d == StopDecision::Stop, streak >= patience);
            if d == StopDecision::Stop {
                break;
            }
        }
    }
}

#[test]
fn fgsm_rejects_bad_inputs() {
    let batch = ImageBatch::new(vec![common::noise_image(0)], &[0]).unwrap();
    assert!(fgsm_from_gradients(&batch, &[], 0.1).is_err());
    assert!(fgsm_from_gradients(&batch, &[vec![0.0; PIXELS_PER_IMAGE]], -0.1).is_err());
    assert!(fgsm_from_gradients(&batch, &[vec![0.0; PIXELS_PER_IMAGE]], 1.5).is_err());
}

#[test]
fn fgsm_from_a_model_moves_every_unclipped_pixel() {
    let mut c = Classifier::tiny(0);
    c.head.weights.iter_mut().enumerate().for_each(|(i, w)| *w = ((i % 7) as f64 - 3.0) * 1e-3);
    let batch = ImageBatch::new(vec![common::noise_image(2)], &[3]).unwrap();
    let out = fgsm(&c, &batch, 0.05).unwrap();
    let moved = batch.images[0].pixels.iter().zip(&out.images[0].pixels).filter(|(a, b)| a != b).count();
    assert!(moved > PIXELS_PER_IMAGE / 2, "{moved}");
}

#[test]
fn config_validation() {
    assert!(TrainingConfig::default().validate().is_ok());
    let bad = |f: fn(&mut TrainingConfig)| {
        let mut c = TrainingConfig::default();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.learning_rate = 0.0));
    assert!(bad(|c| c.patience = 0));
    assert!(bad(|c| c.batch_size = 0));
    assert!(TrainingConfig::default().with_epsilon(1.5).validate().is_err());
    assert_eq!(DEFAULT_EPSILONS.len(), 7);
}

fn short_config() -> TrainingConfig {
    TrainingConfig { max_epochs: 3, learning_rate: 1e-3, batch_size: 8, ..TrainingConfig::default() }
}

#[test]
fn fit_is_deterministic_and_restores_the_best_epoch() {
    let s = common::synth(6);
    let cfg = short_config();
    let mut a = Classifier::tiny(1);
    let ra = fit(&mut a, &s.data, &cfg).unwrap();
    let mut b = Classifier::tiny(1);
    let rb = fit(&mut b, &s.data, &cfg).unwrap();
    for (x, y) in ra.history.records.iter().zip(&rb.history.records) {
        assert!((x.train_loss - y.train_loss).abs() < 1e-9);
        assert!((x.val_loss - y.val_loss).abs() < 1e-9);
    }
    assert_eq!(a.params(), b.params());

    let h = &ra.history;
    assert!(h.best_epoch <= h.stopped_epoch && h.stopped_epoch < cfg.max_epochs);
    let best = ra.checkpoint.metadata.metrics.best_val_loss.unwrap();
    assert!(h.records.iter().all(|r| best <= r.val_loss));
    assert_eq!(ra.checkpoint.weights, a.params());

    let dir = tempfile::tempdir().unwrap();
    h.save(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
    assert_eq!(csv.lines().count(), h.records.len() + 1);
}

#[test]
fn sweep_runs_one_fresh_model_per_epsilon() {
    let s = common::synth(7);
    let cfg = TrainingConfig { max_epochs: 1, ..short_config() };
    let mut built = 0;
    let (table, outcomes) = epsilon_sweep(
        || {
            built += 1;
            Ok(Classifier::tiny(0))
        },
        &s.data,
        &cfg,
        &[0.0, 0.1],
    )
    .unwrap();
    assert_eq!(built, 2);
    assert_eq!(table.rows.len(), 2);
    assert_eq!(outcomes.len(), 2);
    assert!(table.rows.iter().all(|r| r.optimal_epochs == Some(1) && r.error.is_none()));
    let mut out = Vec::new();
    table.write_csv(&mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with("epsilon,val_loss,val_accuracy,optimal_epochs\n"));
}

#[test]
fn failed_sweep_rows_are_recorded() {
    let s = common::synth(3);
    let cfg = TrainingConfig { max_epochs: 1, ..short_config() };
    let (table, _) = epsilon_sweep(|| Err(nailguard::Error::Config("boom".into())), &s.data, &cfg, &[0.1]).unwrap();
    assert!(table.rows[0].error.as_deref().unwrap().contains("boom"));
    assert!(table.best().is_none());
}
