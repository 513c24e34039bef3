use super::*;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};

fn random_samples(n: usize, w: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| WindowSample {
            label_deg: [0; 3].map(|_| rng.random_range(-5.0f32..5.0)),
            dvl: (0..3 * w).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
            ins: (0..3 * w).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
        })
        .collect()
}

/// Windows whose DVL channels carry the label as a constant offset.
fn learnable_samples(n: usize, w: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let label = [0; 3].map(|_| rng.random_range(-5.0f32..5.0));
            WindowSample {
                label_deg: label,
                dvl: (0..3 * w).map(|i| 0.2 * label[i % 3] + rng.random_range(-0.05f32..0.05)).collect(),
                ins: (0..3 * w).map(|_| rng.random_range(-0.05f32..0.05)).collect(),
            }
        })
        .collect()
}

#[test]
fn layout_is_contiguous_and_complete() {
    for cfg in [ModelConfig::tiny(), ModelConfig::desk(), ModelConfig::full()] {
        let net = Network::new(&cfg).unwrap();
        let mut next = 0;
        for e in net.layout() {
            assert_eq!(e.offset, next, "{}", e.name);
            next += e.len;
        }
        assert_eq!(next, net.n_params());
    }
}

#[test]
fn full_config_size() {
    let net = Network::new(&ModelConfig::full()).unwrap();
    // 1-D ResNet-18 trunk with a 6-channel stem and 3-output head.
    assert!(net.n_params() > 3_800_000 && net.n_params() < 4_000_000, "{}", net.n_params());
}

#[test]
fn output_shape_and_window_check() {
    let model = Model::new(&ModelConfig::tiny(), 1).unwrap();
    let samples = random_samples(5, 16, 2);
    assert_eq!(model.predict(&samples).unwrap().len(), 5);
    let wrong = random_samples(1, 17, 2);
    assert!(matches!(model.predict(&wrong), Err(Error::ShapeMismatch(_))));
    let bad = ModelConfig {
        stage_channels: vec![4],
        ..ModelConfig::tiny()
    };
    assert!(Model::new(&bad, 0).is_err());
    assert!(ModelConfig::preset("huge").is_err());
}

#[test]
fn inference_is_batch_independent() {
    let model = Model::new(&ModelConfig::tiny(), 3).unwrap();
    let samples = random_samples(7, 16, 4);
    let all = model.predict_deg(&samples).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let one = model.predict_deg(std::slice::from_ref(s)).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(one[0][j], all[i][j], epsilon = 1e-12);
        }
    }
}

/// Central differences on a deterministic training-mode loss.
pub(crate) fn gradient_check(model: &Model, batch: &[WindowSample], n_check: usize, seed: u64) -> f64 {
    let refs: Vec<&WindowSample> = batch.iter().collect();
    let mut m = model.clone();
    let (_, grads) = m.loss_and_gradients(&refs, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..n_check {
        let i = rng.random_range(0..model.n_params());
        let mut p = model.clone();
        p.params[i] += h;
        let up = p.train_loss(&refs).unwrap();
        p.params[i] -= 2.0 * h;
        let down = p.train_loss(&refs).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let model = Model::new(&ModelConfig::tiny(), 11).unwrap();
    let batch = random_samples(4, 16, 12);
    let worst = gradient_check(&model, &batch, 200, 13);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let mut model = Model::new(&ModelConfig::tiny(), 5).unwrap();
    model.input_norm = Some(InputNorm {
        mean: [0.1; 6],
        std: [2.0; 6],
    });
    let back = Model::from_bytes(&model.to_bytes().unwrap()).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.buffers, model.buffers);
    assert_eq!(back.input_norm, model.input_norm);
    assert_eq!(back.config(), model.config());

    let bytes = model.to_bytes().unwrap();
    assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[3] ^= 1;
    assert!(Model::from_bytes(&bad).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut adam = AdamState::new(3, 0.01);
    let mut p = vec![1.0, 2.0, 3.0];
    adam.step(&mut p, &[0.5, -4.0, 0.0]).unwrap();
    assert_abs_diff_eq!(p[0], 0.99, epsilon = 1e-8);
    assert_abs_diff_eq!(p[1], 2.01, epsilon = 1e-8);
    assert_abs_diff_eq!(p[2], 3.0, epsilon = 1e-12);
    assert!(adam.step(&mut p, &[0.0; 2]).is_err());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let samples = learnable_samples(24, 16, 21);
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let run = || train(Model::new(&ModelConfig::tiny(), 1).unwrap(), &samples, &[], &cfg).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.model.params, b.model.params);
    let first = a.history.first().unwrap().train_loss;
    let best = a.history.iter().map(|r| r.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.2 * first, "{first} -> {best}");
}

#[test]
fn non_finite_input_diverges() {
    let mut samples = random_samples(4, 16, 3);
    samples[0].dvl[0] = f32::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train(Model::new(&ModelConfig::tiny(), 1).unwrap(), &samples, &[], &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }));
}

#[test]
fn overfits_a_small_batch() {
    let samples = random_samples(8, 16, 31);
    let mut model = Model::new(&ModelConfig::tiny(), 2).unwrap();
    let losses = overfit(&mut model, &samples, 400, 1e-2).unwrap();
    assert!(losses.last().unwrap() < &(0.05 * losses[0]), "{} -> {}", losses[0], losses.last().unwrap());
}
