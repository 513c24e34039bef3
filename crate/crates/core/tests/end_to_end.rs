use insdvl::dataset::{generate_dataset, load_dataset, save_dataset, BuildOptions, DatasetParams};
use insdvl::dvl::DvlSpec;
use insdvl::imu::ImuSpec;
use insdvl::pipeline::SensorRun;
use insdvl::regressor::{Model, ModelConfig};
use insdvl::so3::{euler_to_matrix, geodesic_angle, EulerAngles};
use insdvl::trajgen::TrajectoryPreset;
use insdvl::wahba::svd_align;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short_turn(duration_s: f64) -> TrajectoryPreset {
    TrajectoryPreset {
        duration_s,
        ..TrajectoryPreset::turn()
    }
}

fn small_params() -> DatasetParams {
    DatasetParams {
        trajectory: short_turn(12.0),
        alignment_levels: 3,
        build: BuildOptions {
            window_len: 16,
            window_step: 8,
            ins_per_alignment: true,
        },
        ..DatasetParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noise_free_sensors_give_exact_alignment(
        roll in -10.0f64..10.0,
        pitch in -10.0f64..10.0,
        yaw in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let traj = short_turn(16.0).build();
        let r = euler_to_matrix(EulerAngles::from_degrees(roll, pitch, yaw));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = SensorRun::simulate(&traj, &r, &DvlSpec::ideal(), &ImuSpec::ideal(), &mut rng).unwrap();
        let est = svd_align(&run.leading_window(15.0).unwrap()).unwrap();
        prop_assert!(geodesic_angle(&r, &est.rotation).to_degrees() < 1e-4);
    }
}

#[test]
fn generated_dataset_survives_disk_and_feeds_the_model() {
    let ds = generate_dataset(&small_params(), 11).unwrap();
    let total = ds.train.len() + ds.val.len() + ds.test.len();
    assert!(total > 0);
    assert_eq!(ds.manifest.configurations.train + ds.manifest.configurations.val + ds.manifest.configurations.test, 27);

    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.test, ds.test);

    let cfg = ModelConfig {
        window_len: 16,
        ..ModelConfig::tiny()
    };
    let model = Model::new(&cfg, 3).unwrap();
    let preds = model.predict_deg(&back.test).unwrap();
    assert_eq!(preds.len(), back.test.len());
    assert!(preds.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn dataset_generation_is_seed_deterministic() {
    let a = generate_dataset(&small_params(), 5).unwrap();
    let b = generate_dataset(&small_params(), 5).unwrap();
    let c = generate_dataset(&small_params(), 6).unwrap();
    assert_eq!(a.train, b.train);
    assert_ne!(a.train, c.train);
}
