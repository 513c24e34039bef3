//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers / strings and returns a JSON string so
//! the page needs no generated type glue beyond `wasm-bindgen`'s own.

use insdvl::bench::{run_window_comparison, ExperimentConfig};
use insdvl::dvl::DvlSpec;
use insdvl::imu::{ImuGrade, ImuSpec};
use insdvl::pipeline::SensorRun;
use insdvl::so3::{euler_to_matrix, geodesic_angle, matrix_to_euler_saturating, EulerAngles};
use insdvl::trajgen::TrajectoryPreset;
use insdvl::wahba::svd_align;
use serde::Serialize;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn grade(name: &str, accel_mg: f64, gyro_deg_h: f64) -> Result<ImuSpec, JsError> {
    let base = name.parse::<ImuGrade>().map_err(err)?.spec();
    let spec = ImuSpec {
        accel_bias_mg: if accel_mg >= 0.0 { accel_mg } else { base.accel_bias_mg },
        gyro_bias_deg_h: if gyro_deg_h >= 0.0 { gyro_deg_h } else { base.gyro_bias_deg_h },
        ..base
    };
    spec.validate().map_err(err)?;
    Ok(spec)
}

#[derive(Serialize)]
struct Track {
    t: Vec<f64>,
    north: Vec<f64>,
    east: Vec<f64>,
    /// Body-frame velocity components, the signal the estimators see.
    vx: Vec<f64>,
    vy: Vec<f64>,
}

/// Ground-truth track for a turn with sideslip, decimated to ~`points`.
#[wasm_bindgen]
pub fn simulate_track(
    duration_s: f64,
    speed_mps: f64,
    yaw_rate_deg_s: f64,
    sway_amplitude_deg: f64,
    sway_period_s: f64,
    points: usize,
) -> Result<String, JsError> {
    if !(duration_s > 0.0 && duration_s <= 3600.0 && speed_mps > 0.0 && sway_period_s > 0.0) {
        return Err(JsError::new("duration, speed and sway period must be positive"));
    }
    let preset = TrajectoryPreset {
        duration_s,
        speed_mps,
        yaw_rate_deg_s,
        sway_amplitude_deg,
        sway_period_s,
        ..TrajectoryPreset::turn()
    };
    let traj = preset.build();
    let step = (traj.len() / points.max(2)).max(1);
    let mut track = Track {
        t: vec![],
        north: vec![],
        east: vec![],
        vx: vec![],
        vy: vec![],
    };
    for s in traj.samples.iter().step_by(step) {
        let v_b = s.att_nb.transpose() * s.vel_n;
        track.t.push(s.t);
        track.north.push(s.pos_n.x);
        track.east.push(s.pos_n.y);
        track.vx.push(v_b.x);
        track.vy.push(v_b.y);
    }
    Ok(to_js(&track))
}

#[derive(Serialize)]
struct CurvePoint {
    window_s: f64,
    rmse_deg: f64,
    rmse_std_deg: f64,
}

/// SVD RMSE versus window length for an IMU grade. Negative bias arguments
/// keep the grade's own value.
#[wasm_bindgen]
pub fn svd_window_curve(imu_grade: &str, accel_mg: f64, gyro_deg_h: f64, trials: usize, seed: u64) -> Result<String, JsError> {
    let cfg = ExperimentConfig {
        imu: ImuGrade::Custom(grade(imu_grade, accel_mg, gyro_deg_h)?),
        trials: trials.clamp(1, 50),
        seed,
        ..ExperimentConfig::default()
    };
    let rows = run_window_comparison(&cfg).map_err(err)?;
    let curve: Vec<CurvePoint> = rows
        .into_iter()
        .map(|r| CurvePoint {
            window_s: r.window_s,
            rmse_deg: r.rmse_deg,
            rmse_std_deg: r.rmse_std_deg,
        })
        .collect();
    Ok(to_js(&curve))
}

#[derive(Serialize)]
struct Estimate {
    truth_deg: [f64; 3],
    estimate_deg: [f64; 3],
    geodesic_error_deg: f64,
    singular_values: [f64; 3],
}

/// One simulated run and SVD estimate over the leading `window_s` seconds.
/// The `ideal` grade also switches the DVL to its noise-free model.
#[wasm_bindgen]
pub fn estimate_alignment(
    roll_deg: f64,
    pitch_deg: f64,
    yaw_deg: f64,
    imu_grade: &str,
    window_s: f64,
    seed: u64,
) -> Result<String, JsError> {
    let truth = EulerAngles::from_degrees(roll_deg, pitch_deg, yaw_deg);
    if !truth.is_finite() {
        return Err(JsError::new("angles must be finite"));
    }
    let preset = TrajectoryPreset::turn();
    if !(window_s > 0.0 && window_s <= preset.duration_s) {
        return Err(JsError::new("window must lie within the 200 s trajectory"));
    }
    let spec = grade(imu_grade, -1.0, -1.0)?;
    let traj = TrajectoryPreset {
        duration_s: window_s + 1.0,
        ..preset
    }
    .build();
    let r_true = euler_to_matrix(truth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dvl = if imu_grade == "ideal" { DvlSpec::ideal() } else { DvlSpec::reference() };
    let run = SensorRun::simulate(&traj, &r_true, &dvl, &spec, &mut rng).map_err(err)?;
    let est = svd_align(&run.leading_window(window_s).map_err(err)?).map_err(err)?;
    Ok(to_js(&Estimate {
        truth_deg: truth.to_degrees(),
        estimate_deg: matrix_to_euler_saturating(&est.rotation).to_degrees(),
        geodesic_error_deg: geodesic_angle(&r_true, &est.rotation).to_degrees(),
        singular_values: est.singular_values,
    }))
}
