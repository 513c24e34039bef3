//! IMU error model and a simplified strapdown mechanization (no Earth rate,
//! no transport rate) producing the INS body-frame velocity.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{so3_exp, RotationMatrix, Vec3};
use crate::trajgen::{body_velocity_gt, gravity_n, Trajectory, GRAVITY};

/// 1 mg in m/s².
pub const MILLI_G: f64 = GRAVITY / 1000.0;
/// 1 °/h in rad/s.
pub const DEG_PER_HOUR: f64 = std::f64::consts::PI / 180.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasSigns {
    /// Independent random sign per axis, drawn once per run.
    #[default]
    Random,
    /// All axes positive.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuSpec {
    pub rate_hz: f64,
    pub accel_bias_mg: f64,
    pub gyro_bias_deg_h: f64,
    pub accel_noise_mg_rt_hz: f64,
    pub gyro_noise_deg_rt_h: f64,
    pub bias_signs: BiasSigns,
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self::navigation()
    }
}

impl ImuSpec {
    pub fn navigation() -> Self {
        Self {
            rate_hz: 100.0,
            accel_bias_mg: 0.1,
            gyro_bias_deg_h: 1.0,
            accel_noise_mg_rt_hz: 0.001,
            gyro_noise_deg_rt_h: 0.01,
            bias_signs: BiasSigns::Random,
        }
    }

    pub fn tactical() -> Self {
        Self {
            accel_bias_mg: 1.0,
            gyro_bias_deg_h: 10.0,
            accel_noise_mg_rt_hz: 0.01,
            gyro_noise_deg_rt_h: 0.1,
            ..Self::navigation()
        }
    }

    pub fn ideal() -> Self {
        Self {
            accel_bias_mg: 0.0,
            gyro_bias_deg_h: 0.0,
            accel_noise_mg_rt_hz: 0.0,
            gyro_noise_deg_rt_h: 0.0,
            ..Self::navigation()
        }
    }

    pub fn accel_bias_mps2(&self) -> f64 {
        self.accel_bias_mg * MILLI_G
    }

    pub fn gyro_bias_rad_s(&self) -> f64 {
        self.gyro_bias_deg_h * DEG_PER_HOUR
    }

    /// Per-sample accelerometer noise standard deviation, m/s².
    pub fn accel_sigma(&self) -> f64 {
        self.accel_noise_mg_rt_hz * MILLI_G * self.rate_hz.sqrt()
    }

    /// Per-sample gyro noise standard deviation, rad/s.
    pub fn gyro_sigma(&self) -> f64 {
        self.gyro_noise_deg_rt_h * (std::f64::consts::PI / 180.0 / 60.0) * self.rate_hz.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rate_hz > 0.0
            && self.accel_bias_mg >= 0.0
            && self.gyro_bias_deg_h >= 0.0
            && self.accel_noise_mg_rt_hz >= 0.0
            && self.gyro_noise_deg_rt_h >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid IMU spec {self:?}")))
        }
    }
}

/// Named IMU quality tier or explicit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImuGrade {
    Navigation,
    Tactical,
    Ideal,
    Custom(ImuSpec),
}

impl ImuGrade {
    pub fn spec(&self) -> ImuSpec {
        match self {
            ImuGrade::Navigation => ImuSpec::navigation(),
            ImuGrade::Tactical => ImuSpec::tactical(),
            ImuGrade::Ideal => ImuSpec::ideal(),
            ImuGrade::Custom(s) => *s,
        }
    }
}

impl std::str::FromStr for ImuGrade {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "navigation" => Ok(Self::Navigation),
            "tactical" => Ok(Self::Tactical),
            "ideal" => Ok(Self::Ideal),
            other => Err(format!(
                "unknown IMU grade '{other}' (expected navigation|tactical|ideal)"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImuSeries {
    pub timestamps: Vec<f64>,
    pub f_b: Vec<Vec3>,
    pub w_b: Vec<Vec3>,
}

impl ImuSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsVelocitySeries {
    pub timestamps: Vec<f64>,
    pub v_b: Vec<Vec3>,
}

impl InsVelocitySeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn rate_hz(&self) -> f64 {
        if self.timestamps.len() < 2 {
            return 0.0;
        }
        1.0 / (self.timestamps[1] - self.timestamps[0])
    }

    /// Index of the epoch nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.timestamps.len() {
            0 => 0,
            1 => 0,
            n => {
                let t0 = self.timestamps[0];
                let i = ((t - t0) * self.rate_hz()).round().max(0.0) as usize;
                i.min(n - 1)
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,vx,vy,vz")?;
        for (t, v) in self.timestamps.iter().zip(&self.v_b) {
            writeln!(out, "{},{},{},{}", t, v.x, v.y, v.z)?;
        }
        Ok(())
    }
}

fn draw_signs<R: Rng + ?Sized>(signs: BiasSigns, rng: &mut R) -> Vec3 {
    match signs {
        BiasSigns::Positive => Vec3::repeat(1.0),
        BiasSigns::Random => Vec3::from_fn(|_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
    }
}

fn gaussian3<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    Vec3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Corrupted IMU readings at `spec.rate_hz` (nearest trajectory sample).
/// Scale-factor matrices are identity; biases are constant over the run.
pub fn imu_corrupt<R: Rng + ?Sized>(
    traj: &Trajectory,
    spec: &ImuSpec,
    rng: &mut R,
) -> Result<ImuSeries> {
    spec.validate()?;
    if spec.rate_hz > traj.rate_hz * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "IMU rate {} Hz exceeds trajectory rate {} Hz",
            spec.rate_hz, traj.rate_hz
        )));
    }
    let accel_bias = draw_signs(spec.bias_signs, rng) * spec.accel_bias_mps2();
    let gyro_bias = draw_signs(spec.bias_signs, rng) * spec.gyro_bias_rad_s();
    let (sa, sg) = (spec.accel_sigma(), spec.gyro_sigma());

    let n = crate::dvl::epoch_count(traj.duration(), spec.rate_hz);
    let mut out = ImuSeries {
        timestamps: Vec::with_capacity(n),
        f_b: Vec::with_capacity(n),
        w_b: Vec::with_capacity(n),
    };
    for j in 0..n {
        let t = j as f64 / spec.rate_hz;
        let s = &traj.samples[traj.nearest_index(t)];
        out.timestamps.push(t);
        out.f_b.push(s.specific_force_b + accel_bias + gaussian3(sa, rng));
        out.w_b.push(s.angular_rate_b + gyro_bias + gaussian3(sg, rng));
    }
    Ok(out)
}

/// Strapdown integration from a known initial state.
///
/// Trapezoidal strapdown step: `R' = R exp(hat((w_k + w_k+1) dt / 2))` and
/// `v' = v + ((R f_k + R' f_k+1) / 2 + g) dt`. Returns body-frame velocity
/// at every IMU epoch.
pub fn mechanize(imu: &ImuSeries, init_v_n: Vec3, init_att_nb: RotationMatrix) -> InsVelocitySeries {
    let n = imu.len();
    let mut out = InsVelocitySeries {
        timestamps: imu.timestamps.clone(),
        v_b: Vec::with_capacity(n),
    };
    let g = gravity_n();
    let mut att = init_att_nb;
    let mut v_n = init_v_n;
    for k in 0..n {
        out.v_b.push(att.transpose() * v_n);
        if k + 1 == n {
            break;
        }
        let dt = imu.timestamps[k + 1] - imu.timestamps[k];
        let next = att * so3_exp(&((imu.w_b[k] + imu.w_b[k + 1]) * (0.5 * dt)));
        v_n += ((att * imu.f_b[k] + next * imu.f_b[k + 1]) * 0.5 + g) * dt;
        att = next;
    }
    out
}

/// Corrupt + mechanize starting from the trajectory's true initial state.
pub fn simulate_ins<R: Rng + ?Sized>(
    traj: &Trajectory,
    spec: &ImuSpec,
    rng: &mut R,
) -> Result<InsVelocitySeries> {
    let imu = imu_corrupt(traj, spec, rng)?;
    let first = traj
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    Ok(mechanize(&imu, first.vel_n, first.att_nb))
}

/// Monte-Carlo RMS of `|v_b,ins - v_b,gt|` at each IMU epoch: `(t, rms)`.
pub fn velocity_error_growth<R: Rng + ?Sized>(
    spec: &ImuSpec,
    traj: &Trajectory,
    n_trials: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
    }
    let truth = body_velocity_gt(traj);
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    for _ in 0..n_trials {
        let ins = simulate_ins(traj, spec, rng)?;
        if sum_sq.is_empty() {
            sum_sq = vec![0.0; ins.len()];
            times = ins.timestamps.clone();
        }
        for (k, (t, v)) in ins.timestamps.iter().zip(&ins.v_b).enumerate() {
            sum_sq[k] += (v - truth[traj.nearest_index(*t)]).norm_squared();
        }
    }
    Ok(times
        .into_iter()
        .zip(sum_sq)
        .map(|(t, s)| (t, (s / n_trials as f64).sqrt()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::orthonormality_defect;
    use crate::trajgen::{gen_straight, gen_turn, TrajectoryPreset};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ideal_spec_is_passthrough() {
        let traj = gen_turn(5.0, 2.0, 0.1, 100.0);
        let imu = imu_corrupt(&traj, &ImuSpec::ideal(), &mut rng(0)).unwrap();
        for (k, s) in traj.samples.iter().enumerate() {
            assert_eq!(imu.f_b[k], s.specific_force_b);
            assert_eq!(imu.w_b[k], s.angular_rate_b);
        }
    }

    #[test]
    fn accel_bias_conversion() {
        let traj = gen_straight(1.0, 2.0, 0.0, 100.0);
        let spec = ImuSpec {
            accel_bias_mg: 1.0,
            bias_signs: BiasSigns::Positive,
            ..ImuSpec::ideal()
        };
        let imu = imu_corrupt(&traj, &spec, &mut rng(0)).unwrap();
        let d = imu.f_b[0] - traj.samples[0].specific_force_b;
        assert_abs_diff_eq!(d, Vec3::repeat(9.80665e-3), epsilon = 1e-15);
    }

    #[test]
    fn gyro_noise_density_conversion() {
        let spec = ImuSpec {
            gyro_noise_deg_rt_h: 0.1,
            ..ImuSpec::ideal()
        };
        assert_abs_diff_eq!(spec.gyro_sigma(), 2.909e-4, epsilon = 1e-7);
        let expected = 0.1 * (std::f64::consts::PI / 180.0) / 60.0 * 10.0;
        assert_abs_diff_eq!(spec.gyro_sigma(), expected, epsilon = 1e-18);
    }

    #[test]
    fn stationary_mechanization_stays_at_rest() {
        let traj = gen_straight(100.0, 0.0, 0.0, 100.0);
        let ins = simulate_ins(&traj, &ImuSpec::ideal(), &mut rng(0)).unwrap();
        for v in &ins.v_b {
            assert!(v.norm() < 1e-9);
        }
    }

    #[test]
    fn straight_line_mechanization() {
        let traj = gen_straight(200.0, 2.0, 0.0, 100.0);
        let ins = simulate_ins(&traj, &ImuSpec::ideal(), &mut rng(0)).unwrap();
        for v in &ins.v_b {
            assert!((v - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn accel_bias_drift_is_linear() {
        let traj = gen_straight(100.0, 2.0, 0.0, 100.0);
        let spec = ImuSpec {
            accel_bias_mg: 1.0,
            bias_signs: BiasSigns::Positive,
            ..ImuSpec::ideal()
        };
        let ins = simulate_ins(&traj, &spec, &mut rng(0)).unwrap();
        let err = ins.v_b.last().unwrap().x - 2.0;
        assert!((err / 0.980665 - 1.0).abs() < 0.02, "{err}");
    }

    #[test]
    fn attitude_stays_orthonormal() {
        let traj = TrajectoryPreset::turn().build();
        let imu = imu_corrupt(&traj, &ImuSpec::tactical(), &mut rng(1)).unwrap();
        let mut att = traj.samples[0].att_nb;
        for k in 0..imu.len() - 1 {
            att *= so3_exp(&(imu.w_b[k] * 0.01));
        }
        assert!(imu.len() >= 20_000);
        assert!(orthonormality_defect(att.matrix()) < 1e-9);
    }

    #[test]
    fn generator_and_mechanization_agree() {
        for traj in [
            TrajectoryPreset::turn().build(),
            TrajectoryPreset::straight().build(),
            gen_turn(200.0, 2.0, std::f64::consts::PI / 200.0, 100.0),
        ] {
            let ins = simulate_ins(&traj, &ImuSpec::ideal(), &mut rng(0)).unwrap();
            let truth = body_velocity_gt(&traj);
            let worst = ins
                .v_b
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-3, "worst velocity error {worst}");
        }
    }

    #[test]
    fn error_growth_zero_spec() {
        let traj = gen_turn(20.0, 2.0, 0.05, 100.0);
        let growth = velocity_error_growth(&ImuSpec::ideal(), &traj, 2, &mut rng(0)).unwrap();
        assert_eq!(growth.len(), traj.len());
        assert!(growth.iter().all(|(_, e)| *e <= 1e-6));
    }

    #[test]
    fn error_growth_is_linear_in_accel_bias() {
        let traj = gen_straight(50.0, 2.0, 0.0, 100.0);
        let spec1 = ImuSpec {
            accel_bias_mg: 1.0,
            bias_signs: BiasSigns::Positive,
            ..ImuSpec::ideal()
        };
        let spec2 = ImuSpec {
            accel_bias_mg: 2.0,
            ..spec1
        };
        let e1 = velocity_error_growth(&spec1, &traj, 1, &mut rng(0)).unwrap();
        let e2 = velocity_error_growth(&spec2, &traj, 1, &mut rng(0)).unwrap();
        let (a, b) = (e1.last().unwrap().1, e2.last().unwrap().1);
        assert_abs_diff_eq!(b / a, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn gyro_bias_error_is_superlinear() {
        let traj = gen_straight(200.0, 2.0, 0.0, 100.0);
        let spec = ImuSpec {
            gyro_bias_deg_h: 10.0,
            bias_signs: BiasSigns::Positive,
            ..ImuSpec::ideal()
        };
        let growth = velocity_error_growth(&spec, &traj, 1, &mut rng(0)).unwrap();
        // Least-squares fits e = a t and e = b t^2; compare residuals.
        let (mut stt, mut ste, mut st4, mut st2e) = (0.0, 0.0, 0.0, 0.0);
        for (t, e) in &growth {
            stt += t * t;
            ste += t * e;
            st4 += t.powi(4);
            st2e += t * t * e;
        }
        let (a, b) = (ste / stt, st2e / st4);
        let (mut r1, mut r2) = (0.0, 0.0);
        for (t, e) in &growth {
            r1 += (e - a * t).powi(2);
            r2 += (e - b * t * t).powi(2);
        }
        assert!(r2 < r1, "t^2 residual {r2} vs t residual {r1}");
    }
}
