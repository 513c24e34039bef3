//! Janus four-beam DVL: beam geometry, per-beam error model and the
//! least-squares recovery of the DVL-frame velocity.

use std::io::Write;

use nalgebra::{SMatrix, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{RotationMatrix, Vec3};
use crate::trajgen::{body_velocity_gt, Trajectory};

pub type BeamVelocities = Vector4<f64>;

const MAX_CONDITION: f64 = 1e12;

/// Stacked unit beam directions, one row per beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamMatrix(pub SMatrix<f64, 4, 3>);

/// Yaw of beam `i` (0-based): 45°, 135°, 225°, 315°.
pub fn beam_yaw(i: usize) -> f64 {
    i as f64 * std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_4
}

/// Janus ("x") configuration with common beam pitch `alpha` from vertical.
pub fn beam_matrix(alpha: f64) -> BeamMatrix {
    debug_assert!(alpha > 0.0 && alpha < std::f64::consts::FRAC_PI_2);
    let (sa, ca) = alpha.sin_cos();
    let mut h = SMatrix::<f64, 4, 3>::zeros();
    for i in 0..4 {
        let (sy, cy) = beam_yaw(i).sin_cos();
        h[(i, 0)] = cy * sa;
        h[(i, 1)] = sy * sa;
        h[(i, 2)] = ca;
    }
    BeamMatrix(h)
}

pub fn dvl_forward(v_d: &Vec3, h: &BeamMatrix) -> BeamVelocities {
    h.0 * v_d
}

/// A scalar shared by all beams or one value per beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBeam {
    Common(f64),
    Beams([f64; 4]),
}

impl PerBeam {
    pub fn get(&self, beam: usize) -> f64 {
        match self {
            PerBeam::Common(v) => *v,
            PerBeam::Beams(v) => v[beam],
        }
    }
}

impl Default for PerBeam {
    fn default() -> Self {
        PerBeam::Common(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvlSpec {
    pub rate_hz: f64,
    /// White-noise standard deviation per beam, m/s.
    pub noise_sigma: f64,
    /// Additive bias per beam, m/s.
    pub bias: PerBeam,
    /// Scale-factor error as a fraction (0.005 = 0.5 %).
    pub scale_factor: PerBeam,
    pub beam_pitch_deg: f64,
}

impl Default for DvlSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl DvlSpec {
    /// 5 Hz, 0.008 m/s noise, 0.001 m/s bias, 0.5 % scale factor.
    pub fn reference() -> Self {
        Self {
            rate_hz: 5.0,
            noise_sigma: 0.008,
            bias: PerBeam::Common(0.001),
            scale_factor: PerBeam::Common(0.005),
            beam_pitch_deg: 20.0,
        }
    }

    /// Error-free DVL at the reference rate.
    pub fn ideal() -> Self {
        Self {
            noise_sigma: 0.0,
            bias: PerBeam::Common(0.0),
            scale_factor: PerBeam::Common(0.0),
            ..Self::reference()
        }
    }

    pub fn beam_pitch_rad(&self) -> f64 {
        self.beam_pitch_deg.to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        let scale_ok = (0..4).all(|i| self.scale_factor.get(i).abs() < 1.0);
        if !(self.rate_hz > 0.0) || !(self.noise_sigma >= 0.0) || !scale_ok {
            return Err(Error::InvalidArgument(format!("invalid DVL spec {self:?}")));
        }
        if !(self.beam_pitch_deg > 0.0 && self.beam_pitch_deg < 90.0) {
            return Err(Error::InvalidArgument(format!(
                "beam pitch {} deg outside (0, 90)",
                self.beam_pitch_deg
            )));
        }
        Ok(())
    }
}

/// `beams * (1 + s) + b + sigma * n`, `n` iid standard normal per beam.
pub fn dvl_corrupt<R: Rng + ?Sized>(
    beams: &BeamVelocities,
    spec: &DvlSpec,
    rng: &mut R,
) -> BeamVelocities {
    let mut out = *beams;
    for i in 0..4 {
        let noise = if spec.noise_sigma > 0.0 {
            spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        out[i] = beams[i] * (1.0 + spec.scale_factor.get(i)) + spec.bias.get(i) + noise;
    }
    out
}

/// Precomputed pseudo-inverse `(H^T H)^-1 H^T`.
#[derive(Debug, Clone, Copy)]
pub struct DvlSolver {
    pinv: SMatrix<f64, 3, 4>,
}

impl DvlSolver {
    pub fn new(h: &BeamMatrix) -> Result<Self> {
        let hth = h.0.transpose() * h.0;
        let eig = hth.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularGeometry(cond));
        }
        let inv = hth
            .try_inverse()
            .ok_or(Error::SingularGeometry(f64::INFINITY))?;
        Ok(Self {
            pinv: inv * h.0.transpose(),
        })
    }

    pub fn solve(&self, beams: &BeamVelocities) -> Vec3 {
        self.pinv * beams
    }
}

/// Least-squares DVL-frame velocity from the four beam velocities.
pub fn dvl_solve(beams: &BeamVelocities, h: &BeamMatrix) -> Result<Vec3> {
    Ok(DvlSolver::new(h)?.solve(beams))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DvlSeries {
    pub timestamps: Vec<f64>,
    pub v_d: Vec<Vec3>,
}

impl DvlSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,vx,vy,vz")?;
        for (t, v) in self.timestamps.iter().zip(&self.v_d) {
            writeln!(out, "{},{},{},{}", t, v.x, v.y, v.z)?;
        }
        Ok(())
    }
}

/// Number of epochs of a `rate_hz` sensor over `[0, duration]`.
pub(crate) fn epoch_count(duration: f64, rate_hz: f64) -> usize {
    (duration * rate_hz + 1e-9).floor() as usize + 1
}

/// Simulated DVL output along `traj`.
///
/// `alignment` maps DVL-frame vectors into the body frame (`v_b = R v_d`),
/// so the true DVL-frame velocity is `R^T v_b`.
pub fn simulate_dvl<R: Rng + ?Sized>(
    traj: &Trajectory,
    alignment: &RotationMatrix,
    spec: &DvlSpec,
    rng: &mut R,
) -> Result<DvlSeries> {
    spec.validate()?;
    if spec.rate_hz > traj.rate_hz {
        return Err(Error::InvalidArgument(format!(
            "DVL rate {} Hz exceeds trajectory rate {} Hz",
            spec.rate_hz, traj.rate_hz
        )));
    }
    let h = beam_matrix(spec.beam_pitch_rad());
    let solver = DvlSolver::new(&h)?;
    let v_b = body_velocity_gt(traj);
    let n = epoch_count(traj.duration(), spec.rate_hz);
    let mut series = DvlSeries {
        timestamps: Vec::with_capacity(n),
        v_d: Vec::with_capacity(n),
    };
    let to_dvl = alignment.transpose();
    for j in 0..n {
        let t = j as f64 / spec.rate_hz;
        let k = traj.nearest_index(t);
        let v_true = to_dvl * v_b[k];
        let beams = dvl_corrupt(&dvl_forward(&v_true, &h), spec, rng);
        series.timestamps.push(t);
        series.v_d.push(solver.solve(&beams));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{euler_to_matrix, EulerAngles};
    use crate::trajgen::gen_straight;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn alpha20() -> BeamMatrix {
        beam_matrix(20f64.to_radians())
    }

    #[test]
    fn beam_yaws() {
        let deg: Vec<f64> = (0..4).map(|i| beam_yaw(i).to_degrees()).collect();
        for (d, e) in deg.iter().zip([45.0, 135.0, 225.0, 315.0]) {
            assert_abs_diff_eq!(*d, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn beam_rows() {
        let h = alpha20();
        assert_abs_diff_eq!(h.0[(0, 0)], 0.24185, epsilon = 1e-5);
        assert_abs_diff_eq!(h.0[(0, 1)], 0.24185, epsilon = 1e-5);
        assert_abs_diff_eq!(h.0[(0, 2)], 0.93969, epsilon = 1e-5);
        for i in 0..4 {
            assert_abs_diff_eq!(h.0.row(i).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_examples() {
        let h = alpha20();
        assert_eq!(dvl_forward(&Vec3::zeros(), &h), BeamVelocities::zeros());
        for alpha in [10.0f64, 20.0, 30.0] {
            let hb = beam_matrix(alpha.to_radians());
            let b = dvl_forward(&Vec3::new(0.0, 0.0, 1.0), &hb);
            for i in 0..4 {
                assert_abs_diff_eq!(b[i], alpha.to_radians().cos(), epsilon = 1e-15);
            }
        }
        let b = dvl_forward(&Vec3::new(1.0, 0.0, 0.0), &h);
        let expected = BeamVelocities::new(0.24185, -0.24185, -0.24185, 0.24185);
        assert_abs_diff_eq!(b, expected, epsilon = 1e-5);
    }

    #[test]
    fn corruption_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beams = BeamVelocities::new(0.3, -1.2, 2.5, 0.0);
        let zero = DvlSpec {
            noise_sigma: 0.0,
            bias: PerBeam::Common(0.0),
            scale_factor: PerBeam::Common(0.0),
            ..DvlSpec::reference()
        };
        assert_eq!(dvl_corrupt(&beams, &zero, &mut rng), beams);

        let spec = DvlSpec {
            noise_sigma: 0.0,
            ..DvlSpec::reference()
        };
        let out = dvl_corrupt(&BeamVelocities::repeat(1.0), &spec, &mut rng);
        assert_abs_diff_eq!(out, BeamVelocities::repeat(1.006), epsilon = 1e-15);

        let per_beam = DvlSpec {
            bias: PerBeam::Beams([0.0, 0.1, 0.2, 0.3]),
            ..spec
        };
        let out = dvl_corrupt(&BeamVelocities::zeros(), &per_beam, &mut rng);
        assert_eq!(out, BeamVelocities::new(0.0, 0.1, 0.2, 0.3));
    }

    #[test]
    fn corruption_noise_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = DvlSpec {
            noise_sigma: 0.008,
            bias: PerBeam::Common(0.0),
            scale_factor: PerBeam::Common(0.0),
            ..DvlSpec::reference()
        };
        let n = 100_000;
        let mut sum = [0.0; 4];
        let mut sum2 = [0.0; 4];
        for _ in 0..n {
            let b = dvl_corrupt(&BeamVelocities::zeros(), &spec, &mut rng);
            for i in 0..4 {
                sum[i] += b[i];
                sum2[i] += b[i] * b[i];
            }
        }
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let std = (sum2[i] / n as f64 - mean * mean).sqrt();
            assert!((0.0078..=0.0082).contains(&std), "beam {i}: {std}");
        }
    }

    #[test]
    fn solve_roundtrip_and_zero() {
        let h = alpha20();
        let v = Vec3::new(1.7, -0.3, 0.05);
        assert_abs_diff_eq!(dvl_solve(&dvl_forward(&v, &h), &h).unwrap(), v, epsilon = 1e-12);
        assert_eq!(dvl_solve(&BeamVelocities::zeros(), &h).unwrap(), Vec3::zeros());
    }

    #[test]
    fn singular_geometry_is_detected() {
        // All beams pointing straight down: horizontal velocity unobservable.
        let mut h = alpha20();
        for i in 0..4 {
            h.0[(i, 0)] = 0.0;
            h.0[(i, 1)] = 0.0;
            h.0[(i, 2)] = 1.0;
        }
        assert!(matches!(
            dvl_solve(&BeamVelocities::zeros(), &h),
            Err(Error::SingularGeometry(_))
        ));
    }

    #[test]
    fn solve_is_nearly_unbiased_under_reference_errors() {
        let h = alpha20();
        let solver = DvlSolver::new(&h).unwrap();
        let spec = DvlSpec::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Vec3::new(2.0, 0.0, 0.0);
        let n = 10_000;
        let mut acc = Vec3::zeros();
        for _ in 0..n {
            let beams = dvl_corrupt(&dvl_forward(&v, &h), &spec, &mut rng);
            acc += solver.solve(&beams) - v;
        }
        let mean = acc / n as f64;
        for k in 0..3 {
            assert!(mean[k].abs() < 0.01, "axis {k}: {}", mean[k]);
        }
    }

    #[test]
    fn solved_noise_follows_linear_propagation() {
        let h = alpha20();
        let solver = DvlSolver::new(&h).unwrap();
        let sigma = 0.008;
        let spec = DvlSpec {
            noise_sigma: sigma,
            bias: PerBeam::Common(0.0),
            scale_factor: PerBeam::Common(0.0),
            ..DvlSpec::reference()
        };
        let cov = (h.0.transpose() * h.0).try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sum2 = Vec3::zeros();
        for _ in 0..n {
            let e = solver.solve(&dvl_corrupt(&BeamVelocities::zeros(), &spec, &mut rng));
            sum2 += e.component_mul(&e);
        }
        for k in 0..3 {
            let std = (sum2[k] / n as f64).sqrt();
            let predicted = sigma * cov[(k, k)].sqrt();
            assert!((std / predicted - 1.0).abs() < 0.05, "axis {k}");
        }
    }

    #[test]
    fn simulate_identity_alignment_is_exact() {
        let traj = gen_straight(20.0, 2.0, 0.4, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = simulate_dvl(&traj, &RotationMatrix::identity(), &DvlSpec::ideal(), &mut rng).unwrap();
        assert_eq!(s.len(), 101);
        let v_b = body_velocity_gt(&traj);
        for (t, v) in s.timestamps.iter().zip(&s.v_d) {
            assert_abs_diff_eq!(*v, v_b[traj.nearest_index(*t)], epsilon = 1e-12);
        }
    }

    #[test]
    fn simulate_epoch_count_over_200s() {
        let traj = gen_straight(200.0, 2.0, 0.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = simulate_dvl(&traj, &RotationMatrix::identity(), &DvlSpec::reference(), &mut rng).unwrap();
        assert_eq!(s.len(), 1001);
        assert_abs_diff_eq!(s.timestamps[1] - s.timestamps[0], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn simulate_yaw_alignment() {
        let traj = gen_straight(10.0, 2.0, 0.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = euler_to_matrix(EulerAngles::from_degrees(0.0, 0.0, 5.0));
        let s = simulate_dvl(&traj, &r, &DvlSpec::ideal(), &mut rng).unwrap();
        let a = 5f64.to_radians();
        for v in &s.v_d {
            assert_abs_diff_eq!(*v, Vec3::new(2.0 * a.cos(), -2.0 * a.sin(), 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_export() {
        let s = DvlSeries {
            timestamps: vec![0.0, 0.2],
            v_d: vec![Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,vx,vy,vz\n0,1,2,3\n0.2,0,0,0\n");
    }

    proptest::proptest! {
        #[test]
        fn pseudo_inverse_identity(alpha in 5.0f64..85.0, x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let h = beam_matrix(alpha.to_radians());
            let v = Vec3::new(x, y, z);
            let back = dvl_solve(&dvl_forward(&v, &h), &h).unwrap();
            proptest::prop_assert!((back - v).norm() < 1e-12 * (1.0 + v.norm()));
        }
    }
}
