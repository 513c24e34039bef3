//! Velocity-matching alignment baseline: the SVD solution of Wahba's problem
//! over paired INS/DVL velocities.
//!
//! The unknown `R` maps DVL-frame vectors into the body frame,
//! `v_b = R v_d`, and minimizes `C(R) = 1/N sum |v_b - R v_d|^2` over SO(3).
//! No centroid is removed: there is no translation term in the model.

use nalgebra::{Matrix3, SVD};
use rand::Rng;

use crate::dvl::DvlSpec;
use crate::error::{Error, Result};
use crate::imu::ImuSpec;
use crate::pipeline::SensorRun;
use crate::so3::{euler_to_matrix, geodesic_angle, matrix_to_euler_saturating, EulerAngles, RotationMatrix, Vec3};
use crate::trajgen::Trajectory;

const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedVelocityWindow {
    pub timestamps: Vec<f64>,
    pub v_b: Vec<Vec3>,
    pub v_d: Vec<Vec3>,
}

impl PairedVelocityWindow {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            timestamps: Vec::with_capacity(n),
            v_b: Vec::with_capacity(n),
            v_d: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.v_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_b.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentEstimate {
    /// Estimated DVL-to-body rotation.
    pub rotation: RotationMatrix,
    pub residual_cost: f64,
    /// Singular values of the cross-covariance, descending.
    pub singular_values: [f64; 3],
}

pub fn wahba_cost(w: &PairedVelocityWindow, r: &RotationMatrix) -> f64 {
    let sum: f64 = w
        .v_b
        .iter()
        .zip(&w.v_d)
        .map(|(b, d)| (b - r * d).norm_squared())
        .sum();
    sum / w.len() as f64
}

pub fn svd_align(w: &PairedVelocityWindow) -> Result<AlignmentEstimate> {
    if w.v_b.len() != w.v_d.len() {
        return Err(Error::LengthMismatch(w.v_b.len(), w.v_d.len()));
    }
    if w.len() < 3 {
        return Err(Error::TooShort {
            len: w.len(),
            window: 3,
        });
    }
    let b: Matrix3<f64> = w
        .v_b
        .iter()
        .zip(&w.v_d)
        .map(|(vb, vd)| vb * vd.transpose())
        .sum();

    let svd = SVD::new(b, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateWindow([f64::NAN; 3])),
    };
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = DEGENERACY_RATIO * sorted[0];
    if !(sorted[0] > 0.0) || (sorted[1] < threshold && sorted[2] < threshold) {
        return Err(Error::DegenerateWindow(sorted));
    }

    // R = U diag(1, 1, d) V^T with the sign flip on the weakest direction.
    let weakest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap_or(2);
    let mut diag = Vec3::repeat(1.0);
    diag[weakest] = (u * v_t).determinant().signum();
    let r = RotationMatrix::from_matrix_unchecked(u * Matrix3::from_diagonal(&diag) * v_t);
    Ok(AlignmentEstimate {
        residual_cost: wahba_cost(w, &r),
        rotation: r,
        singular_values: sorted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryAlignment {
    pub estimate: AlignmentEstimate,
    pub estimated_euler: EulerAngles,
    /// Geodesic angle between estimate and truth, degrees.
    pub geodesic_error_deg: f64,
}

/// Simulates both sensors along `traj` and solves on the first `window_s`
/// seconds.
pub fn svd_align_trajectory<R: Rng + ?Sized>(
    traj: &Trajectory,
    alignment_gt: EulerAngles,
    dvl_spec: &DvlSpec,
    imu_spec: &ImuSpec,
    window_s: f64,
    rng: &mut R,
) -> Result<TrajectoryAlignment> {
    if window_s > traj.duration() + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "window {window_s} s longer than trajectory {} s",
            traj.duration()
        )));
    }
    let truth = euler_to_matrix(alignment_gt);
    let run = SensorRun::simulate(traj, &truth, dvl_spec, imu_spec, rng)?;
    let estimate = svd_align(&run.leading_window(window_s)?)?;
    Ok(TrajectoryAlignment {
        estimated_euler: matrix_to_euler_saturating(&estimate.rotation),
        geodesic_error_deg: geodesic_angle(&truth, &estimate.rotation).to_degrees(),
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::so3_exp;
    use crate::trajgen::{gen_straight, TrajectoryPreset};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn generic_vectors(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            .collect()
    }

    fn window_from(v_b: &[Vec3], r: &RotationMatrix) -> PairedVelocityWindow {
        PairedVelocityWindow {
            timestamps: (0..v_b.len()).map(|i| i as f64).collect(),
            v_b: v_b.to_vec(),
            v_d: v_b.iter().map(|v| r.transpose() * v).collect(),
        }
    }

    #[test]
    fn identical_sets_give_identity() {
        let v = generic_vectors(10, 1);
        let est = svd_align(&window_from(&v, &RotationMatrix::identity())).unwrap();
        assert!((est.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(est.residual_cost < 1e-24);
    }

    #[test]
    fn recovers_known_rotation() {
        let r = euler_to_matrix(EulerAngles::from_degrees(3.0, 2.0, 4.0));
        let est = svd_align(&window_from(&generic_vectors(10, 2), &r)).unwrap();
        assert!((est.rotation.matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn constant_velocity_is_degenerate() {
        let v = vec![Vec3::new(2.0, 0.0, 0.0); 25];
        let w = window_from(&v, &euler_to_matrix(EulerAngles::from_degrees(1.0, 2.0, 3.0)));
        assert!(matches!(svd_align(&w), Err(Error::DegenerateWindow(_))));
    }

    #[test]
    fn planar_data_is_enough() {
        // Two independent directions pin down a rotation uniquely.
        let v: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new(2.0, 0.1 * (i as f64 * 0.3).sin(), 0.0))
            .collect();
        let r = euler_to_matrix(EulerAngles::from_degrees(4.0, 1.0, 2.5));
        let est = svd_align(&window_from(&v, &r)).unwrap();
        assert!(geodesic_angle(&r, &est.rotation) < 1e-9);
    }

    #[test]
    fn reflection_is_corrected() {
        // v_d is a mirror image of v_b: the unconstrained optimum is a
        // reflection, the constrained one must still be a proper rotation.
        let v_b = generic_vectors(12, 3);
        let w = PairedVelocityWindow {
            timestamps: vec![0.0; 12],
            v_d: v_b.iter().map(|v| Vec3::new(v.x, v.y, -v.z)).collect(),
            v_b,
        };
        let b: Matrix3<f64> = w.v_b.iter().zip(&w.v_d).map(|(x, y)| x * y.transpose()).sum();
        let svd = SVD::new(b, true, true);
        assert!((svd.u.unwrap() * svd.v_t.unwrap()).determinant() < 0.0);
        let est = svd_align(&w).unwrap();
        assert!((est.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(crate::so3::orthonormality_defect(est.rotation.matrix()) < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let w = window_from(&generic_vectors(2, 4), &RotationMatrix::identity());
        assert!(matches!(svd_align(&w), Err(Error::TooShort { .. })));
    }

    #[test]
    fn noise_free_turn_recovers_alignment() {
        let traj = TrajectoryPreset::turn().build();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for window in [5.0, 25.0, 100.0] {
            let res = svd_align_trajectory(
                &traj,
                EulerAngles::from_degrees(2.5, 5.0, 1.25),
                &DvlSpec::ideal(),
                &ImuSpec::ideal(),
                window,
                &mut rng,
            )
            .unwrap();
            assert!(res.geodesic_error_deg < 0.01, "{window}: {}", res.geodesic_error_deg);
        }
    }

    #[test]
    fn straight_line_is_unobservable() {
        let traj = gen_straight(50.0, 2.0, 0.0, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let res = svd_align_trajectory(
            &traj,
            EulerAngles::from_degrees(1.0, 1.0, 1.0),
            &DvlSpec::ideal(),
            &ImuSpec::ideal(),
            10.0,
            &mut rng,
        );
        assert!(matches!(res, Err(Error::DegenerateWindow(_))));
    }

    fn rotation_strategy() -> impl Strategy<Value = RotationMatrix> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..3.1)
            .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-2)
            .prop_map(|(x, y, z, a)| so3_exp(&(Vec3::new(x, y, z).normalize() * a)))
    }

    proptest! {
        #[test]
        fn rotation_recovery(r in rotation_strategy(), seed in 0u64..1000, n in 3usize..30) {
            let est = svd_align(&window_from(&generic_vectors(n, seed), &r)).unwrap();
            prop_assert!(geodesic_angle(&r, &est.rotation) < 1e-9);
        }

        #[test]
        fn scale_invariance(r in rotation_strategy(), seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut w = window_from(&generic_vectors(15, seed), &r);
            for v in w.v_d.iter_mut() {
                *v += Vec3::new(0.01, -0.02, 0.015);
            }
            let base = svd_align(&w).unwrap();
            let scaled = PairedVelocityWindow {
                timestamps: w.timestamps.clone(),
                v_b: w.v_b.iter().map(|v| v * scale).collect(),
                v_d: w.v_d.iter().map(|v| v * scale).collect(),
            };
            let est = svd_align(&scaled).unwrap();
            prop_assert!((est.rotation.matrix() - base.rotation.matrix()).norm() < 1e-12);
        }

        #[test]
        fn common_rotation_invariance(r in rotation_strategy(), q in rotation_strategy(), seed in 0u64..1000) {
            let mut w = window_from(&generic_vectors(15, seed), &r);
            for v in w.v_d.iter_mut() {
                *v += Vec3::new(0.05, -0.03, 0.02);
            }
            let base = svd_align(&w).unwrap();
            let base_err = geodesic_angle(&r, &base.rotation);
            // Rotating the body-frame data by Q turns the true alignment into Q R.
            let rotated = PairedVelocityWindow {
                timestamps: w.timestamps.clone(),
                v_b: w.v_b.iter().map(|v| q * v).collect(),
                v_d: w.v_d.clone(),
            };
            let est = svd_align(&rotated).unwrap();
            let err = geodesic_angle(&(q * r), &est.rotation);
            prop_assert!((err - base_err).abs() < 1e-9);
        }
    }
}
