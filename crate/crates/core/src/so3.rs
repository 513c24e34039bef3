//! Rotation algebra shared by the simulator, the estimators and the metrics.
//!
//! Euler angles follow the intrinsic Z-Y-X (yaw, pitch, roll) convention:
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Angles are radians everywhere in the
//! library; conversion to degrees happens at I/O boundaries.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type RotationMatrix = Rotation3<f64>;
/// Rotation vector: direction is the axis, norm is the angle in radians.
pub type AxisAngleVector = Vector3<f64>;

const GIMBAL_MARGIN: f64 = 1e-9;
const SMALL_ANGLE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const ZERO: EulerAngles = EulerAngles {
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn from_degrees_array(deg: [f64; 3]) -> Self {
        Self::from_degrees(deg[0], deg[1], deg[2])
    }

    /// `[roll, pitch, yaw]` in degrees.
    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_matrix(e: EulerAngles) -> RotationMatrix {
    RotationMatrix::from_matrix_unchecked(rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll))
}

pub fn matrix_to_euler(r: &RotationMatrix) -> Result<EulerAngles> {
    let m = r.matrix();
    let r20 = m[(2, 0)];
    if r20.abs() >= 1.0 - GIMBAL_MARGIN {
        return Err(Error::GimbalLock(r20.abs()));
    }
    Ok(EulerAngles {
        roll: m[(2, 1)].atan2(m[(2, 2)]),
        pitch: (-r20).asin(),
        yaw: m[(1, 0)].atan2(m[(0, 0)]),
    })
}

/// Like [`matrix_to_euler`] but total: at gimbal lock the pitch saturates at
/// ±90° and roll is reported as zero. Used when scoring arbitrarily bad
/// estimates.
pub fn matrix_to_euler_saturating(r: &RotationMatrix) -> EulerAngles {
    match matrix_to_euler(r) {
        Ok(e) => e,
        Err(_) => {
            let m = r.matrix();
            let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
            let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
            EulerAngles::new(0.0, pitch, yaw)
        }
    }
}

/// Skew-symmetric matrix such that `hat(w) * v == w.cross(&v)`.
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map (Rodrigues).
pub fn so3_exp(w: &AxisAngleVector) -> RotationMatrix {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotationMatrix::from_matrix_unchecked(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map to a rotation vector with norm in `[0, π]`.
pub fn so3_log(r: &RotationMatrix) -> AxisAngleVector {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);

    if theta < SMALL_ANGLE {
        // theta / (2 sin theta) ~ 1/2 + theta^2/12
        return vee * (0.5 + theta * theta / 12.0);
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return vee * (theta / (2.0 * theta.sin()));
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + I = 2 n n^T (+ O(π - θ)) using its dominant column.
    let sym = m + Mat3::identity();
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let k = (0..3)
        .max_by(|&a, &b| diag[a].total_cmp(&diag[b]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(k).into_owned();
    axis /= axis.norm();
    // Fix the sign with the (small) antisymmetric part when it carries any.
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation angle of `a^T b` in radians.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    so3_log(&(a.transpose() * b)).norm()
}

/// Each axis drawn uniformly from `[0, range_deg]` degrees.
pub fn sample_alignment<R: Rng + ?Sized>(range_deg: f64, rng: &mut R) -> EulerAngles {
    let mut draw = || {
        if range_deg > 0.0 {
            rng.random_range(0.0..=range_deg)
        } else {
            0.0
        }
    };
    let (r, p, y) = (draw(), draw(), draw());
    EulerAngles::from_degrees(r, p, y)
}

/// `levels^3` alignments evenly spaced over `[0, range_deg]` on each axis,
/// ordered lexicographically (roll slowest, yaw fastest).
pub fn grid_alignments(levels_per_axis: usize, range_deg: f64) -> Vec<EulerAngles> {
    let levels: Vec<f64> = if levels_per_axis <= 1 {
        vec![0.0]
    } else {
        let step = range_deg / (levels_per_axis - 1) as f64;
        (0..levels_per_axis).map(|i| i as f64 * step).collect()
    };
    let mut out = Vec::with_capacity(levels.len().pow(3));
    for &r in &levels {
        for &p in &levels {
            for &y in &levels {
                out.push(EulerAngles::from_degrees(r, p, y));
            }
        }
    }
    out
}

pub fn orthonormality_defect(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}
