//! Ground-truth kinematic trajectories with ideal inertial readings.
//!
//! The vehicle stays level (zero roll and pitch). Its course (direction of the
//! NED velocity) turns at a constant rate, so the track is a straight line or
//! a circle. The heading may differ from the course by a sideslip angle
//! `beta(t) = A sin(2 pi t / T)` (sway); with `A = 0` this is a coordinated
//! turn where the body-frame velocity is constant `(speed, 0, 0)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::so3::{matrix_to_euler_saturating, rot_z, RotationMatrix, Vec3};

pub const GRAVITY: f64 = 9.80665;

/// Gravity in NED (down is positive).
pub fn gravity_n() -> Vec3 {
    Vec3::new(0.0, 0.0, GRAVITY)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pos_n: Vec3,
    pub vel_n: Vec3,
    /// Body to navigation frame.
    pub att_nb: RotationMatrix,
    /// Ideal specific force, body frame.
    pub specific_force_b: Vec3,
    /// Ideal angular rate, body frame.
    pub angular_rate_b: Vec3,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub rate_hz: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Index of the sample closest to time `t`, clamped to the trajectory.
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = (t * self.rate_hz).round();
        (i.max(0.0) as usize).min(self.samples.len().saturating_sub(1))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "t,pn_x,pn_y,pn_z,vn_x,vn_y,vn_z,roll_deg,pitch_deg,yaw_deg,fb_x,fb_y,fb_z,wb_x,wb_y,wb_z"
        )?;
        for s in &self.samples {
            let e = matrix_to_euler_saturating(&s.att_nb).to_degrees();
            let p = &s.pos_n;
            let v = &s.vel_n;
            let f = &s.specific_force_b;
            let w = &s.angular_rate_b;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.t, p.x, p.y, p.z, v.x, v.y, v.z, e[0], e[1], e[2], f.x, f.y, f.z, w.x, w.y, w.z
            )?;
        }
        Ok(())
    }
}

/// Sinusoidal sideslip between heading and course.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sway {
    pub amplitude_rad: f64,
    pub period_s: f64,
}

impl Sway {
    pub const NONE: Sway = Sway {
        amplitude_rad: 0.0,
        period_s: 1.0,
    };

    fn angle_and_rate(&self, t: f64) -> (f64, f64) {
        if self.amplitude_rad == 0.0 || self.period_s <= 0.0 {
            return (0.0, 0.0);
        }
        let w = std::f64::consts::TAU / self.period_s;
        let (s, c) = (w * t).sin_cos();
        (self.amplitude_rad * s, self.amplitude_rad * w * c)
    }
}

/// Level motion at constant speed with course rate `course_rate` and
/// heading = course - sideslip.
pub fn generate(
    duration_s: f64,
    speed_mps: f64,
    course0_rad: f64,
    course_rate_rad_s: f64,
    sway: Sway,
    rate_hz: f64,
) -> Trajectory {
    assert!(duration_s > 0.0 && rate_hz > 0.0 && speed_mps >= 0.0);
    let n = (duration_s * rate_hz + 1e-9).floor() as usize + 1;
    let omega = course_rate_rad_s;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / rate_hz;
            let course = course0_rad + omega * t;
            let (sc, cc) = course.sin_cos();
            let (beta, beta_rate) = sway.angle_and_rate(t);
            let heading = course - beta;

            // Chord of the circular arc, written so that omega -> 0 is benign.
            let half = 0.5 * omega * t;
            let chord = if omega == 0.0 {
                speed_mps * t
            } else {
                2.0 * speed_mps * half.sin() / omega
            };
            let mid = course0_rad + half;
            let pos_n = Vec3::new(chord * mid.cos(), chord * mid.sin(), 0.0);
            let vel_n = Vec3::new(speed_mps * cc, speed_mps * sc, 0.0);
            let acc_n = Vec3::new(-sc, cc, 0.0) * (speed_mps * omega);

            let c_nb = rot_z(heading);
            let specific_force_b = c_nb.transpose() * (acc_n - gravity_n());
            TrajectorySample {
                t,
                pos_n,
                vel_n,
                att_nb: RotationMatrix::from_matrix_unchecked(c_nb),
                specific_force_b,
                angular_rate_b: Vec3::new(0.0, 0.0, omega - beta_rate),
            }
        })
        .collect();
    Trajectory { samples, rate_hz }
}

pub fn gen_straight(duration_s: f64, speed_mps: f64, heading_rad: f64, rate_hz: f64) -> Trajectory {
    generate(duration_s, speed_mps, heading_rad, 0.0, Sway::NONE, rate_hz)
}

/// Coordinated level turn starting at heading 0 from the origin.
pub fn gen_turn(duration_s: f64, speed_mps: f64, yaw_rate_rad_s: f64, rate_hz: f64) -> Trajectory {
    generate(duration_s, speed_mps, 0.0, yaw_rate_rad_s, Sway::NONE, rate_hz)
}

/// Ground-truth body-frame velocity `R_nb^T v_n` per sample.
pub fn body_velocity_gt(traj: &Trajectory) -> Vec<Vec3> {
    traj.samples
        .iter()
        .map(|s| s.att_nb.transpose() * s.vel_n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Straight,
    Turn,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "straight" => Ok(Self::Straight),
            "turn" => Ok(Self::Turn),
            other => Err(format!("unknown trajectory '{other}' (expected straight|turn)")),
        }
    }
}

/// Serializable trajectory description. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryPreset {
    pub kind: TrajectoryKind,
    pub duration_s: f64,
    pub speed_mps: f64,
    pub heading_deg: f64,
    /// Course rate for `turn`; ignored for `straight`.
    pub yaw_rate_deg_s: f64,
    pub sway_amplitude_deg: f64,
    pub sway_period_s: f64,
    pub rate_hz: f64,
}

impl Default for TrajectoryPreset {
    fn default() -> Self {
        Self::turn()
    }
}

impl TrajectoryPreset {
    /// 200 s right turn at 2 m/s, roughly half a circle.
    pub fn turn() -> Self {
        Self {
            kind: TrajectoryKind::Turn,
            duration_s: 200.0,
            speed_mps: 2.0,
            heading_deg: 0.0,
            yaw_rate_deg_s: 0.9,
            sway_amplitude_deg: 5.0,
            sway_period_s: 30.0,
            rate_hz: 100.0,
        }
    }

    /// Same speed and duration, constant heading, no sway.
    pub fn straight() -> Self {
        Self {
            kind: TrajectoryKind::Straight,
            yaw_rate_deg_s: 0.0,
            sway_amplitude_deg: 0.0,
            ..Self::turn()
        }
    }

    pub fn of_kind(kind: TrajectoryKind) -> Self {
        match kind {
            TrajectoryKind::Straight => Self::straight(),
            TrajectoryKind::Turn => Self::turn(),
        }
    }

    pub fn sway(&self) -> Sway {
        Sway {
            amplitude_rad: self.sway_amplitude_deg.to_radians(),
            period_s: self.sway_period_s,
        }
    }

    pub fn build(&self) -> Trajectory {
        let rate = match self.kind {
            TrajectoryKind::Straight => 0.0,
            TrajectoryKind::Turn => self.yaw_rate_deg_s.to_radians(),
        };
        generate(
            self.duration_s,
            self.speed_mps,
            self.heading_deg.to_radians(),
            rate,
            self.sway(),
            self.rate_hz,
        )
    }
}
