//! One simulated sensor run: DVL and mechanized INS streams for a given
//! trajectory and alignment, and the DVL-to-INS epoch pairing used by both
//! estimators.

use rand::Rng;

use crate::dvl::{simulate_dvl, DvlSeries, DvlSpec};
use crate::error::{Error, Result};
use crate::imu::{simulate_ins, ImuSpec, InsVelocitySeries};
use crate::so3::RotationMatrix;
use crate::trajgen::Trajectory;
use crate::wahba::PairedVelocityWindow;

#[derive(Debug, Clone)]
pub struct SensorRun {
    pub dvl: DvlSeries,
    pub ins: InsVelocitySeries,
}

impl SensorRun {
    /// Draws the INS errors first, then the DVL errors, from `rng`.
    pub fn simulate<R: Rng + ?Sized>(
        traj: &Trajectory,
        alignment: &RotationMatrix,
        dvl_spec: &DvlSpec,
        imu_spec: &ImuSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let ins = simulate_ins(traj, imu_spec, rng)?;
        let dvl = simulate_dvl(traj, alignment, dvl_spec, rng)?;
        Ok(Self { dvl, ins })
    }

    pub fn dvl_rate_hz(&self) -> f64 {
        if self.dvl.len() < 2 {
            return 0.0;
        }
        1.0 / (self.dvl.timestamps[1] - self.dvl.timestamps[0])
    }

    /// `len` consecutive DVL epochs from `start`, each paired with the
    /// nearest INS epoch.
    pub fn paired(&self, start: usize, len: usize) -> Result<PairedVelocityWindow> {
        if start + len > self.dvl.len() {
            return Err(Error::TooShort {
                len: self.dvl.len().saturating_sub(start),
                window: len,
            });
        }
        let mut w = PairedVelocityWindow::with_capacity(len);
        for j in start..start + len {
            let t = self.dvl.timestamps[j];
            w.timestamps.push(t);
            w.v_d.push(self.dvl.v_d[j]);
            w.v_b.push(self.ins.v_b[self.ins.nearest_index(t)]);
        }
        Ok(w)
    }

    /// The first `window_s` seconds of data.
    pub fn leading_window(&self, window_s: f64) -> Result<PairedVelocityWindow> {
        self.paired(0, window_samples(window_s, self.dvl_rate_hz()))
    }
}

/// DVL epochs in a window of `window_s` seconds.
pub fn window_samples(window_s: f64, dvl_rate_hz: f64) -> usize {
    (window_s * dvl_rate_hz).round().max(1.0) as usize
}
