//! Evaluation metrics. All results are in degrees.
//!
//! `rmse` divides the summed squared error of all three angles by the number
//! of samples only (not by `3N`), so a uniform per-angle error `e` yields
//! `sqrt(3) e`. `aoe` is the RMS of geodesic angles between true and
//! estimated rotations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{so3_log, EulerAngles, RotationMatrix};

/// Difference `a - b` wrapped into `(-180, 180]` degrees.
pub fn wrap_deg(d: f64) -> f64 {
    let mut w = d % 360.0;
    if w > 180.0 {
        w -= 360.0;
    } else if w <= -180.0 {
        w += 360.0;
    }
    w
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::LengthMismatch(a, b));
    }
    Ok(())
}

/// Squared Euler error of one sample summed over roll, pitch and yaw (deg²).
pub fn euler_sq_error_deg(label: &EulerAngles, pred: &EulerAngles) -> f64 {
    label
        .to_degrees()
        .iter()
        .zip(pred.to_degrees())
        .map(|(l, p)| wrap_deg(l - p).powi(2))
        .sum()
}

pub fn rmse(labels: &[EulerAngles], preds: &[EulerAngles]) -> Result<f64> {
    check_lengths(labels.len(), preds.len())?;
    let sum: f64 = labels
        .iter()
        .zip(preds)
        .map(|(l, p)| euler_sq_error_deg(l, p))
        .sum();
    Ok((sum / labels.len() as f64).sqrt())
}

fn geodesic_deg(label: &RotationMatrix, pred: &RotationMatrix) -> f64 {
    so3_log(&(label.transpose() * pred)).norm().to_degrees()
}

pub fn aoe(labels: &[RotationMatrix], preds: &[RotationMatrix]) -> Result<f64> {
    check_lengths(labels.len(), preds.len())?;
    let m = labels.len() as f64;
    let sum: f64 = labels
        .iter()
        .zip(preds)
        .map(|(l, p)| geodesic_deg(l, p).powi(2) / m)
        .sum();
    Ok(sum.sqrt())
}

pub fn max_geodesic_error(labels: &[RotationMatrix], preds: &[RotationMatrix]) -> Result<f64> {
    check_lengths(labels.len(), preds.len())?;
    Ok(labels
        .iter()
        .zip(preds)
        .map(|(l, p)| geodesic_deg(l, p))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub window_s: f64,
    pub rmse_deg: f64,
    /// Standard deviation of the per-trial RMSE (0 for a single trial).
    pub rmse_std_deg: f64,
    pub aoe_deg: f64,
    pub max_err_deg: f64,
    pub n_samples: usize,
    pub n_trials: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "method,window_s,rmse_deg,rmse_std_deg,aoe_deg,max_err_deg,n_samples,n_trials";

impl EvalReport {
    /// Scores a set of predictions as a single trial.
    pub fn from_predictions(
        method: &str,
        window_s: f64,
        labels: &[EulerAngles],
        preds: &[EulerAngles],
    ) -> Result<Self> {
        let lr: Vec<_> = labels.iter().map(|e| crate::so3::euler_to_matrix(*e)).collect();
        let pr: Vec<_> = preds.iter().map(|e| crate::so3::euler_to_matrix(*e)).collect();
        Ok(Self {
            method: method.to_string(),
            window_s,
            rmse_deg: rmse(labels, preds)?,
            rmse_std_deg: 0.0,
            aoe_deg: aoe(&lr, &pr)?,
            max_err_deg: max_geodesic_error(&lr, &pr)?,
            n_samples: labels.len(),
            n_trials: 1,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.method,
            self.window_s,
            self.rmse_deg,
            self.rmse_std_deg,
            self.aoe_deg,
            self.max_err_deg,
            self.n_samples,
            self.n_trials
        )
    }

    pub fn write_csv<W: Write>(reports: &[EvalReport], mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        for r in reports {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{euler_to_matrix, rot_z, so3_exp, Vec3};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn deg(r: f64, p: f64, y: f64) -> EulerAngles {
        EulerAngles::from_degrees(r, p, y)
    }

    #[test]
    fn rmse_examples() {
        let labels = [deg(1.0, 2.0, 3.0)];
        assert_eq!(rmse(&labels, &labels).unwrap(), 0.0);
        let r = rmse(&[deg(0.0, 0.0, 0.0)], &[deg(1.0, 1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(r, 3f64.sqrt(), epsilon = 1e-12);
        let r = rmse(
            &[deg(0.0, 0.0, 0.0), deg(0.0, 0.0, 0.0)],
            &[deg(1.0, 0.0, 0.0), deg(0.0, 1.0, 0.0)],
        )
        .unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rmse_wraps_angles() {
        let r = rmse(&[deg(0.0, 0.0, 179.0)], &[deg(0.0, 0.0, -179.0)]).unwrap();
        assert_abs_diff_eq!(r, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(rmse(&[deg(0.0, 0.0, 0.0)], &[]), Err(Error::LengthMismatch(1, 0))));
        let r = RotationMatrix::identity();
        assert!(aoe(&[r, r], &[r]).is_err());
        assert!(max_geodesic_error(&[], &[]).is_err());
    }

    #[test]
    fn aoe_examples() {
        let r = euler_to_matrix(deg(1.0, 3.0, 2.0));
        assert_eq!(aoe(&[r], &[r]).unwrap(), 0.0);
        let off = r * RotationMatrix::from_matrix_unchecked(rot_z(2f64.to_radians()));
        assert_abs_diff_eq!(aoe(&[r], &[off]).unwrap(), 2.0, epsilon = 1e-10);

        let axis = Vec3::new(1.0, 2.0, -1.0).normalize();
        let e3 = so3_exp(&(axis * 3f64.to_radians()));
        let e4 = so3_exp(&(axis * 4f64.to_radians()));
        let id = RotationMatrix::identity();
        let a = aoe(&[id, id], &[e3, e4]).unwrap();
        assert_abs_diff_eq!(a, (12.5f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn max_error_examples() {
        let id = RotationMatrix::identity();
        assert_eq!(max_geodesic_error(&[id], &[id]).unwrap(), 0.0);
        let far = so3_exp(&(Vec3::new(0.0, 1.0, 0.0) * 179f64.to_radians()));
        let m = max_geodesic_error(&[id, id], &[id, far]).unwrap();
        assert_abs_diff_eq!(m, 179.0, epsilon = 1e-9);
    }

    #[test]
    fn report_csv() {
        let rep = EvalReport::from_predictions("svd", 25.0, &[deg(0.0, 0.0, 0.0)], &[deg(1.0, 1.0, 1.0)]).unwrap();
        assert!(rep.csv_row().starts_with("svd,25,1.732051,"));
        let json = serde_json::to_string(&rep).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    fn small_errors() -> impl Strategy<Value = Vec<(EulerAngles, [f64; 3])>> {
        prop::collection::vec(
            ((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), (-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5)),
            20..60,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|((r, p, y), (a, b, c))| (deg(r, p, y), [a, b, c]))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn metric_invariants(samples in small_errors(), q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
            let labels: Vec<_> = samples.iter().map(|(l, _)| *l).collect();
            let preds: Vec<_> = samples
                .iter()
                .map(|(l, e)| {
                    let d = l.to_degrees();
                    deg(d[0] + e[0], d[1] + e[1], d[2] + e[2])
                })
                .collect();
            let lr: Vec<_> = labels.iter().map(|e| euler_to_matrix(*e)).collect();
            let pr: Vec<_> = preds.iter().map(|e| euler_to_matrix(*e)).collect();
            let r = rmse(&labels, &preds).unwrap();
            let a = aoe(&lr, &pr).unwrap();
            let m = max_geodesic_error(&lr, &pr).unwrap();
            prop_assert!(r >= 0.0 && a >= 0.0);
            prop_assert!(m + 1e-12 >= a);
            prop_assert!((r - a).abs() / r < 0.05, "rmse {} aoe {}", r, a);

            let mut rev_l = labels.clone();
            let mut rev_p = preds.clone();
            rev_l.reverse();
            rev_p.reverse();
            prop_assert!((rmse(&rev_l, &rev_p).unwrap() - r).abs() < 1e-12);

            let qr = so3_exp(&Vec3::new(q.0, q.1, q.2));
            let ql: Vec<_> = lr.iter().map(|x| qr * x).collect();
            let qp: Vec<_> = pr.iter().map(|x| qr * x).collect();
            prop_assert!((aoe(&ql, &qp).unwrap() - a).abs() < 1e-9);
        }
    }
}
