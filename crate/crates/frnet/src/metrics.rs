//! Gaze angle/vector conversions and the angular-error metric.

use crate::error::{Error, Result};

/// Gaze direction as rotation angles, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeAngles {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeAngles {
    pub fn new(pitch: f64, yaw: f64) -> GazeAngles {
        GazeAngles { pitch, yaw }
    }

    fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        if !(-half_pi..=half_pi).contains(&self.pitch) || !self.pitch.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pitch {} outside [-pi/2, pi/2]",
                self.pitch
            )));
        }
        if self.yaw <= -pi || self.yaw > pi || !self.yaw.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "yaw {} outside (-pi, pi]",
                self.yaw
            )));
        }
        Ok(())
    }
}

/// Unnormalized 3D gaze direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    pub g: [f64; 3],
}

impl GazeVector {
    pub fn norm(&self) -> f64 {
        self.g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Convention: camera looks along +z; zero gaze points into the camera at
/// (0, 0, -1); positive yaw turns toward -x, positive pitch toward -y.
pub fn angles_to_vector(a: GazeAngles) -> Result<GazeVector> {
    a.validate()?;
    Ok(angles_to_vector_unchecked(a))
}

/// Same conversion without the range check; used on raw model outputs,
/// which are unconstrained during training.
pub fn angles_to_vector_unchecked(a: GazeAngles) -> GazeVector {
    GazeVector {
        g: [
            -a.pitch.cos() * a.yaw.sin(),
            -a.pitch.sin(),
            -a.pitch.cos() * a.yaw.cos(),
        ],
    }
}

/// Angle between two gaze directions, degrees. Symmetric, scale invariant.
pub fn angular_error(g: GazeVector, g_hat: GazeVector) -> Result<f64> {
    let n1 = g.norm();
    let n2 = g_hat.norm();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidArgument(
            "angular_error requires nonzero vectors".into(),
        ));
    }
    let dot = g.g[0] * g_hat.g[0] + g.g[1] * g_hat.g[1] + g.g[2] * g_hat.g[2];
    let cos = (dot / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Mean pairwise angular error over predicted/true angle lists, degrees.
/// Predictions are raw regression outputs and are not range-checked.
pub fn mean_angular_error(pred: &[GazeAngles], truth: &[GazeAngles]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal nonempty lists, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        total += angular_error(
            angles_to_vector_unchecked(*t),
            angles_to_vector_unchecked(*p),
        )?;
    }
    Ok(total / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convention_anchors() {
        let fwd = angles_to_vector(GazeAngles::new(0.0, 0.0)).unwrap();
        assert!((fwd.g[0]).abs() < 1e-12 && (fwd.g[1]).abs() < 1e-12);
        assert!((fwd.g[2] + 1.0).abs() < 1e-12);

        let up = angles_to_vector(GazeAngles::new(std::f64::consts::FRAC_PI_2, 0.0)).unwrap();
        assert!((up.g[1] + 1.0).abs() < 1e-12);
        assert!(up.g[0].abs() < 1e-12);
    }

    #[test]
    fn unit_norm_for_random_angles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = GazeAngles::new(rng.gen_range(-1.5..1.5), rng.gen_range(-3.1..3.1));
            let v = angles_to_vector(a).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_angles_rejected() {
        assert!(angles_to_vector(GazeAngles::new(2.0, 0.0)).is_err());
        assert!(angles_to_vector(GazeAngles::new(0.0, 4.0)).is_err());
    }

    #[test]
    fn angular_error_anchors() {
        let a = GazeVector { g: [0.0, 0.0, -1.0] };
        assert_eq!(angular_error(a, a).unwrap(), 0.0);

        let b = GazeVector { g: [1.0, 0.0, 0.0] };
        assert!((angular_error(a, b).unwrap() - 90.0).abs() < 1e-10);

        let c = GazeVector { g: [0.0, 0.0, 1.0] };
        assert!((angular_error(a, c).unwrap() - 180.0).abs() < 1e-10);

        let small = angles_to_vector(GazeAngles::new(0.0, 0.1)).unwrap();
        assert!((angular_error(a, small).unwrap() - 0.1f64.to_degrees()).abs() < 1e-6);

        assert!(angular_error(a, GazeVector { g: [0.0; 3] }).is_err());
    }

    #[test]
    fn mean_angular_error_cases() {
        let t = vec![GazeAngles::new(0.1, 0.2), GazeAngles::new(-0.3, 0.0)];
        assert!(mean_angular_error(&t, &t).unwrap() < 1e-10);

        // two pairs at 10 and 20 degrees average to 15
        let truth = vec![GazeAngles::new(0.0, 0.0), GazeAngles::new(0.0, 0.0)];
        let pred = vec![
            GazeAngles::new(0.0, 10f64.to_radians()),
            GazeAngles::new(0.0, 20f64.to_radians()),
        ];
        let m = mean_angular_error(&pred, &truth).unwrap();
        assert!((m - 15.0).abs() < 1e-9);

        assert!(mean_angular_error(&[], &[]).is_err());
        assert!(mean_angular_error(&pred, &truth[..1]).is_err());
    }
}
