//! Shared IMU sample types, bias state, sensor-noise model, and the
//! accumulated bias-Jacobian block set.

use nalgebra::{Matrix3, Vector3};

use crate::error::GpoError;

/// One gyroscope sample: body angular rate in rad/s at time `t` (seconds).
#[derive(Clone, Copy, Debug)]
pub struct GyroSample {
    pub t: f64,
    pub w: Vector3<f64>,
}

/// One accelerometer sample: body specific force in m/s^2 at time `t`.
#[derive(Clone, Copy, Debug)]
pub struct AccelSample {
    pub t: f64,
    pub a: Vector3<f64>,
}

/// Gyroscope and accelerometer biases, held constant over one
/// preintegration window.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BiasState {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl BiasState {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        BiasState { gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

/// Measurement-noise covariances of the two sensors.
#[derive(Clone, Copy, Debug)]
pub struct ImuNoise {
    q_g: Matrix3<f64>,
    q_a: Matrix3<f64>,
}

impl ImuNoise {
    pub fn new(q_g: Matrix3<f64>, q_a: Matrix3<f64>) -> Result<Self, GpoError> {
        for m in [&q_g, &q_a] {
            if !m.iter().all(|x| x.is_finite())
                || (m - m.transpose()).abs().max() > 1e-12
                || nalgebra::Cholesky::new(*m).is_none()
            {
                return Err(GpoError::InvalidSpec(
                    "sensor noise covariance must be symmetric positive definite".into(),
                ));
            }
        }
        Ok(ImuNoise { q_g, q_a })
    }

    /// Isotropic noise from per-axis standard deviations.
    pub fn isotropic(gyro_std: f64, accel_std: f64) -> Result<Self, GpoError> {
        Self::new(
            Matrix3::identity() * gyro_std * gyro_std,
            Matrix3::identity() * accel_std * accel_std,
        )
    }

    pub fn q_gyro(&self) -> &Matrix3<f64> {
        &self.q_g
    }

    pub fn q_accel(&self) -> &Matrix3<f64> {
        &self.q_a
    }

    pub fn q_gyro_inv(&self) -> Matrix3<f64> {
        self.q_g.try_inverse().expect("validated positive definite")
    }

    pub fn q_accel_inv(&self) -> Matrix3<f64> {
        self.q_a.try_inverse().expect("validated positive definite")
    }
}

/// The five accumulated bias-sensitivity blocks of the preintegrated
/// quantities. `dc_dbg` uses the right-perturbation convention:
/// `dC(b + db) ~= dC(b) * exp((dc_dbg * db_g)^)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcJacobians {
    pub dc_dbg: Matrix3<f64>,
    pub dv_dbg: Matrix3<f64>,
    pub dv_dba: Matrix3<f64>,
    pub dr_dbg: Matrix3<f64>,
    pub dr_dba: Matrix3<f64>,
}

impl ProcJacobians {
    pub fn zeros() -> Self {
        ProcJacobians {
            dc_dbg: Matrix3::zeros(),
            dv_dbg: Matrix3::zeros(),
            dv_dba: Matrix3::zeros(),
            dr_dbg: Matrix3::zeros(),
            dr_dba: Matrix3::zeros(),
        }
    }
}

/// Checks that a stream is finite and strictly increasing in time, returning
/// the slice of samples inside `[start, end]`.
pub(crate) fn window_slice<'a, T, F>(
    samples: &'a [T],
    time_of: F,
    start: f64,
    end: f64,
    label: &'static str,
) -> Result<&'a [T], GpoError>
where
    F: Fn(&T) -> f64,
{
    let mut prev = f64::NEG_INFINITY;
    for s in samples {
        let t = time_of(s);
        if !t.is_finite() || t <= prev {
            return Err(GpoError::UnsortedStream(label));
        }
        prev = t;
    }
    let lo = samples.partition_point(|s| time_of(s) < start);
    let hi = samples.partition_point(|s| time_of(s) <= end);
    Ok(&samples[lo..hi])
}
