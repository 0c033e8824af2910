//! Comparators for the GP pipeline: the classical zero-order-hold
//! discrete-time preintegrator (with the standard bias-Jacobian and noise
//! propagation recursions) and a fine-step RK4 ground-truth integrator over
//! analytic signals.

use nalgebra::{Matrix3, Vector3};

use crate::error::GpoError;
use crate::gp::Matrix9;
use crate::imu::{window_slice, AccelSample, BiasState, GyroSample, ImuNoise, ProcJacobians};
use crate::sim::MotionPattern;
use crate::so3::{right_jacobian, right_jacobian_inv, skew, Rotation};

/// Relative-motion triple accumulated from the window start, plus the bias
/// Jacobians and the propagated measurement-noise covariance (error order:
/// rotation, velocity, position).
#[derive(Clone, Copy, Debug)]
pub struct PreintDelta {
    pub t: f64,
    pub delta_c: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_r: Vector3<f64>,
    pub jac: ProcJacobians,
    pub cov: Matrix9,
}

impl PreintDelta {
    fn at_rest(t: f64) -> Self {
        PreintDelta {
            t,
            delta_c: Rotation::identity(),
            delta_v: Vector3::zeros(),
            delta_r: Vector3::zeros(),
            jac: ProcJacobians::zeros(),
            cov: Matrix9::zeros(),
        }
    }
}

/// Zero-order-hold stepping engine. Measurements are held constant over each
/// step; the held value is the latest sample at or before the step start
/// (the first sample extends backward to the window start).
pub(crate) struct DiscreteIntegrator {
    state: PreintDelta,
    bias: BiasState,
    q_g: Matrix3<f64>,
    q_a: Matrix3<f64>,
}

impl DiscreteIntegrator {
    pub fn new(t0: f64, bias: BiasState, noise: &ImuNoise) -> Self {
        DiscreteIntegrator {
            state: PreintDelta::at_rest(t0),
            bias,
            q_g: *noise.q_gyro(),
            q_a: *noise.q_accel(),
        }
    }

    pub fn state(&self) -> &PreintDelta {
        &self.state
    }

    pub fn step(&mut self, omega_raw: &Vector3<f64>, accel_raw: &Vector3<f64>, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let w = omega_raw - self.bias.gyro;
        let a = accel_raw - self.bias.accel;
        let c = self.state.delta_c;
        let cm = c.matrix();
        let increment = w * dt;
        let dr = Rotation::exp(&increment);
        let jr_dt = right_jacobian(&increment) * dt;
        let a_skew = skew(&a);

        // Bias Jacobian recursion (right-perturbation convention).
        let j = &mut self.state.jac;
        let dc_prev = j.dc_dbg;
        j.dc_dbg = dr.matrix().transpose() * dc_prev - jr_dt;
        j.dr_dbg += j.dv_dbg * dt - 0.5 * cm * a_skew * dc_prev * dt * dt;
        j.dr_dba += j.dv_dba * dt - 0.5 * cm * dt * dt;
        j.dv_dbg -= cm * a_skew * dc_prev * dt;
        j.dv_dba -= cm * dt;

        // Noise propagation for the (rotation, velocity, position) error.
        let mut f = Matrix9::identity();
        f.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&dr.matrix().transpose());
        f.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-cm * a_skew * dt));
        f.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(-0.5 * cm * a_skew * dt * dt));
        f.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Matrix3::identity() * dt));
        let mut q = Matrix9::zeros();
        q.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(jr_dt * self.q_g * jr_dt.transpose()));
        let ca = cm * self.q_a * cm.transpose();
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(ca * dt * dt));
        q.fixed_view_mut::<3, 3>(6, 6)
            .copy_from(&(ca * dt * dt * dt * dt / 4.0));
        q.fixed_view_mut::<3, 3>(3, 6)
            .copy_from(&(ca * dt * dt * dt / 2.0));
        q.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(ca * dt * dt * dt / 2.0));
        self.state.cov = f * self.state.cov * f.transpose() + q;

        // Mean update.
        let world_a = c.rotate(&a);
        self.state.delta_r += self.state.delta_v * dt + 0.5 * world_a * dt * dt;
        self.state.delta_v += world_a * dt;
        self.state.delta_c = c * dr;
        self.state.t += dt;
    }
}

/// Runs the zero-order-hold integrator over the union of both sample
/// timelines and the requested snapshot times, returning the state at each
/// snapshot time (which must be sorted and inside the window).
pub(crate) fn discrete_with_snapshots(
    gyro: &[GyroSample],
    accel: &[AccelSample],
    window: (f64, f64),
    bias: BiasState,
    noise: &ImuNoise,
    snapshot_times: &[f64],
) -> Result<Vec<PreintDelta>, GpoError> {
    let (start, end) = window;
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Err(GpoError::InvalidWindow(start, end));
    }
    let gyro = window_slice(gyro, |s| s.t, start, end, "gyro")?;
    let accel = window_slice(accel, |s| s.t, start, end, "accel")?;
    if gyro.is_empty() {
        return Err(GpoError::EmptyStream("gyro"));
    }
    if accel.is_empty() {
        return Err(GpoError::EmptyStream("accel"));
    }

    let mut breakpoints: Vec<f64> = gyro
        .iter()
        .map(|s| s.t)
        .chain(accel.iter().map(|s| s.t))
        .chain(snapshot_times.iter().copied())
        .chain([start, end])
        .collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();

    let mut integ = DiscreteIntegrator::new(start, bias, noise);
    let mut gi = 0usize;
    let mut ai = 0usize;
    let mut held_w = gyro[0].w;
    let mut held_a = accel[0].a;
    let mut out = Vec::with_capacity(snapshot_times.len());
    let mut si = 0usize;

    let mut t_prev = start;
    // Snapshot at the window start if requested.
    while si < snapshot_times.len() && snapshot_times[si] <= start {
        out.push(*integ.state());
        si += 1;
    }
    for &t in breakpoints.iter().skip_while(|&&t| t <= start) {
        while gi < gyro.len() && gyro[gi].t <= t_prev {
            held_w = gyro[gi].w;
            gi += 1;
        }
        while ai < accel.len() && accel[ai].t <= t_prev {
            held_a = accel[ai].a;
            ai += 1;
        }
        integ.step(&held_w, &held_a, t - t_prev);
        t_prev = t;
        while si < snapshot_times.len() && snapshot_times[si] <= t {
            out.push(*integ.state());
            si += 1;
        }
    }
    Ok(out)
}

/// Classical discrete-time preintegration over one window: endpoint
/// pseudo-measurements plus bias Jacobians (and propagated covariance).
pub fn discrete_preintegrate(
    gyro: &[GyroSample],
    accel: &[AccelSample],
    window: (f64, f64),
    bias: BiasState,
    noise: &ImuNoise,
) -> Result<PreintDelta, GpoError> {
    let snaps = discrete_with_snapshots(gyro, accel, window, bias, noise, &[window.1])?;
    Ok(snaps[0])
}

/// Fixed-step RK4 ground-truth configuration.
#[derive(Clone, Copy, Debug)]
pub struct OracleConfig {
    pub step: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { step: 1e-4 }
    }
}

/// Ground-truth kinematic state at one query time.
#[derive(Clone, Copy, Debug)]
pub struct OracleState {
    pub t: f64,
    pub delta_c: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_r: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

// One RK4 step of the preintegration kinematics over [t, t+h]. The rotation
// advances through a local axis-angle increment (a Munthe-Kaas step), so the
// state never leaves the manifold.
fn rk4_step(
    c: &Rotation,
    v: &Vector3<f64>,
    r: &Vector3<f64>,
    t: f64,
    h: f64,
    pattern: &MotionPattern,
) -> (Rotation, Vector3<f64>, Vector3<f64>) {
    let cm = c.matrix();
    let deriv = |theta: &Vector3<f64>, v: &Vector3<f64>, tau: f64| {
        let dtheta = right_jacobian_inv(theta) * pattern.omega(tau);
        let dv = cm * Rotation::exp(theta).matrix() * pattern.body_accel(tau);
        let dr = *v;
        (dtheta, dv, dr)
    };
    let z = Vector3::zeros();
    let (k1t, k1v, k1r) = deriv(&z, v, t);
    let (k2t, k2v, k2r) = deriv(&(k1t * (h / 2.0)), &(v + k1v * (h / 2.0)), t + h / 2.0);
    let (k3t, k3v, k3r) = deriv(&(k2t * (h / 2.0)), &(v + k2v * (h / 2.0)), t + h / 2.0);
    let (k4t, k4v, k4r) = deriv(&(k3t * h), &(v + k3v * h), t + h);
    let theta = (k1t + 2.0 * k2t + 2.0 * k3t + k4t) * (h / 6.0);
    (
        *c * Rotation::exp(&theta),
        v + (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * (h / 6.0),
        r + (k1r + 2.0 * k2r + 2.0 * k3r + k4r) * (h / 6.0),
    )
}

fn integrate_to_times(
    pattern: &MotionPattern,
    window: (f64, f64),
    times: &[f64],
    step: f64,
) -> Vec<OracleState> {
    let (start, _) = window;
    let mut c = Rotation::identity();
    let mut v = Vector3::zeros();
    let mut r = Vector3::zeros();
    let mut t = start;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let h = step.min(target - t);
            let (cn, vn, rn) = rk4_step(&c, &v, &r, t, h, pattern);
            c = cn;
            v = vn;
            r = rn;
            t += h;
        }
        out.push(OracleState {
            t: target,
            delta_c: c,
            delta_v: v,
            delta_r: r,
            omega: pattern.omega(target),
            accel: c.rotate(&pattern.body_accel(target)),
        });
    }
    out
}

/// Integrates the analytic pattern to each query time with fixed-step RK4
/// and verifies itself by step halving: if halving the step moves the final
/// state by more than 1e-10 the signals are too rough for the step and an
/// error is returned.
pub fn oracle_integrate(
    pattern: &MotionPattern,
    window: (f64, f64),
    times: &[f64],
    cfg: &OracleConfig,
) -> Result<Vec<OracleState>, GpoError> {
    let (start, end) = window;
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Err(GpoError::InvalidWindow(start, end));
    }
    if cfg.step <= 0.0 {
        return Err(GpoError::InvalidSpec("oracle step must be positive".into()));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(GpoError::InvalidSpec("query times must be sorted".into()));
    }
    if times.iter().any(|&t| t < start || t > end) {
        return Err(GpoError::OutsideInterval {
            tau: *times
                .iter()
                .find(|&&t| t < start || t > end)
                .unwrap(),
            start,
            end,
        });
    }

    let coarse_end = integrate_to_times(pattern, window, &[end], cfg.step)[0];
    let fine_end = integrate_to_times(pattern, window, &[end], cfg.step / 2.0)[0];
    let drift = coarse_end.delta_c.angle_to(&fine_end.delta_c)
        + (coarse_end.delta_v - fine_end.delta_v).norm()
        + (coarse_end.delta_r - fine_end.delta_r).norm();
    if drift > 1e-10 {
        return Err(GpoError::OracleSelfCheck(drift));
    }

    Ok(integrate_to_times(pattern, window, times, cfg.step))
}
