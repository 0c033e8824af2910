//! Two-step pre-optimization of one preintegration window: Gauss-Newton over
//! the rotation knots `{C_k, w_k}`, then a single linear solve over the
//! translation knots `{r_k, v_k, a_k}`, plus the per-knot accumulation of the
//! discrete bias Jacobians. The result is an immutable [`PreintTrajectory`]
//! that the query layer interpolates in constant time.

use nalgebra::{Matrix3, Matrix6, SVector, Vector3, Vector6};

use crate::baseline::discrete_with_snapshots;
use crate::block_tridiag::BlockTridiag;
use crate::error::GpoError;
use crate::gp::{wnoa, wnoj, GpHyper, Matrix9};
use crate::imu::{window_slice, AccelSample, BiasState, GyroSample, ImuNoise, ProcJacobians};
use crate::so3::{
    d_jr_inv_times, d_jr_times, left_jacobian_inv, right_jacobian, right_jacobian_inv, Rotation,
};

pub type Vector9 = SVector<f64, 9>;

/// How the knot count is chosen for a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnotPolicy {
    /// `ceil(span * 20)` knot intervals, clamped to `[2, 64]`.
    Auto,
    Fixed(usize),
}

impl KnotPolicy {
    pub fn intervals(&self, span: f64) -> usize {
        match self {
            KnotPolicy::Auto => ((span * 20.0).ceil() as usize).clamp(2, 64),
            KnotPolicy::Fixed(k) => (*k).max(1),
        }
    }
}

/// Where the stored per-knot covariances come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CovarianceSource {
    /// Marginals of the pre-optimization information matrix at convergence.
    #[default]
    InformationMatrix,
    /// Classical discrete-time noise propagation along the raw samples.
    DiscretePropagation,
}

#[derive(Clone, Copy, Debug)]
pub struct GnSettings {
    pub max_iterations: usize,
    /// Convergence threshold on the largest applied update component.
    pub tolerance: f64,
}

impl Default for GnSettings {
    fn default() -> Self {
        GnSettings {
            max_iterations: 50,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PreintConfig {
    pub knots: KnotPolicy,
    pub gn: GnSettings,
    pub cov_source: CovarianceSource,
}

impl Default for KnotPolicy {
    fn default() -> Self {
        KnotPolicy::Auto
    }
}

/// Rotation knot: absolute orientation increment from the window start and
/// the bias-corrected body rate at the knot time.
#[derive(Clone, Copy, Debug)]
pub struct RotKnot {
    pub c: Rotation,
    pub w: Vector3<f64>,
}

/// Translation knot: accumulated position, velocity, and the rotated
/// bias-corrected acceleration at the knot time.
#[derive(Clone, Copy, Debug)]
pub struct TransKnot {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl TransKnot {
    pub fn as_vector(&self) -> Vector9 {
        let mut x = Vector9::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.r);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<3>(6).copy_from(&self.a);
        x
    }
}

/// Uniform knot grid over a window.
#[derive(Clone, Debug)]
pub struct KnotGrid {
    t0: f64,
    t1: f64,
    h: f64,
    times: Vec<f64>,
}

impl KnotGrid {
    pub fn new(t0: f64, t1: f64, intervals: usize) -> Result<Self, GpoError> {
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(GpoError::InvalidWindow(t0, t1));
        }
        if intervals == 0 {
            return Err(GpoError::InvalidSpec("need at least one knot interval".into()));
        }
        let h = (t1 - t0) / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|k| t0 + k as f64 * h).collect();
        // Pin the last knot to the window end exactly.
        *times.last_mut().unwrap() = t1;
        Ok(KnotGrid { t0, t1, h, times })
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t1
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Interval index and local offset for `tau`, by direct arithmetic on the
    /// uniform spacing; `tau` at the window end maps into the last interval.
    pub fn locate(&self, tau: f64) -> Result<(usize, f64), GpoError> {
        if !(tau >= self.t0 && tau <= self.t1) {
            return Err(GpoError::OutsideInterval {
                tau,
                start: self.t0,
                end: self.t1,
            });
        }
        let raw = ((tau - self.t0) / self.h).floor() as isize;
        let k = raw.clamp(0, self.intervals() as isize - 1) as usize;
        // Guard against rounding placing tau just outside the chosen cell.
        let k = if tau < self.times[k] {
            k - 1
        } else if k + 1 < self.intervals() && tau >= self.times[k + 1] {
            k + 1
        } else {
            k
        };
        Ok((k, tau - self.times[k]))
    }

    /// Index of the knot whose stored time equals `tau` bit-for-bit.
    pub fn exact_knot(&self, tau: f64) -> Option<usize> {
        let (k, _) = self.locate(tau).ok()?;
        if self.times[k] == tau {
            Some(k)
        } else if self.times[k + 1] == tau {
            Some(k + 1)
        } else {
            None
        }
    }
}

/// Convergence record of the rotation Gauss-Newton solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Objective value per accepted iterate, starting at the seed.
    pub objective_trace: Vec<f64>,
    pub final_update: f64,
}

// Per-interval linearization quantities of the rotation trajectory shared by
// the solver, the translation step, and the query layer.
#[derive(Clone, Debug)]
pub(crate) struct RotInterval {
    pub phi_e: Vector3<f64>,
    /// d phi_e / d(right perturbation of the right knot) = Jr(phi_e)^-1
    pub b_e: Matrix3<f64>,
    /// d phi_e / d(right perturbation of the left knot) = -Jl(phi_e)^-1
    pub a_e: Matrix3<f64>,
    /// Local rate at the interval end, Jr(phi_e)^-1 w_{k+1}.
    pub rate_end: Vector3<f64>,
    /// d(rate_end)/d phi_e.
    pub d_e: Matrix3<f64>,
}

pub(crate) fn rot_intervals(knots: &[RotKnot]) -> Vec<RotInterval> {
    knots
        .windows(2)
        .map(|pair| {
            let phi_e = pair[0].c.between(&pair[1].c).log();
            let b_e = right_jacobian_inv(&phi_e);
            RotInterval {
                phi_e,
                b_e,
                a_e: -left_jacobian_inv(&phi_e),
                rate_end: b_e * pair[1].w,
                d_e: d_jr_inv_times(&phi_e, &pair[1].w),
            }
        })
        .collect()
}

// Interpolated local rotation state inside interval k: the lifted angle and
// its rate, from the six interpolation blocks that act on nonzero boundary
// components.
pub(crate) struct LocalRot {
    pub phi: Vector3<f64>,
    pub dphi: Vector3<f64>,
}

pub(crate) struct InterpBlocks {
    pub l12: Matrix3<f64>,
    pub l22: Matrix3<f64>,
    pub p11: Matrix3<f64>,
    pub p12: Matrix3<f64>,
    pub p21: Matrix3<f64>,
    pub p22: Matrix3<f64>,
}

impl InterpBlocks {
    pub fn from_coeffs(lambda: &Matrix6<f64>, psi: &Matrix6<f64>) -> Self {
        InterpBlocks {
            l12: lambda.fixed_view::<3, 3>(0, 3).into_owned(),
            l22: lambda.fixed_view::<3, 3>(3, 3).into_owned(),
            p11: psi.fixed_view::<3, 3>(0, 0).into_owned(),
            p12: psi.fixed_view::<3, 3>(0, 3).into_owned(),
            p21: psi.fixed_view::<3, 3>(3, 0).into_owned(),
            p22: psi.fixed_view::<3, 3>(3, 3).into_owned(),
        }
    }

    pub fn local_rot(&self, w_left: &Vector3<f64>, iv: &RotInterval) -> LocalRot {
        LocalRot {
            phi: self.l12 * w_left + self.p11 * iv.phi_e + self.p12 * iv.rate_end,
            dphi: self.l22 * w_left + self.p21 * iv.phi_e + self.p22 * iv.rate_end,
        }
    }
}

// One gyro measurement prepared for the solver: interval index, value, and
// the time-dependent interpolation blocks (constant across iterations).
struct GyroFactor {
    k: usize,
    value: Vector3<f64>,
    blocks: InterpBlocks,
}

struct RotProblem {
    factors: Vec<GyroFactor>,
    w_meas: Matrix3<f64>,
    w_prior: Matrix6<f64>,
    h: f64,
}

impl RotProblem {
    fn new(
        gyro: &[GyroSample],
        grid: &KnotGrid,
        bias: &BiasState,
        hyper: &GpHyper,
        noise: &ImuNoise,
    ) -> Result<Self, GpoError> {
        let bridge = wnoa::Bridge::new(grid.spacing(), hyper.q_c())?;
        let factors = gyro
            .iter()
            .map(|s| {
                let (k, offset) = grid.locate(s.t)?;
                let (lambda, psi) = bridge.coeffs(offset);
                Ok(GyroFactor {
                    k,
                    value: s.w - bias.gyro,
                    blocks: InterpBlocks::from_coeffs(&lambda, &psi),
                })
            })
            .collect::<Result<Vec<_>, GpoError>>()?;
        Ok(RotProblem {
            factors,
            w_meas: noise.q_gyro_inv(),
            w_prior: *bridge.q_end_inv(),
            h: grid.spacing(),
        })
    }

    fn objective(&self, knots: &[RotKnot], intervals: &[RotInterval]) -> f64 {
        let mut obj = 0.0;
        for f in &self.factors {
            let iv = &intervals[f.k];
            let local = f.blocks.local_rot(&knots[f.k].w, iv);
            let e = f.value - right_jacobian(&local.phi) * local.dphi;
            obj += (e.transpose() * self.w_meas * e)[0];
        }
        for (k, iv) in intervals.iter().enumerate() {
            let e = self.prior_residual(knots, k, iv);
            obj += (e.transpose() * self.w_prior * e)[0];
        }
        obj
    }

    fn prior_residual(&self, knots: &[RotKnot], k: usize, iv: &RotInterval) -> Vector6<f64> {
        let mut e = Vector6::zeros();
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(self.h * knots[k].w - iv.phi_e));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&(knots[k].w - iv.rate_end));
        e
    }

    fn assemble(
        &self,
        knots: &[RotKnot],
        intervals: &[RotInterval],
    ) -> BlockTridiag<6> {
        let n = knots.len();
        let mut sys = BlockTridiag::<6>::zeros(n);

        let mut add = |k: usize,
                       sys: &mut BlockTridiag<6>,
                       j_left: &Matrix6<f64>,
                       j_right: &Matrix6<f64>,
                       wjl: &Matrix6<f64>,
                       wjr: &Matrix6<f64>,
                       we: &Vector6<f64>| {
            sys.diag[k] += j_left.transpose() * wjl;
            sys.diag[k + 1] += j_right.transpose() * wjr;
            sys.sub[k] += j_right.transpose() * wjl;
            sys.rhs[k] -= j_left.transpose() * we;
            sys.rhs[k + 1] -= j_right.transpose() * we;
        };

        for f in &self.factors {
            let iv = &intervals[f.k];
            let local = f.blocks.local_rot(&knots[f.k].w, iv);
            let j_tau = right_jacobian(&local.phi);
            let e3 = f.value - j_tau * local.dphi;
            let e_tau = d_jr_times(&local.phi, &local.dphi);

            let p1d = f.blocks.p11 + f.blocks.p12 * iv.d_e;
            let p2d = f.blocks.p21 + f.blocks.p22 * iv.d_e;
            // d e / d (dphi_k, dw_k, dphi_k1, dw_k1)
            let de_dphi_k = -(e_tau * (p1d * iv.a_e) + j_tau * (p2d * iv.a_e));
            let de_dw_k = -(e_tau * f.blocks.l12 + j_tau * f.blocks.l22);
            let de_dphi_k1 = -(e_tau * (p1d * iv.b_e) + j_tau * (p2d * iv.b_e));
            let de_dw_k1 = -(e_tau * (f.blocks.p12 * iv.b_e) + j_tau * (f.blocks.p22 * iv.b_e));

            let mut j_left = Matrix6::zeros();
            j_left.fixed_view_mut::<3, 3>(0, 0).copy_from(&de_dphi_k);
            j_left.fixed_view_mut::<3, 3>(0, 3).copy_from(&de_dw_k);
            let mut j_right = Matrix6::zeros();
            j_right.fixed_view_mut::<3, 3>(0, 0).copy_from(&de_dphi_k1);
            j_right.fixed_view_mut::<3, 3>(0, 3).copy_from(&de_dw_k1);

            // Only the first three rows of the 6-wide carriers are used for
            // this 3-dim residual; weight them directly.
            let mut wj_left = Matrix6::zeros();
            wj_left
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(self.w_meas * de_dphi_k));
            wj_left
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(self.w_meas * de_dw_k));
            let mut wj_right = Matrix6::zeros();
            wj_right
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(self.w_meas * de_dphi_k1));
            wj_right
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(self.w_meas * de_dw_k1));
            let mut we = Vector6::zeros();
            we.fixed_rows_mut::<3>(0).copy_from(&(self.w_meas * e3));

            add(f.k, &mut sys, &j_left, &j_right, &wj_left, &wj_right, &we);
        }

        for (k, iv) in intervals.iter().enumerate() {
            let e = self.prior_residual(knots, k, iv);
            let de2_dphi_e = -iv.d_e;

            let mut j_left = Matrix6::zeros();
            j_left
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(-iv.a_e));
            j_left
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(Matrix3::identity() * self.h));
            j_left
                .fixed_view_mut::<3, 3>(3, 0)
                .copy_from(&(de2_dphi_e * iv.a_e));
            j_left
                .fixed_view_mut::<3, 3>(3, 3)
                .copy_from(&Matrix3::identity());

            let mut j_right = Matrix6::zeros();
            j_right
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(-iv.b_e));
            j_right
                .fixed_view_mut::<3, 3>(3, 0)
                .copy_from(&(de2_dphi_e * iv.b_e));
            j_right
                .fixed_view_mut::<3, 3>(3, 3)
                .copy_from(&(-iv.b_e));

            let wjl = self.w_prior * j_left;
            let wjr = self.w_prior * j_right;
            let we = self.w_prior * e;
            add(k, &mut sys, &j_left, &j_right, &wjl, &wjr, &we);
        }

        sys
    }
}

fn retract(knots: &[RotKnot], delta: &[Vector6<f64>], alpha: f64) -> Vec<RotKnot> {
    knots
        .iter()
        .zip(delta)
        .map(|(knot, d)| {
            let dphi = d.fixed_rows::<3>(0).into_owned() * alpha;
            let dw = d.fixed_rows::<3>(3).into_owned() * alpha;
            RotKnot {
                c: knot.c * Rotation::exp(&dphi),
                w: knot.w + dw,
            }
        })
        .collect()
}

/// Seeds the knot states by zero-order-hold discrete integration of the
/// bias-corrected measurements, with rates and accelerations taken from the
/// nearest raw sample.
pub fn init_knots(
    gyro: &[GyroSample],
    accel: &[AccelSample],
    window: (f64, f64),
    intervals: usize,
    bias: BiasState,
) -> Result<(Vec<RotKnot>, Vec<TransKnot>), GpoError> {
    let grid = KnotGrid::new(window.0, window.1, intervals)?;
    let noise = ImuNoise::isotropic(1.0, 1.0).expect("unit noise is valid");
    let snaps = discrete_with_snapshots(gyro, accel, window, bias, &noise, grid.times())?;
    let gyro_w = window_slice(gyro, |s| s.t, window.0, window.1, "gyro")?;
    let accel_w = window_slice(accel, |s| s.t, window.0, window.1, "accel")?;
    Ok(seed_from_snapshots(&snaps, gyro_w, accel_w, &grid, &bias))
}

fn nearest_by_time<T>(samples: &[T], time_of: impl Fn(&T) -> f64, t: f64) -> &T {
    let idx = samples.partition_point(|s| time_of(s) < t);
    if idx == 0 {
        &samples[0]
    } else if idx == samples.len() {
        &samples[samples.len() - 1]
    } else if (time_of(&samples[idx]) - t).abs() < (t - time_of(&samples[idx - 1])).abs() {
        &samples[idx]
    } else {
        &samples[idx - 1]
    }
}

fn seed_from_snapshots(
    snaps: &[crate::baseline::PreintDelta],
    gyro: &[GyroSample],
    accel: &[AccelSample],
    grid: &KnotGrid,
    bias: &BiasState,
) -> (Vec<RotKnot>, Vec<TransKnot>) {
    let mut rot = Vec::with_capacity(snaps.len());
    let mut trans = Vec::with_capacity(snaps.len());
    for (k, snap) in snaps.iter().enumerate() {
        let t = grid.time(k);
        let w = nearest_by_time(gyro, |s| s.t, t).w - bias.gyro;
        let a_body = nearest_by_time(accel, |s| s.t, t).a - bias.accel;
        rot.push(RotKnot {
            c: if k == 0 { Rotation::identity() } else { snap.delta_c },
            w,
        });
        trans.push(TransKnot {
            r: snap.delta_r,
            v: snap.delta_v,
            a: snap.delta_c.rotate(&a_body),
        });
    }
    (rot, trans)
}

/// Gauss-Newton refinement of the rotation knots with backtracking line
/// search. Returns the refined knots, the convergence report, and the
/// per-knot marginal covariances of the information matrix at convergence.
pub fn solve_rotation(
    seed: &[RotKnot],
    gyro: &[GyroSample],
    window: (f64, f64),
    bias: BiasState,
    hyper: &GpHyper,
    noise: &ImuNoise,
    settings: &GnSettings,
) -> Result<(Vec<RotKnot>, SolveReport, Vec<Matrix6<f64>>), GpoError> {
    if seed.len() < 2 {
        return Err(GpoError::InvalidSpec("need at least two rotation knots".into()));
    }
    if seed[0].c.angle_to(&Rotation::identity()) > 1e-12 {
        return Err(GpoError::InvalidSpec(
            "the first rotation knot must be pinned to the identity".into(),
        ));
    }
    let grid = KnotGrid::new(window.0, window.1, seed.len() - 1)?;
    let gyro_w = window_slice(gyro, |s| s.t, window.0, window.1, "gyro")?;
    if gyro_w.is_empty() {
        return Err(GpoError::EmptyStream("gyro"));
    }
    let problem = RotProblem::new(gyro_w, &grid, &bias, hyper, noise)?;

    let mut knots = seed.to_vec();
    let mut intervals = rot_intervals(&knots);
    let mut objective = problem.objective(&knots, &intervals);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut final_update = f64::NAN;
    let mut iterations = 0;

    for _ in 0..settings.max_iterations {
        iterations += 1;
        let mut sys = problem.assemble(&knots, &intervals);
        sys.pin_first_block(0..3);
        let delta = sys.factor()?.solve();
        let step_norm = delta
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));

        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= 1.0 / 1024.0 {
            let candidate = retract(&knots, &delta, alpha);
            let cand_intervals = rot_intervals(&candidate);
            let cand_obj = problem.objective(&candidate, &cand_intervals);
            if cand_obj <= objective {
                knots = candidate;
                intervals = cand_intervals;
                objective = cand_obj;
                accepted = true;
                break;
            }
            alpha /= 2.0;
        }
        trace.push(objective);
        final_update = if accepted { alpha * step_norm } else { 0.0 };
        if !accepted || final_update < settings.tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(GpoError::NonConvergence {
            iterations,
            residual: objective.sqrt(),
        });
    }

    let mut sys = problem.assemble(&knots, &intervals);
    sys.pin_first_block(0..3);
    let mut covs = sys.factor()?.marginals();
    // The pinned attitude of knot 0 carries no uncertainty.
    for i in 0..3 {
        for j in 0..6 {
            covs[0][(i, j)] = 0.0;
            covs[0][(j, i)] = 0.0;
        }
    }

    Ok((
        knots,
        SolveReport {
            iterations,
            converged,
            objective_trace: trace,
            final_update,
        },
        covs,
    ))
}

/// Weighted linear least-squares fit of the translation knots given the
/// already-solved rotation trajectory. Returns the knots and the per-knot
/// marginal covariances.
pub fn solve_translation(
    rot_knots: &[RotKnot],
    accel: &[AccelSample],
    window: (f64, f64),
    bias: BiasState,
    hyper: &GpHyper,
    noise: &ImuNoise,
) -> Result<(Vec<TransKnot>, Vec<Matrix9>), GpoError> {
    let grid = KnotGrid::new(window.0, window.1, rot_knots.len() - 1)?;
    let accel_w = window_slice(accel, |s| s.t, window.0, window.1, "accel")?;
    if accel_w.is_empty() {
        return Err(GpoError::EmptyStream("accel"));
    }
    let intervals = rot_intervals(rot_knots);
    let rot_bridge = wnoa::Bridge::new(grid.spacing(), hyper.q_c())?;
    let trans_bridge = wnoj::Bridge::new(grid.spacing(), hyper.q_r())?;

    let n = rot_knots.len();
    let mut sys = BlockTridiag::<9>::zeros(n);
    let w_a = noise.q_accel_inv();
    let w_p = *trans_bridge.q_end_inv();
    let phi_h = wnoj::transition(grid.spacing())?;

    // GP prior between consecutive knots; zero residual at the origin, so it
    // only shapes the information matrix.
    let phit_w = phi_h.transpose() * w_p;
    for k in 0..n - 1 {
        sys.diag[k] += phit_w * phi_h;
        sys.diag[k + 1] += w_p;
        sys.sub[k] -= w_p * phi_h;
    }

    // Accelerometer factors: the rotated bias-corrected sample observes the
    // linear interpolation of the bracketing knot accelerations.
    for s in accel_w {
        let (k, offset) = grid.locate(s.t)?;
        let (lambda, psi) = rot_bridge.coeffs(offset);
        let local = InterpBlocks::from_coeffs(&lambda, &psi)
            .local_rot(&rot_knots[k].w, &intervals[k]);
        let c_tau = rot_knots[k].c * Rotation::exp(&local.phi);
        let m = c_tau.rotate(&(s.a - bias.accel));

        let frac = offset / grid.spacing();
        let mut block = sys.diag[k].fixed_view_mut::<3, 3>(6, 6);
        block += (1.0 - frac) * (1.0 - frac) * w_a;
        let mut block = sys.diag[k + 1].fixed_view_mut::<3, 3>(6, 6);
        block += frac * frac * w_a;
        let mut block = sys.sub[k].fixed_view_mut::<3, 3>(6, 6);
        block += frac * (1.0 - frac) * w_a;
        let pull = w_a * m;
        let mut rows = sys.rhs[k].fixed_rows_mut::<3>(6);
        rows += (1.0 - frac) * pull;
        let mut rows = sys.rhs[k + 1].fixed_rows_mut::<3>(6);
        rows += frac * pull;
    }

    sys.pin_first_block(0..6);
    let factored = sys.factor()?;
    let solution = factored.solve();
    let mut covs = factored.marginals();
    for i in 0..6 {
        for j in 0..9 {
            covs[0][(i, j)] = 0.0;
            covs[0][(j, i)] = 0.0;
        }
    }

    let knots = solution
        .iter()
        .map(|x| TransKnot {
            r: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
            a: x.fixed_rows::<3>(6).into_owned(),
        })
        .collect();
    Ok((knots, covs))
}

/// Runs the classical discrete bias-Jacobian recursion over the raw samples
/// and snapshots it at every knot time.
pub fn accumulate_proc_jacobians(
    gyro: &[GyroSample],
    accel: &[AccelSample],
    window: (f64, f64),
    intervals: usize,
    bias: BiasState,
) -> Result<Vec<ProcJacobians>, GpoError> {
    let grid = KnotGrid::new(window.0, window.1, intervals)?;
    let noise = ImuNoise::isotropic(1.0, 1.0).expect("unit noise is valid");
    let snaps = discrete_with_snapshots(gyro, accel, window, bias, &noise, grid.times())?;
    Ok(snaps.iter().map(|s| s.jac).collect())
}

/// The fitted pseudo-measurement trajectory over one window. Immutable after
/// the solve; queries are read-only and safe to share across threads.
#[derive(Clone, Debug)]
pub struct PreintTrajectory {
    pub(crate) grid: KnotGrid,
    pub(crate) rot_knots: Vec<RotKnot>,
    pub(crate) trans_knots: Vec<TransKnot>,
    pub(crate) bias_lin: BiasState,
    pub(crate) proc_jac: Vec<ProcJacobians>,
    pub(crate) rot_cov: Vec<Matrix6<f64>>,
    pub(crate) trans_cov: Vec<Matrix9>,
    pub(crate) rot_intervals: Vec<RotInterval>,
    pub(crate) rot_bridge: wnoa::Bridge,
    pub(crate) trans_bridge: wnoj::Bridge,
    rot_report: SolveReport,
}

impl PreintTrajectory {
    pub fn window(&self) -> (f64, f64) {
        (self.grid.start(), self.grid.end())
    }

    pub fn start(&self) -> f64 {
        self.grid.start()
    }

    pub fn end(&self) -> f64 {
        self.grid.end()
    }

    pub fn knot_intervals(&self) -> usize {
        self.grid.intervals()
    }

    pub fn knot_times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn rot_knots(&self) -> &[RotKnot] {
        &self.rot_knots
    }

    pub fn trans_knots(&self) -> &[TransKnot] {
        &self.trans_knots
    }

    pub fn bias_lin(&self) -> BiasState {
        self.bias_lin
    }

    pub fn proc_jacobians(&self) -> &[ProcJacobians] {
        &self.proc_jac
    }

    pub fn report(&self) -> &SolveReport {
        &self.rot_report
    }

    pub fn rot_knot_cov(&self) -> &[Matrix6<f64>] {
        &self.rot_cov
    }

    pub fn trans_knot_cov(&self) -> &[Matrix9] {
        &self.trans_cov
    }
}

/// Full pre-optimization of one window: seed, rotation Gauss-Newton,
/// translation linear solve, and bias-Jacobian accumulation.
pub fn preintegrate(
    gyro: &[GyroSample],
    accel: &[AccelSample],
    window: (f64, f64),
    config: &PreintConfig,
    bias: BiasState,
    hyper: &GpHyper,
    noise: &ImuNoise,
) -> Result<PreintTrajectory, GpoError> {
    let (start, end) = window;
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Err(GpoError::InvalidWindow(start, end));
    }
    if !bias.is_finite() {
        return Err(GpoError::InvalidSpec("bias must be finite".into()));
    }
    let intervals = config.knots.intervals(end - start);
    let grid = KnotGrid::new(start, end, intervals)?;

    let gyro_w = window_slice(gyro, |s| s.t, start, end, "gyro")?;
    let accel_w = window_slice(accel, |s| s.t, start, end, "accel")?;
    if gyro_w.is_empty() {
        return Err(GpoError::EmptyStream("gyro"));
    }
    if accel_w.is_empty() {
        return Err(GpoError::EmptyStream("accel"));
    }

    let snaps = discrete_with_snapshots(gyro_w, accel_w, window, bias, noise, grid.times())?;
    let (rot_seed, _) = seed_from_snapshots(&snaps, gyro_w, accel_w, &grid, &bias);

    let (rot_knots, rot_report, rot_cov_info) =
        solve_rotation(&rot_seed, gyro_w, window, bias, hyper, noise, &config.gn)?;
    let (trans_knots, trans_cov_info) =
        solve_translation(&rot_knots, accel_w, window, bias, hyper, noise)?;
    let proc_jac: Vec<ProcJacobians> = snaps.iter().map(|s| s.jac).collect();

    let (rot_cov, trans_cov) = match config.cov_source {
        CovarianceSource::InformationMatrix => (rot_cov_info, trans_cov_info),
        CovarianceSource::DiscretePropagation => {
            let mut rot = Vec::with_capacity(snaps.len());
            let mut trans = Vec::with_capacity(snaps.len());
            for (k, s) in snaps.iter().enumerate() {
                let mut rc = Matrix6::zeros();
                rc.fixed_view_mut::<3, 3>(0, 0)
                    .copy_from(&s.cov.fixed_view::<3, 3>(0, 0).into_owned());
                rc.fixed_view_mut::<3, 3>(3, 3).copy_from(noise.q_gyro());
                rot.push(rc);
                let mut tc = Matrix9::zeros();
                tc.fixed_view_mut::<3, 3>(0, 0)
                    .copy_from(&s.cov.fixed_view::<3, 3>(6, 6).into_owned());
                tc.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&s.cov.fixed_view::<3, 3>(6, 3).into_owned());
                tc.fixed_view_mut::<3, 3>(3, 0)
                    .copy_from(&s.cov.fixed_view::<3, 3>(3, 6).into_owned());
                tc.fixed_view_mut::<3, 3>(3, 3)
                    .copy_from(&s.cov.fixed_view::<3, 3>(3, 3).into_owned());
                let cm = rot_knots[k].c.matrix();
                tc.fixed_view_mut::<3, 3>(6, 6)
                    .copy_from(&(cm * noise.q_accel() * cm.transpose()));
                trans.push(tc);
            }
            (rot, trans)
        }
    };

    let rot_intervals = rot_intervals(&rot_knots);
    let rot_bridge = wnoa::Bridge::new(grid.spacing(), hyper.q_c())?;
    let trans_bridge = wnoj::Bridge::new(grid.spacing(), hyper.q_r())?;

    Ok(PreintTrajectory {
        grid,
        rot_knots,
        trans_knots,
        bias_lin: bias,
        proc_jac,
        rot_cov,
        trans_cov,
        rot_intervals,
        rot_bridge,
        trans_bridge,
        rot_report,
    })
}
