//! Constant-time queries on a solved [`PreintTrajectory`]: interpolated
//! pseudo-measurements, their covariance, and their bias Jacobians at any
//! timestamp inside the window.
//!
//! The interval is found by direct arithmetic on the uniform knot grid, so
//! the cost is independent of the knot count and window length. A query that
//! lands exactly on a knot returns the stored knot state, covariance, and
//! procedural Jacobians bit-for-bit.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};

use crate::error::GpoError;
use crate::gp::Matrix9;
use crate::imu::ProcJacobians;
use crate::preopt::{InterpBlocks, PreintTrajectory};
use crate::so3::{d_jr_times, right_jacobian, skew, Rotation};

pub type Matrix15 = SMatrix<f64, 15, 15>;

/// Interpolated pseudo-measurements at one timestamp.
///
/// `covariance` is ordered `(dc, dw, dr, dv, da)` in 3-blocks, where `dc` is
/// a right perturbation of `delta_c`; the rotation and translation processes
/// are kept uncorrelated.
#[derive(Clone, Debug)]
pub struct QueryResult {
    pub tau: f64,
    pub window_start: f64,
    pub delta_c: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_r: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub bias_jacobian: ProcJacobians,
    pub covariance: Matrix15,
}

/// Pseudo-measurements after a first-order bias update.
#[derive(Clone, Copy, Debug)]
pub struct CorrectedDelta {
    pub delta_c: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_r: Vector3<f64>,
}

impl QueryResult {
    /// First-order update of the pseudo-measurements for a bias change
    /// `(db_g, db_a)` away from the linearization bias.
    pub fn bias_corrected(&self, db_g: &Vector3<f64>, db_a: &Vector3<f64>) -> CorrectedDelta {
        let j = &self.bias_jacobian;
        CorrectedDelta {
            delta_c: self.delta_c * Rotation::exp(&(j.dc_dbg * db_g)),
            delta_v: self.delta_v + j.dv_dbg * db_g + j.dv_dba * db_a,
            delta_r: self.delta_r + j.dr_dbg * db_g + j.dr_dba * db_a,
        }
    }
}

// Sensitivity of the queried rotation-side outputs (dc, dw) to the right
// perturbations (dphi, dw) of one bracketing knot.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RotSensitivity {
    pub left: Matrix6<f64>,
    pub right: Matrix6<f64>,
}

impl PreintTrajectory {
    /// Pseudo-measurements, bias Jacobians, and covariance at `tau`.
    pub fn query(&self, tau: f64) -> Result<QueryResult, GpoError> {
        let (k, offset) = self.grid.locate(tau)?;
        if let Some(kk) = self.grid.exact_knot(tau) {
            return Ok(self.knot_query(tau, kk));
        }

        // --- rotation side -------------------------------------------------
        let iv = &self.rot_intervals[k];
        let (lambda, psi) = self.rot_bridge.coeffs(offset);
        let blocks = InterpBlocks::from_coeffs(&lambda, &psi);
        let local = blocks.local_rot(&self.rot_knots[k].w, iv);
        let c_loc = Rotation::exp(&local.phi);
        let delta_c = self.rot_knots[k].c * c_loc;
        let j_tau = right_jacobian(&local.phi);
        let omega = j_tau * local.dphi;
        let e_tau = d_jr_times(&local.phi, &local.dphi);
        let sens = rot_sensitivities(&blocks, iv, &c_loc, &j_tau, &e_tau);

        // --- translation side ----------------------------------------------
        let (lambda_t, psi_t) = self.trans_bridge.coeffs(offset);
        let p = lambda_t * self.trans_knots[k].as_vector()
            + psi_t * self.trans_knots[k + 1].as_vector();
        let delta_r = p.fixed_rows::<3>(0).into_owned();
        let delta_v = p.fixed_rows::<3>(3).into_owned();
        let accel = p.fixed_rows::<3>(6).into_owned();

        // --- bias Jacobians via the interpolation chain ----------------------
        let jac_k = &self.proc_jac[k];
        let jac_k1 = &self.proc_jac[k + 1];
        let dc_dbg = sens.left.fixed_view::<3, 3>(0, 0) * jac_k.dc_dbg
            - sens.left.fixed_view::<3, 3>(0, 3).into_owned()
            + sens.right.fixed_view::<3, 3>(0, 0) * jac_k1.dc_dbg
            - sens.right.fixed_view::<3, 3>(0, 3).into_owned();

        let p_k = trans_knot_bias_sensitivity(self, k);
        let p_k1 = trans_knot_bias_sensitivity(self, k + 1);
        let p_tau = lambda_t * p_k + psi_t * p_k1;
        let bias_jacobian = ProcJacobians {
            dc_dbg,
            dr_dbg: p_tau.fixed_view::<3, 3>(0, 0).into_owned(),
            dr_dba: p_tau.fixed_view::<3, 3>(0, 3).into_owned(),
            dv_dbg: p_tau.fixed_view::<3, 3>(3, 0).into_owned(),
            dv_dba: p_tau.fixed_view::<3, 3>(3, 3).into_owned(),
        };

        // --- covariance -----------------------------------------------------
        // Conditional-GP posterior with the knot marginals; cross-knot and
        // rotation-translation correlations are neglected.
        let mut g = Matrix6::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_tau);
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&e_tau);
        g.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_tau);
        let rot_cov = sens.left * self.rot_cov[k] * sens.left.transpose()
            + sens.right * self.rot_cov[k + 1] * sens.right.transpose()
            + g * self.rot_bridge.bridge_cov(offset) * g.transpose();
        let trans_cov = lambda_t * self.trans_cov[k] * lambda_t.transpose()
            + psi_t * self.trans_cov[k + 1] * psi_t.transpose()
            + self.trans_bridge.bridge_cov(offset);

        let mut covariance = Matrix15::zeros();
        covariance
            .fixed_view_mut::<6, 6>(0, 0)
            .copy_from(&((rot_cov + rot_cov.transpose()) / 2.0));
        covariance
            .fixed_view_mut::<9, 9>(6, 6)
            .copy_from(&((trans_cov + trans_cov.transpose()) / 2.0));

        Ok(QueryResult {
            tau,
            window_start: self.start(),
            delta_c,
            delta_v,
            delta_r,
            omega,
            accel,
            bias_jacobian,
            covariance,
        })
    }

    /// The five bias-Jacobian blocks at `tau` (the chain rule combining the
    /// interpolation sensitivities with the stored per-knot blocks).
    pub fn query_bias_jacobian(&self, tau: f64) -> Result<ProcJacobians, GpoError> {
        Ok(self.query(tau)?.bias_jacobian)
    }

    fn knot_query(&self, tau: f64, k: usize) -> QueryResult {
        let mut covariance = Matrix15::zeros();
        covariance
            .fixed_view_mut::<6, 6>(0, 0)
            .copy_from(&self.rot_cov[k]);
        covariance
            .fixed_view_mut::<9, 9>(6, 6)
            .copy_from(&self.trans_cov[k]);
        QueryResult {
            tau,
            window_start: self.start(),
            delta_c: self.rot_knots[k].c,
            delta_v: self.trans_knots[k].v,
            delta_r: self.trans_knots[k].r,
            omega: self.rot_knots[k].w,
            accel: self.trans_knots[k].a,
            bias_jacobian: self.proc_jac[k],
            covariance,
        }
    }
}

pub(crate) fn rot_sensitivities(
    blocks: &InterpBlocks,
    iv: &crate::preopt::RotInterval,
    c_loc: &Rotation,
    j_tau: &Matrix3<f64>,
    e_tau: &Matrix3<f64>,
) -> RotSensitivity {
    let p1d = blocks.p11 + blocks.p12 * iv.d_e;
    let p2d = blocks.p21 + blocks.p22 * iv.d_e;

    // d(local phi, local rate)/d(knot perturbations)
    let dphi_dphi_k = p1d * iv.a_e;
    let dphi_dw_k = blocks.l12;
    let dphi_dphi_k1 = p1d * iv.b_e;
    let dphi_dw_k1 = blocks.p12 * iv.b_e;
    let drate_dphi_k = p2d * iv.a_e;
    let drate_dw_k = blocks.l22;
    let drate_dphi_k1 = p2d * iv.b_e;
    let drate_dw_k1 = blocks.p22 * iv.b_e;

    let mut left = Matrix6::zeros();
    left.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(c_loc.matrix().transpose() + j_tau * dphi_dphi_k));
    left.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(j_tau * dphi_dw_k));
    left.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(e_tau * dphi_dphi_k + j_tau * drate_dphi_k));
    left.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(e_tau * dphi_dw_k + j_tau * drate_dw_k));

    let mut right = Matrix6::zeros();
    right
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(j_tau * dphi_dphi_k1));
    right
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(j_tau * dphi_dw_k1));
    right
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(e_tau * dphi_dphi_k1 + j_tau * drate_dphi_k1));
    right
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(e_tau * dphi_dw_k1 + j_tau * drate_dw_k1));

    RotSensitivity { left, right }
}

// Bias sensitivity of one translation knot state (r, v, a), as a 9x6 block
// [d./dbg, d./dba]. The r and v rows are the stored procedural Jacobians; the
// acceleration row follows from a_k = C(tau_k) (raw - b_a).
fn trans_knot_bias_sensitivity(traj: &PreintTrajectory, k: usize) -> SMatrix<f64, 9, 6> {
    let jac = &traj.proc_jac[k];
    let c = &traj.rot_knots[k].c;
    let a = &traj.trans_knots[k].a;
    let mut p = SMatrix::<f64, 9, 6>::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&jac.dr_dbg);
    p.fixed_view_mut::<3, 3>(0, 3).copy_from(&jac.dr_dba);
    p.fixed_view_mut::<3, 3>(3, 0).copy_from(&jac.dv_dbg);
    p.fixed_view_mut::<3, 3>(3, 3).copy_from(&jac.dv_dba);
    p.fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&(-skew(a) * c.matrix() * jac.dc_dbg));
    p.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-c.matrix()));
    p
}
