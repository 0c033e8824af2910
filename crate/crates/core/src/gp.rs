//! Closed-form state-transition, process-covariance, and interpolation
//! blocks for the two Markovian motion priors:
//!
//! - [`wnoa`]: white noise on acceleration of the lifted rotation variable,
//!   state `[phi, phi_dot]` (6 dof);
//! - [`wnoj`]: white noise on jerk for translation, state `[r, v, a]` (9 dof).
//!
//! Conditioning on the two bracketing knots gives the interpolation
//! coefficients
//!
//! ```text
//! x(tau) = Lambda(tau) x(tau_k) + Psi(tau) x(tau_k+1)
//! Psi(tau)    = Q(tau) Phi(t_k+1, tau)^T Q(t_k+1)^-1
//! Lambda(tau) = Phi(tau, t_k) - Psi(tau) Phi(t_k+1, t_k)
//! ```
//!
//! which both priors share, differing only in the block profiles.

use nalgebra::{Matrix2, Matrix3, Matrix6, SMatrix};

use crate::error::GpoError;

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Condition number of the end-of-interval process covariance above which
/// the interpolation is reported singular instead of silently regularized.
const MAX_CONDITION: f64 = 1e12;

/// Power spectral densities of the two priors.
///
/// `q_c` drives the rotation prior ((rad/s^2)^2 s), `q_r` the translation
/// prior ((m/s^3)^2 s). Both must be symmetric positive definite.
#[derive(Clone, Copy, Debug)]
pub struct GpHyper {
    q_c: Matrix3<f64>,
    q_r: Matrix3<f64>,
}

impl GpHyper {
    pub fn new(q_c: Matrix3<f64>, q_r: Matrix3<f64>) -> Result<Self, GpoError> {
        validate_psd(&q_c)?;
        validate_psd(&q_r)?;
        Ok(GpHyper { q_c, q_r })
    }

    /// Isotropic densities `qc * I`, `qr * I`.
    pub fn isotropic(qc: f64, qr: f64) -> Result<Self, GpoError> {
        Self::new(Matrix3::identity() * qc, Matrix3::identity() * qr)
    }

    pub fn q_c(&self) -> &Matrix3<f64> {
        &self.q_c
    }

    pub fn q_r(&self) -> &Matrix3<f64> {
        &self.q_r
    }
}

impl Default for GpHyper {
    /// Permissive default: both densities `100 * I`.
    fn default() -> Self {
        Self::isotropic(100.0, 100.0).unwrap()
    }
}

fn validate_psd(m: &Matrix3<f64>) -> Result<(), GpoError> {
    if !m.iter().all(|x| x.is_finite()) || (m - m.transpose()).abs().max() > 1e-12 {
        return Err(GpoError::InvalidPsd);
    }
    if (0..3).any(|i| m[(i, i)] <= 0.0) {
        return Err(GpoError::InvalidPsd);
    }
    if nalgebra::Cholesky::new(*m).is_none() {
        return Err(GpoError::InvalidPsd);
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<(), GpoError> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(GpoError::NegativeDt(dt));
    }
    Ok(())
}

// Kronecker product of a per-axis time profile with the 3x3 psd block.
fn kron2(profile: &Matrix2<f64>, block: &Matrix3<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    for i in 0..2 {
        for j in 0..2 {
            out.fixed_view_mut::<3, 3>(3 * i, 3 * j)
                .copy_from(&(profile[(i, j)] * block));
        }
    }
    out
}

fn kron3(profile: &Matrix3<f64>, block: &Matrix3<f64>) -> Matrix9 {
    let mut out = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            out.fixed_view_mut::<3, 3>(3 * i, 3 * j)
                .copy_from(&(profile[(i, j)] * block));
        }
    }
    out
}

fn condition_number<const D: usize>(m: &SMatrix<f64, D, D>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

// The shared bridge machinery, generic over the stacked state dimension.
// `profile_phi` / `profile_q` supply the per-axis polynomial blocks.
macro_rules! prior_impl {
    ($modname:ident, $dim:expr, $mat:ty, $profdim:expr, $profmat:ty, $kron:ident,
     $phi_profile:expr, $q_profile:expr, $doc:expr) => {
        #[doc = $doc]
        pub mod $modname {
            use super::*;

            pub(crate) fn phi_profile(dt: f64) -> $profmat {
                let f: fn(f64) -> $profmat = $phi_profile;
                f(dt)
            }

            pub(crate) fn q_profile(dt: f64) -> $profmat {
                let f: fn(f64) -> $profmat = $q_profile;
                f(dt)
            }

            /// State-transition matrix over a nonnegative time step.
            pub fn transition(dt: f64) -> Result<$mat, GpoError> {
                check_dt(dt)?;
                Ok($kron(&phi_profile(dt), &Matrix3::identity()))
            }

            /// Accumulated white-noise process covariance over `dt`.
            pub fn process_cov(dt: f64, psd: &Matrix3<f64>) -> Result<$mat, GpoError> {
                check_dt(dt)?;
                validate_psd(psd)?;
                Ok($kron(&q_profile(dt), psd))
            }

            /// Interpolation coefficients `(Lambda, Psi)` at `tau` between the
            /// knots at `tau_k` and `tau_k1`.
            pub fn interp_coeffs(
                tau: f64,
                tau_k: f64,
                tau_k1: f64,
                psd: &Matrix3<f64>,
            ) -> Result<($mat, $mat), GpoError> {
                let bridge = Bridge::new(tau_k1 - tau_k, psd)?;
                if tau < tau_k || tau > tau_k1 {
                    return Err(GpoError::OutsideInterval {
                        tau,
                        start: tau_k,
                        end: tau_k1,
                    });
                }
                Ok(bridge.coeffs(tau - tau_k))
            }

            /// Precomputed per-interval quantities for repeated interpolation
            /// on a fixed knot spacing.
            #[derive(Clone, Debug)]
            pub(crate) struct Bridge {
                pub dt: f64,
                psd: Matrix3<f64>,
                phi_end: $mat,
                q_end_inv: $mat,
            }

            impl Bridge {
                pub fn new(dt: f64, psd: &Matrix3<f64>) -> Result<Self, GpoError> {
                    check_dt(dt)?;
                    validate_psd(psd)?;
                    if dt == 0.0 {
                        return Err(GpoError::SingularProcessCov);
                    }
                    let q_end = $kron(&q_profile(dt), psd);
                    if condition_number(&q_end) > MAX_CONDITION {
                        return Err(GpoError::SingularProcessCov);
                    }
                    let chol = nalgebra::Cholesky::new(q_end)
                        .ok_or(GpoError::SingularProcessCov)?;
                    Ok(Bridge {
                        dt,
                        psd: *psd,
                        phi_end: $kron(&phi_profile(dt), &Matrix3::identity()),
                        q_end_inv: chol.inverse(),
                    })
                }

                /// `(Lambda, Psi)` at local time `s` in `[0, dt]`. The knot
                /// endpoints return the exact `(I, 0)` / `(0, I)` structure.
                pub fn coeffs(&self, s: f64) -> ($mat, $mat) {
                    if s == 0.0 {
                        return (<$mat>::identity(), <$mat>::zeros());
                    }
                    if s == self.dt {
                        return (<$mat>::zeros(), <$mat>::identity());
                    }
                    let q_s = $kron(&q_profile(s), &self.psd);
                    let phi_s = $kron(&phi_profile(s), &Matrix3::identity());
                    let phi_rest = $kron(&phi_profile(self.dt - s), &Matrix3::identity());
                    let psi = q_s * phi_rest.transpose() * self.q_end_inv;
                    let lambda = phi_s - psi * self.phi_end;
                    (lambda, psi)
                }

                /// Covariance of the prior bridge at local time `s`, i.e. the
                /// spread of `x(s)` conditioned on both knots.
                pub fn bridge_cov(&self, s: f64) -> $mat {
                    if s == 0.0 || s == self.dt {
                        return <$mat>::zeros();
                    }
                    let q_s = $kron(&q_profile(s), &self.psd);
                    let phi_rest = $kron(&phi_profile(self.dt - s), &Matrix3::identity());
                    let psi = q_s * phi_rest.transpose() * self.q_end_inv;
                    let cov = q_s - psi * phi_rest * q_s;
                    (cov + cov.transpose()) / 2.0
                }

                /// End-of-interval process covariance, the prior-residual
                /// weight over one knot interval.
                pub fn q_end(&self) -> $mat {
                    $kron(&q_profile(self.dt), &self.psd)
                }

                pub fn q_end_inv(&self) -> &$mat {
                    &self.q_end_inv
                }
            }
        }
    };
}

prior_impl!(
    wnoa,
    6,
    Matrix6<f64>,
    2,
    Matrix2<f64>,
    kron2,
    |dt| Matrix2::new(1.0, dt, 0.0, 1.0),
    |dt| {
        let dt2 = dt * dt;
        Matrix2::new(dt2 * dt / 3.0, dt2 / 2.0, dt2 / 2.0, dt)
    },
    "White-noise-on-acceleration prior over a two-block state `[x, x_dot]`."
);

prior_impl!(
    wnoj,
    9,
    Matrix9,
    3,
    Matrix3<f64>,
    kron3,
    |dt| {
        let dt2 = dt * dt;
        Matrix3::new(1.0, dt, dt2 / 2.0, 0.0, 1.0, dt, 0.0, 0.0, 1.0)
    },
    |dt| {
        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        let dt4 = dt3 * dt;
        let dt5 = dt4 * dt;
        Matrix3::new(
            dt5 / 20.0,
            dt4 / 8.0,
            dt3 / 6.0,
            dt4 / 8.0,
            dt3 / 3.0,
            dt2 / 2.0,
            dt3 / 6.0,
            dt2 / 2.0,
            dt,
        )
    },
    "White-noise-on-jerk prior over a three-block state `[x, x_dot, x_ddot]`."
);

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, Vector6};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn transition_at_zero_is_identity() {
        assert_eq!(wnoa::transition(0.0).unwrap(), Matrix6::identity());
        assert_eq!(wnoj::transition(0.0).unwrap(), Matrix9::identity());
    }

    #[test]
    fn transition_rejects_negative_dt() {
        assert!(wnoa::transition(-0.1).is_err());
        assert!(wnoj::transition(-0.1).is_err());
    }

    #[test]
    fn wnoa_transition_unit_step() {
        let phi = wnoa::transition(1.0).unwrap();
        let upper_right = phi.fixed_view::<3, 3>(0, 3).into_owned();
        assert_eq!(upper_right, Matrix3::identity());
    }

    #[test]
    fn transition_semigroup() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let a = rng.gen_range(0.0..2.0);
            let b = rng.gen_range(0.0..2.0);
            let lhs = wnoa::transition(a + b).unwrap();
            let rhs = wnoa::transition(b).unwrap() * wnoa::transition(a).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
            let lhs = wnoj::transition(a + b).unwrap();
            let rhs = wnoj::transition(b).unwrap() * wnoj::transition(a).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn process_cov_at_zero_is_zero() {
        let psd = Matrix3::identity();
        assert_eq!(wnoa::process_cov(0.0, &psd).unwrap(), Matrix6::zeros());
        assert_eq!(wnoj::process_cov(0.0, &psd).unwrap(), Matrix9::zeros());
    }

    #[test]
    fn wnoa_process_cov_unit_step_top_left() {
        let q = wnoa::process_cov(1.0, &Matrix3::identity()).unwrap();
        let top_left = q.fixed_view::<3, 3>(0, 0).into_owned();
        assert_relative_eq!(top_left, Matrix3::identity() / 3.0, epsilon = 1e-15);
    }

    fn random_psd(rng: &mut StdRng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + Matrix3::identity() * 0.1
    }

    #[test]
    fn process_cov_symmetric_psd() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..100 {
            let dt = rng.gen_range(1e-3..3.0);
            let psd = random_psd(&mut rng);
            let q = wnoj::process_cov(dt, &psd).unwrap();
            assert_relative_eq!(q, q.transpose(), epsilon = 1e-12);
            let min_eig = q
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            assert!(min_eig > -1e-10, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn interp_coeffs_endpoints_exact() {
        let psd = Matrix3::identity();
        let (l0, p0) = wnoa::interp_coeffs(0.0, 0.0, 1.0, &psd).unwrap();
        assert_eq!(l0, Matrix6::identity());
        assert_eq!(p0, Matrix6::zeros());
        let (l1, p1) = wnoa::interp_coeffs(1.0, 0.0, 1.0, &psd).unwrap();
        assert_eq!(l1, Matrix6::zeros());
        assert_eq!(p1, Matrix6::identity());
    }

    // Frozen from the direct evaluation of the interpolation formula for the
    // scalar-per-axis wnoa prior at the interval midpoint; these are the
    // cubic-Hermite basis values at s = 1/2.
    #[test]
    fn wnoa_midpoint_matches_direct_formula() {
        let psd = Matrix3::identity();
        let (lambda, psi) = wnoa::interp_coeffs(0.5, 0.0, 1.0, &psd).unwrap();

        let frozen_lambda = Matrix2::new(0.5, 0.125, -1.5, -0.25);
        let frozen_psi = Matrix2::new(0.5, -0.125, 1.5, -0.25);
        for i in 0..2 {
            for j in 0..2 {
                let lb = lambda.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
                let pb = psi.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
                assert_relative_eq!(
                    lb,
                    Matrix3::identity() * frozen_lambda[(i, j)],
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    pb,
                    Matrix3::identity() * frozen_psi[(i, j)],
                    epsilon = 1e-12
                );
            }
        }

        // Independent dense evaluation of the same formula, built from the
        // textbook matrices and a generic inverse.
        let q = |dt: f64| {
            DMatrix::from_row_slice(
                2,
                2,
                &[dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt],
            )
        };
        let phi = |dt: f64| DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let psi_dense =
            q(0.5) * phi(0.5).transpose() * q(1.0).try_inverse().unwrap();
        let lambda_dense = phi(0.5) - &psi_dense * phi(1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(lambda_dense[(i, j)], frozen_lambda[(i, j)], epsilon = 1e-12);
                assert_relative_eq!(psi_dense[(i, j)], frozen_psi[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_exact_for_transition_consistent_states() {
        // A state evolving exactly along the transition (zero process noise)
        // must be reproduced exactly, independent of the psd.
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let psd = random_psd(&mut rng);
            let dt = rng.gen_range(0.1..2.0);
            let s = rng.gen_range(0.0..dt);
            let x0 = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let x1 = wnoa::transition(dt).unwrap() * x0;
            let (lambda, psi) = wnoa::interp_coeffs(s, 0.0, dt, &psd).unwrap();
            let interp = lambda * x0 + psi * x1;
            let expected = wnoa::transition(s).unwrap() * x0;
            assert_relative_eq!(interp, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn interp_errors_are_distinct() {
        let psd = Matrix3::identity();
        match wnoa::interp_coeffs(2.0, 0.0, 1.0, &psd) {
            Err(GpoError::OutsideInterval { .. }) => {}
            other => panic!("expected OutsideInterval, got {other:?}"),
        }
        match wnoa::interp_coeffs(0.0, 0.0, 0.0, &psd) {
            Err(GpoError::SingularProcessCov) => {}
            other => panic!("expected SingularProcessCov, got {other:?}"),
        }
        let degenerate = Matrix3::identity() * 1e-300;
        assert!(wnoj::interp_coeffs(0.5, 0.0, 1.0, &degenerate).is_err());
    }

    #[test]
    fn bridge_cov_is_psd_and_vanishes_at_knots() {
        let bridge = wnoj::Bridge::new(0.5, &Matrix3::identity()).unwrap();
        assert_eq!(bridge.bridge_cov(0.0), Matrix9::zeros());
        assert_eq!(bridge.bridge_cov(0.5), Matrix9::zeros());
        let c = bridge.bridge_cov(0.2);
        assert_relative_eq!(c, c.transpose(), epsilon = 1e-15);
        let min_eig = c
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        assert!(min_eig > -1e-12);
    }

    #[test]
    fn hyper_validates() {
        assert!(GpHyper::isotropic(1.0, 1.0).is_ok());
        assert!(GpHyper::isotropic(-1.0, 1.0).is_err());
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(GpHyper::new(asym, Matrix3::identity()).is_err());
    }

    proptest! {
        #[test]
        fn prop_wnoa_coeffs_partition_consistency(s in 0.0f64..1.0) {
            // For a constant state (transition-invariant in the position
            // block only when rates are zero), Lambda + Psi * Phi stays the
            // plain transition.
            let psd = Matrix3::identity();
            let (lambda, psi) = wnoa::interp_coeffs(s, 0.0, 1.0, &psd).unwrap();
            let recombined = lambda + psi * wnoa::transition(1.0).unwrap();
            let direct = wnoa::transition(s).unwrap();
            prop_assert!((recombined - direct).abs().max() < 1e-9);
        }
    }
}
