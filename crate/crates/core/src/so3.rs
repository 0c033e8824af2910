//! SO(3) primitives: exponential/logarithm maps, right Jacobian and its
//! inverse, the skew operator, and closed-form derivatives of the right
//! Jacobian needed by the Gauss-Newton solver and the query chain rule.
//!
//! Conventions:
//! - Rotations are 3x3 orthonormal matrices with determinant +1.
//! - Axis-angle vectors are canonical with `|phi| <= pi`; at exactly a half
//!   turn the axis sign is fixed by making its largest-magnitude component
//!   positive (ties broken by the lowest index).
//! - Perturbations are right-multiplied: `C * exp(delta^)`.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use std::ops::Mul;

use crate::error::GpoError;

/// Below this angle the trigonometric coefficients switch to second-order
/// Taylor expansions, keeping every map smooth across the branch.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Above this angle the logarithm switches to the half-turn axis extraction.
const NEAR_PI: f64 = 3.0;

/// Skew-symmetric matrix of `v`, so that `skew(v) * w == v.cross(&w)`.
#[rustfmt::skip]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0,  -v.z,   v.y,
        v.z,   0.0,  -v.x,
       -v.y,   v.x,   0.0,
    )
}

/// A rotation matrix, validated to be orthonormal with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a raw matrix, rejecting anything that is not a rotation within
    /// 1e-12 (orthonormality and determinant).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GpoError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GpoError::InvalidRotation("non-finite entries".into()));
        }
        let ortho = (m * m.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-12 {
            return Err(GpoError::InvalidRotation(format!(
                "orthonormality defect {ortho:.3e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-12 {
            return Err(GpoError::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Rotation(m))
    }

    /// Exponential map (Rodrigues formula).
    ///
    /// Panics on non-finite input.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        assert!(
            phi.iter().all(|x| x.is_finite()),
            "exp: non-finite axis-angle input"
        );
        let theta2 = phi.norm_squared();
        let s = skew(phi);
        let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
            // sin(t)/t and (1-cos(t))/t^2 to second order
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        Rotation(Matrix3::identity() + a * s + b * (s * s))
    }

    /// Logarithm map, returning the canonical axis-angle with `|phi| <= pi`.
    pub fn log(&self) -> Vector3<f64> {
        let m = &self.0;
        let cos_theta = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // w = vee((R - R^T)/2) = sin(theta) * axis
        let w = Vector3::new(
            (m[(2, 1)] - m[(1, 2)]) / 2.0,
            (m[(0, 2)] - m[(2, 0)]) / 2.0,
            (m[(1, 0)] - m[(0, 1)]) / 2.0,
        );
        let sin_theta = w.norm();
        let theta = sin_theta.atan2(cos_theta);

        if theta < SMALL_ANGLE {
            return w * (1.0 + theta * theta / 6.0);
        }
        if theta < NEAR_PI {
            return w * (theta / sin_theta);
        }

        // Near a half turn sin(theta) -> 0 and w loses the axis. Recover it
        // from the symmetric part: (R + R^T)/2 - cos(theta) I = (1-cos) u u^T.
        let one_minus_cos = 1.0 - cos_theta;
        let b = (m + m.transpose()) / 2.0 - cos_theta * Matrix3::identity();
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap())
            .unwrap();
        let uk = (b[(k, k)] / one_minus_cos).max(0.0).sqrt();
        let mut u = Vector3::zeros();
        for i in 0..3 {
            u[i] = if i == k {
                uk
            } else {
                b[(i, k)] / (one_minus_cos * uk)
            };
        }
        u.normalize_mut();
        if sin_theta > 1e-9 {
            // Away from exactly pi the skew part still fixes the sign.
            if u.dot(&w) < 0.0 {
                u = -u;
            }
        } else {
            // Exactly (numerically) a half turn: phi and -phi are equivalent;
            // pick the representative with the largest component positive.
            let k0 = (0..3)
                .max_by(|&i, &j| u[i].abs().partial_cmp(&u[j].abs()).unwrap())
                .unwrap();
            if u[k0] < 0.0 {
                u = -u;
            }
        }
        u * theta
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transposed(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// `self^T * v`, rotating by the inverse without forming it.
    pub fn rotate_back(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.tr_mul(v)
    }

    /// Relative rotation `self^T * other`.
    pub fn between(&self, other: &Rotation) -> Rotation {
        Rotation(self.0.tr_mul(&other.0))
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.between(other).log().norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

// Coefficients of Jr(phi) = I - c1(t) S + c2(t) S^2, S = skew(phi), t = |phi|.
fn jr_coeffs(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// Right Jacobian of SO(3).
///
/// Relates a perturbation of the axis-angle vector to a body-frame (right)
/// perturbation of the rotation: `exp(phi + d) ~= exp(phi) * exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    assert!(
        phi.iter().all(|x| x.is_finite()),
        "right_jacobian: non-finite input"
    );
    let (c1, c2) = jr_coeffs(phi.norm());
    let s = skew(phi);
    Matrix3::identity() - c1 * s + c2 * (s * s)
}

/// Inverse of the right Jacobian. Requires `|phi| < 2*pi`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    assert!(
        phi.iter().all(|x| x.is_finite()),
        "right_jacobian_inv: non-finite input"
    );
    let theta = phi.norm();
    assert!(theta < 2.0 * PI, "right_jacobian_inv: |phi| >= 2*pi");
    let e = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        // 1/t^2 - (1+cos t)/(2 t sin t), written via the half angle to stay
        // stable through t = pi.
        let half = theta / 2.0;
        1.0 / (theta * theta) - half.cos() / (2.0 * theta * half.sin())
    };
    let s = skew(phi);
    Matrix3::identity() + 0.5 * s + e * (s * s)
}

/// Inverse of the left Jacobian, `Jl(phi)^-1 = Jr(-phi)^-1`.
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian_inv(&(-phi))
}

// d/dtheta of the Jr coefficients. The closed forms cancel catastrophically
// below ~1e-3, where the series take over.
fn jr_coeff_derivs(theta: f64) -> (f64, f64) {
    if theta < 1e-3 {
        let t2 = theta * theta;
        (
            -theta / 12.0 + t2 * theta / 180.0,
            -theta / 60.0 + t2 * theta / 1260.0,
        )
    } else {
        let t2 = theta * theta;
        let (s, c) = theta.sin_cos();
        (
            (theta * s - 2.0 * (1.0 - c)) / (t2 * theta),
            (theta * (1.0 - c) - 3.0 * (theta - s)) / (t2 * t2),
        )
    }
}

/// Partial derivatives of the right Jacobian, one 3x3 matrix per component
/// of `phi`.
pub fn d_right_jacobian(phi: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = phi.norm();
    let s = skew(phi);
    let s2 = s * s;
    let (c1, c2) = jr_coeffs(theta);
    let (dc1, dc2) = jr_coeff_derivs(theta);
    let mut out = [Matrix3::zeros(); 3];
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let se = skew(&e);
        // dtheta/dphi_i = phi_i / theta (zero at the origin in the limit)
        let dt = if theta < SMALL_ANGLE { 0.0 } else { phi[i] / theta };
        out[i] = -(dc1 * dt) * s - c1 * se + (dc2 * dt) * s2 + c2 * (se * s + s * se);
    }
    out
}

/// `d(Jr(phi) v)/dphi` for fixed `v`.
pub fn d_jr_times(phi: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let dj = d_right_jacobian(phi);
    Matrix3::from_columns(&[dj[0] * v, dj[1] * v, dj[2] * v])
}

/// `d(Jr(phi)^-1 v)/dphi` for fixed `v`.
pub fn d_jr_inv_times(phi: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let jinv = right_jacobian_inv(phi);
    let w = jinv * v;
    let dj = d_right_jacobian(phi);
    -jinv * Matrix3::from_columns(&[dj[0] * w, dj[1] * w, dj[2] * w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_axis_angle(rng: &mut StdRng, max_norm: f64) -> Vector3<f64> {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = rng.gen_range(0.0..max_norm);
        if v.norm() < 1e-12 {
            Vector3::new(n, 0.0, 0.0)
        } else {
            v.normalize() * n
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(Rotation::exp(&Vector3::zeros()), Rotation::identity());
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let r = Rotation::exp(&Vector3::new(PI / 2.0, 0.0, 0.0));
        #[rustfmt::skip]
        let expected = Matrix3::new(
            1.0, 0.0,  0.0,
            0.0, 0.0, -1.0,
            0.0, 1.0,  0.0,
        );
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn exp_is_orthonormal_for_large_angles() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let phi = random_axis_angle(&mut rng, 50.0);
            let r = Rotation::exp(&phi);
            let defect = (r.matrix() * r.matrix().transpose() - Matrix3::identity())
                .abs()
                .max();
            assert!(defect < 1e-12, "defect {defect}");
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn exp_rejects_non_finite() {
        Rotation::exp(&Vector3::new(f64::NAN, 0.0, 0.0));
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(Rotation::identity().log(), Vector3::zeros());
    }

    #[test]
    fn log_inverts_exp() {
        let phi = Vector3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(Rotation::exp(&phi).log(), phi, epsilon = 1e-12);
    }

    #[test]
    fn log_half_turn_about_y_sign_convention() {
        let r = Rotation::exp(&Vector3::new(0.0, PI, 0.0));
        // At exactly pi the convention picks the positive-axis representative.
        assert_relative_eq!(r.log(), Vector3::new(0.0, PI, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn log_near_half_turn_branch() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(3.05..PI - 1e-9);
            let phi = random_axis_angle(&mut rng, 1.0).normalize() * n;
            let r = Rotation::exp(&phi);
            let back = Rotation::exp(&r.log());
            assert!(r.angle_to(&back) < 1e-9);
        }
    }

    #[test]
    fn from_matrix_rejects_non_orthonormal() {
        let m = Matrix3::identity() * 1.1;
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn round_trip_error_below_1e10() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let phi = random_axis_angle(&mut rng, PI - 1e-3);
            let back = Rotation::exp(&phi).log();
            assert!((back - phi).norm() < 1e-10, "phi {phi:?} back {back:?}");
        }
    }

    proptest! {
        #[test]
        fn prop_exp_log_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                   scale in 0.0f64..1.0) {
            let raw = Vector3::new(x, y, z);
            prop_assume!(raw.norm() > 1e-6);
            let phi = raw.normalize() * (scale * (PI - 1e-3));
            let back = Rotation::exp(&phi).log();
            prop_assert!((back - phi).norm() < 1e-10);
        }

        #[test]
        fn prop_skew_antisymmetric_and_cross(x in -10.0f64..10.0, y in -10.0f64..10.0,
                                             z in -10.0f64..10.0) {
            let v = Vector3::new(x, y, z);
            let s = skew(&v);
            prop_assert!((s + s.transpose()).abs().max() == 0.0);
            let w = Vector3::new(y, z, x);
            prop_assert!((s * w - v.cross(&w)).norm() < 1e-12);
        }
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let got = skew(&Vector3::new(1.0, 0.0, 0.0)) * Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(got, Vector3::new(0.0, 0.0, 1.0));
        let v = Vector3::new(0.3, -0.7, 1.1);
        assert_relative_eq!(skew(&v) * v, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn right_jacobian_at_zero_is_identity() {
        assert_eq!(right_jacobian(&Vector3::zeros()), Matrix3::identity());
        assert_eq!(right_jacobian_inv(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn right_jacobian_product_identity() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..100 {
            let phi = random_axis_angle(&mut rng, PI);
            let p = right_jacobian(&phi) * right_jacobian_inv(&phi);
            assert_relative_eq!(p, Matrix3::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn right_jacobian_matches_finite_difference() {
        // exp(phi + d) relative to exp(phi) should equal exp(Jr(phi) d) to
        // first order; check against a central difference.
        let mut rng = StdRng::seed_from_u64(5);
        let eps = 1e-6;
        for _ in 0..1000 {
            let phi = random_axis_angle(&mut rng, PI - 0.1);
            let jr = right_jacobian(&phi);
            for i in 0..3 {
                let mut d = Vector3::zeros();
                d[i] = eps;
                let plus = Rotation::exp(&phi).between(&Rotation::exp(&(phi + d))).log();
                let minus = Rotation::exp(&phi).between(&Rotation::exp(&(phi - d))).log();
                let fd = (plus - minus) / (2.0 * eps);
                let col = jr.column(i).into_owned();
                let rel = (fd - col).norm() / col.norm().max(1e-12);
                assert!(rel < 1e-4, "col {i} rel err {rel}");
            }
        }
    }

    #[test]
    fn d_right_jacobian_matches_finite_difference() {
        let mut rng = StdRng::seed_from_u64(6);
        let eps = 1e-6;
        for _ in 0..200 {
            let phi = random_axis_angle(&mut rng, 2.5);
            let v = random_axis_angle(&mut rng, 3.0);
            let an = d_jr_times(&phi, &v);
            let an_inv = d_jr_inv_times(&phi, &v);
            for i in 0..3 {
                let mut d = Vector3::zeros();
                d[i] = eps;
                let fd = (right_jacobian(&(phi + d)) * v - right_jacobian(&(phi - d)) * v)
                    / (2.0 * eps);
                let rel = (fd - an.column(i)).norm() / fd.norm().max(1e-9);
                assert!(rel < 1e-4, "dJr col {i} rel {rel}");
                let fdi = (right_jacobian_inv(&(phi + d)) * v
                    - right_jacobian_inv(&(phi - d)) * v)
                    / (2.0 * eps);
                let reli = (fdi - an_inv.column(i)).norm() / fdi.norm().max(1e-9);
                assert!(reli < 1e-4, "dJr^-1 col {i} rel {reli}");
            }
        }
    }

    #[test]
    fn left_jacobian_inv_consistency() {
        // Jl(phi) = exp(phi^) Jr(phi), so Jl^-1 = Jr^-1 exp(-phi^).
        let phi = Vector3::new(0.4, -0.2, 0.9);
        let expected = right_jacobian_inv(&phi) * Rotation::exp(&phi).matrix().transpose();
        assert_relative_eq!(left_jacobian_inv(&phi), expected, epsilon = 1e-12);
    }
}
