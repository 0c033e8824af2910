//! Symmetric positive-definite block-tridiagonal systems: Cholesky-style
//! factorization, O(n) solve, and O(n) marginal-covariance recovery.

use nalgebra::{Cholesky, Const, SMatrix, SVector};

use crate::error::GpoError;

/// `H x = b` with `H` block-tridiagonal SPD. `diag[k]` is the k-th diagonal
/// block and `sub[k]` the block coupling row k+1 to column k.
pub(crate) struct BlockTridiag<const D: usize> {
    pub diag: Vec<SMatrix<f64, D, D>>,
    pub sub: Vec<SMatrix<f64, D, D>>,
    pub rhs: Vec<SVector<f64, D>>,
}

impl<const D: usize> BlockTridiag<D> {
    pub fn zeros(n: usize) -> Self {
        BlockTridiag {
            diag: vec![SMatrix::zeros(); n],
            sub: vec![SMatrix::zeros(); n.saturating_sub(1)],
            rhs: vec![SVector::zeros(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Pins coordinates `coords` of block 0 to zero: clears the coupled rows
    /// and columns and places a unit diagonal so the solve returns zero there.
    pub fn pin_first_block(&mut self, coords: std::ops::Range<usize>) {
        for i in coords.clone() {
            for j in 0..D {
                self.diag[0][(i, j)] = 0.0;
                self.diag[0][(j, i)] = 0.0;
            }
            self.diag[0][(i, i)] = 1.0;
            self.rhs[0][i] = 0.0;
            if !self.sub.is_empty() {
                // sub[0] couples block 1 (rows) to block 0 (columns)
                for r in 0..D {
                    self.sub[0][(r, i)] = 0.0;
                }
            }
        }
    }

    pub fn factor(self) -> Result<Factorized<D>, GpoError> {
        let n = self.n();
        let mut chol: Vec<Cholesky<f64, Const<D>>> = Vec::with_capacity(n);
        let mut gain: Vec<SMatrix<f64, D, D>> = Vec::with_capacity(n.saturating_sub(1));
        let mut c = self.diag[0];
        for k in 0..n {
            if k > 0 {
                // G_k = B_k * C_{k-1}^{-1}; C_k = A_k - G_k B_k^T
                let b = self.sub[k - 1];
                let g = chol[k - 1].solve(&b.transpose()).transpose();
                c = self.diag[k] - g * b.transpose();
                gain.push(g);
            }
            let ck = Cholesky::new(symmetrize(&c)).ok_or(GpoError::RankDeficient(k))?;
            chol.push(ck);
        }
        Ok(Factorized {
            chol,
            gain,
            sub: self.sub,
            rhs: self.rhs,
        })
    }
}

fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) / 2.0
}

pub(crate) struct Factorized<const D: usize> {
    chol: Vec<Cholesky<f64, Const<D>>>,
    gain: Vec<SMatrix<f64, D, D>>,
    sub: Vec<SMatrix<f64, D, D>>,
    rhs: Vec<SVector<f64, D>>,
}

impl<const D: usize> Factorized<D> {
    pub fn solve(&self) -> Vec<SVector<f64, D>> {
        let n = self.chol.len();
        let mut y = Vec::with_capacity(n);
        y.push(self.rhs[0]);
        for k in 1..n {
            let v = self.rhs[k] - self.gain[k - 1] * y[k - 1];
            y.push(v);
        }
        let mut x = vec![SVector::zeros(); n];
        x[n - 1] = self.chol[n - 1].solve(&y[n - 1]);
        for k in (0..n - 1).rev() {
            let v = y[k] - self.sub[k].transpose() * x[k + 1];
            x[k] = self.chol[k].solve(&v);
        }
        x
    }

    /// Diagonal blocks of `H^{-1}` via the backward smoother recursion.
    pub fn marginals(&self) -> Vec<SMatrix<f64, D, D>> {
        let n = self.chol.len();
        let mut p = vec![SMatrix::zeros(); n];
        p[n - 1] = self.chol[n - 1].inverse();
        for k in (0..n - 1).rev() {
            let c_inv = self.chol[k].inverse();
            let m = -c_inv * self.sub[k].transpose();
            p[k] = symmetrize(&(c_inv + m * p[k + 1] * m.transpose()));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd_system(rng: &mut StdRng, n: usize) -> BlockTridiag<3> {
        let mut sys = BlockTridiag::<3>::zeros(n);
        for k in 0..n {
            let a = SMatrix::<f64, 3, 3>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            sys.diag[k] = a * a.transpose() + SMatrix::identity() * (3.0 + k as f64);
            sys.rhs[k] = SVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        }
        for k in 0..n - 1 {
            sys.sub[k] = SMatrix::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        }
        sys
    }

    fn dense(sys: &BlockTridiag<3>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = sys.n();
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        let mut b = DMatrix::zeros(3 * n, 1);
        for k in 0..n {
            for i in 0..3 {
                b[(3 * k + i, 0)] = sys.rhs[k][i];
                for j in 0..3 {
                    h[(3 * k + i, 3 * k + j)] = sys.diag[k][(i, j)];
                }
            }
        }
        for k in 0..n - 1 {
            for i in 0..3 {
                for j in 0..3 {
                    h[(3 * (k + 1) + i, 3 * k + j)] = sys.sub[k][(i, j)];
                    h[(3 * k + j, 3 * (k + 1) + i)] = sys.sub[k][(i, j)];
                }
            }
        }
        (h, b)
    }

    #[test]
    fn solve_matches_dense_inverse() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in [1usize, 2, 5, 17] {
            let sys = random_spd_system(&mut rng, n);
            let (h, b) = dense(&sys);
            let x_dense = h.clone().try_inverse().unwrap() * &b;
            let x = sys.factor().unwrap().solve();
            for k in 0..n {
                for i in 0..3 {
                    assert_relative_eq!(x[k][i], x_dense[(3 * k + i, 0)], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn marginals_match_dense_inverse() {
        let mut rng = StdRng::seed_from_u64(12);
        for n in [1usize, 3, 8] {
            let sys = random_spd_system(&mut rng, n);
            let (h, _) = dense(&sys);
            let h_inv = h.try_inverse().unwrap();
            let p = sys.factor().unwrap().marginals();
            for k in 0..n {
                for i in 0..3 {
                    for j in 0..3 {
                        assert_relative_eq!(
                            p[k][(i, j)],
                            h_inv[(3 * k + i, 3 * k + j)],
                            epsilon = 1e-9
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let mut sys = BlockTridiag::<3>::zeros(2);
        sys.diag[0] = SMatrix::identity();
        // diag[1] stays zero -> rank deficient at block 1
        match sys.factor() {
            Err(GpoError::RankDeficient(1)) => {}
            other => panic!("expected RankDeficient(1), got {other:?}"),
        }
    }

    #[test]
    fn pinned_coordinates_solve_to_zero() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut sys = random_spd_system(&mut rng, 4);
        sys.pin_first_block(0..2);
        let x = sys.factor().unwrap().solve();
        assert_eq!(x[0][0], 0.0);
        assert_eq!(x[0][1], 0.0);
        assert!(x[0][2].abs() > 0.0);
    }
}
