//! Small dense linear algebra: symmetric matrices, eigendecomposition,
//! PSD square roots, tridiagonal and SPD solves.
//!
//! Dense storage and the symmetric eigensolver come from `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance below which negative eigenvalues are treated as roundoff.
pub const PSD_TOLERANCE: f64 = 1e-10;

const EIG_MAX_ITER: usize = 10_000;

/// A real symmetric matrix. Construction symmetrizes as `(A + Aᵀ) / 2`, so
/// `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::param(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("matrix has non-finite entries"));
        }
        let n = m.nrows();
        let mut inner = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (inner[(i, j)] + inner[(j, i)]);
                inner[(i, j)] = avg;
                inner[(j, i)] = avg;
            }
        }
        Ok(Self { inner })
    }

    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::param(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        Self::from_matrix(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            inner: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (&self.inner * DVector::from_column_slice(x)).iter().copied().collect()
    }
}

/// Eigendecomposition `A = V Λ Vᵀ` with eigenvalues sorted ascending and the
/// eigenvectors stored as the columns of `V`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub fn sym_eig(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.n();
    let eig = SymmetricEigen::try_new(a.inner.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::numeric(format!("symmetric eigensolver did not converge ({n}x{n})")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Principal square root of a PSD matrix. Eigenvalues in `[-tol, 0)` with
/// `tol = 1e-10 · ‖A‖_max` are clamped to zero; anything more negative is an
/// error.
pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.n();
    if n == 0 {
        return Ok(a.clone());
    }
    let eig = sym_eig(a)?;
    let tolerance = PSD_TOLERANCE * a.max_abs();
    let min = eig.eigenvalues[0];
    if min < -tolerance {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tolerance,
        });
    }
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let v = &eig.eigenvectors;
    let s = DMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| v[(i, k)] * roots[k] * v[(j, k)]).sum::<f64>()
    });
    SymMatrix::from_matrix(s)
}

/// Thomas algorithm for `T x = rhs` with sub-diagonal `lower`, diagonal
/// `diag` and super-diagonal `upper` (`lower[i]` couples rows `i + 1` and `i`).
pub fn solve_tridiag(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || lower.len() + 1 != n.max(1) || upper.len() + 1 != n.max(1) {
        return Err(Error::param(format!(
            "tridiagonal shape mismatch: diag {n}, lower {}, upper {}, rhs {}",
            lower.len(),
            upper.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::numeric("zero pivot in tridiagonal solve at row 0"));
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::numeric(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky, with one
/// step of iterative refinement.
pub fn solve_spd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n() {
        return Err(Error::param("right-hand side length does not match matrix"));
    }
    let chol = a
        .inner
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("matrix is not positive definite (Cholesky failed)"))?;
    let b = DVector::from_column_slice(b);
    let mut x = chol.solve(&b);
    let residual = &b - &a.inner * &x;
    x += chol.solve(&residual);
    Ok(x.iter().copied().collect())
}

/// Inverse of a symmetric positive definite matrix, refined once by
/// `X ← X + X (I - A X)`.
pub fn inverse_spd(a: &SymMatrix) -> Result<SymMatrix> {
    let chol = a
        .inner
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("matrix is not positive definite (Cholesky failed)"))?;
    let x = chol.inverse();
    let n = a.n();
    let residual = DMatrix::identity(n, n) - &a.inner * &x;
    SymMatrix::from_matrix(&x + &x * residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_sym(rng: &mut Rng, n: usize) -> SymMatrix {
        let entries: Vec<f64> = (0..n * n).map(|_| rng.standard_normal()).collect();
        SymMatrix::from_row_major(n, &entries).unwrap()
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn construction_symmetrizes_exactly() {
        let m = SymMatrix::from_row_major(2, &[1.0, 0.3, 0.1, 2.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(SymMatrix::from_row_major(2, &[1.0, 2.0, 3.0]).is_err());
        assert!(SymMatrix::from_row_major(1, &[f64::NAN]).is_err());
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = sym_eig(&SymMatrix::identity(4)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));

        let d = 6;
        let diag: Vec<f64> = (1..=d).map(|i| 1.0 / i as f64).collect();
        let e = sym_eig(&SymMatrix::from_diagonal(&diag)).unwrap();
        let mut want = diag.clone();
        want.sort_by(f64::total_cmp);
        for (got, want) in e.eigenvalues.iter().zip(&want) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_reconstruction_random() {
        let mut rng = Rng::new(42);
        for _ in 0..20 {
            let a = random_sym(&mut rng, 5);
            let e = sym_eig(&a).unwrap();
            let v = &e.eigenvectors;
            let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&e.eigenvalues));
            let residual = max_abs(&(a.as_matrix() * v - v * &lambda));
            assert!(residual <= 1e-10 * a.max_abs(), "residual {residual}");
            let ortho = max_abs(&(v.transpose() * v - DMatrix::identity(5, 5)));
            assert!(ortho <= 1e-10, "orthogonality {ortho}");
        }
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let s = sym_sqrt(&SymMatrix::identity(3)).unwrap();
        assert!(max_abs(&(s.as_matrix() - DMatrix::identity(3, 3))) < 1e-12);
        let s = sym_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((s.get(1, 1) - 3.0).abs() < 1e-12);
        assert!(s.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back_for_gram_matrices() {
        let mut rng = Rng::new(7);
        for n in [2, 4, 7] {
            let b = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
            let a = SymMatrix::from_matrix(b.transpose() * &b).unwrap();
            let s = sym_sqrt(&a).unwrap();
            let err = max_abs(&(s.as_matrix() * s.as_matrix() - a.as_matrix()));
            assert!(err <= 1e-8 * a.max_abs(), "n={n} err={err}");
        }
    }

    #[test]
    fn sqrt_rejects_indefinite_and_clamps_roundoff() {
        let err = sym_sqrt(&SymMatrix::from_diagonal(&[1.0, -0.5])).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
        let s = sym_sqrt(&SymMatrix::from_diagonal(&[1.0, -1e-13])).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
    }

    #[test]
    fn tridiag_identity_and_hand_solution() {
        let x = solve_tridiag(&[0.0, 0.0], &[1.0, 1.0, 1.0], &[0.0, 0.0], &[3.0, -1.0, 2.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 2.0]);

        // [2 1 0; 1 3 1; 0 1 2] x = [3, 5, 3] has solution x = [1, 1, 1].
        let x = solve_tridiag(&[1.0, 1.0], &[2.0, 3.0, 2.0], &[1.0, 1.0], &[3.0, 5.0, 3.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // [4 -1 0; -1 4 -1; 0 -1 4] x = [1, 2, 3] solved by hand: x = (13, 24, 27) / 28.
        let x = solve_tridiag(&[-1.0, -1.0], &[4.0, 4.0, 4.0], &[-1.0, -1.0], &[1.0, 2.0, 3.0]).unwrap();
        let want = [13.0 / 28.0, 24.0 / 28.0, 27.0 / 28.0];
        for (g, w) in x.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn tridiag_random_dominant_residual() {
        let mut rng = Rng::new(9);
        let n = 50;
        let lower: Vec<f64> = (0..n - 1).map(|_| rng.standard_normal()).collect();
        let upper: Vec<f64> = (0..n - 1).map(|_| rng.standard_normal()).collect();
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                let off = if i > 0 { lower[i - 1].abs() } else { 0.0 } + if i + 1 < n { upper[i].abs() } else { 0.0 };
                off + 1.0 + rng.uniform()
            })
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let x = solve_tridiag(&lower, &diag, &upper, &rhs).unwrap();
        let rhs_norm = rhs.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            let mut tx = diag[i] * x[i];
            if i > 0 {
                tx += lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                tx += upper[i] * x[i + 1];
            }
            assert!((tx - rhs[i]).abs() <= 1e-10 * rhs_norm);
        }
    }

    #[test]
    fn tridiag_zero_pivot_and_shape_errors() {
        assert!(matches!(
            solve_tridiag(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            solve_tridiag(&[1.0], &[1.0, 1.0], &[], &[1.0, 1.0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn spd_solve_and_inverse() {
        let a = SymMatrix::from_row_major(2, &[4.0, 1.0, 1.0, 3.0]).unwrap();
        let x = solve_spd(&a, &[1.0, 2.0]).unwrap();
        let ax = a.mul_vec(&x);
        assert!((ax[0] - 1.0).abs() < 1e-12 && (ax[1] - 2.0).abs() < 1e-12);
        let inv = inverse_spd(&a).unwrap();
        let prod = a.as_matrix() * inv.as_matrix();
        assert!(max_abs(&(prod - DMatrix::identity(2, 2))) < 1e-12);
        assert!(solve_spd(&SymMatrix::from_diagonal(&[1.0, -1.0]), &[1.0, 1.0]).is_err());
    }
}
