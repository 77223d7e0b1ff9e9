//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::scalar::{c, Scalar};

/// Spectral radius of a square matrix via its complex eigenvalues.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    assert_eq!(m.nrows(), m.ncols(), "spectral_radius needs a square matrix");
    if m.nrows() == 0 {
        return T::zero();
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|e| e.modulus())
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// Solve the discrete Lyapunov equation `X = A X Aᵀ + W` by vectorization:
/// `(I − A⊗A) vec(X) = vec(W)`. Returns `None` when the closed loop is not
/// Schur stable (system singular or solution not finite).
pub fn solve_discrete_lyapunov<T: Scalar>(a: &DMatrix<T>, w: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(w.nrows(), n);
    assert_eq!(w.ncols(), n);
    let kron = a.kronecker(a);
    let sys = DMatrix::<T>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(w.as_slice());
    let x = sys.lu().solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = DMatrix::from_column_slice(n, n, x.as_slice());
    // Symmetrize: the exact solution is symmetric for symmetric W.
    let half = c::<T>(0.5);
    let outt = out.transpose();
    out = (out + outt) * half;
    Some(out)
}

/// Frobenius norm of the difference of two matrices.
pub fn frob_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    (a - b).norm()
}
