//! Small dense linear-algebra helpers. Factorizations go through `faer`;
//! products stay in `ndarray`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = Array2<Complex64>;

pub fn to_complex(m: &Array2<f64>) -> CMatrix {
    m.mapv(|v| Complex64::new(v, 0.0))
}

fn to_faer<T>(m: &Array2<T>) -> Mat<T>
where
    T: Copy + faer::traits::ComplexField,
{
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer<T: Copy + faer::traits::ComplexField>(m: &Mat<T>) -> Array2<T> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn linalg_error(what: &str, err: impl std::fmt::Debug) -> Error {
    Error::Linalg(format!("{what}: {err:?}"))
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let evd = to_faer(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| linalg_error("symmetric eigendecomposition", e))?;
    let s = evd.S().column_vector();
    let values = Array1::from_shape_fn(m.nrows(), |i| s[i]);
    let u = evd.U();
    let vectors = Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| u[(i, j)]);
    Ok((values, vectors))
}

pub fn sym_eigenvalues(m: &Array2<f64>) -> Result<Array1<f64>> {
    let values = to_faer(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| linalg_error("symmetric eigenvalues", e))?;
    Ok(Array1::from(values))
}

fn all_finite(m: &Mat<Complex64>) -> bool {
    (0..m.ncols())
        .all(|j| (0..m.nrows()).all(|i| m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()))
}

/// Inverse through LU with partial pivoting. Non-finite output counts as failure.
pub fn inverse(m: &CMatrix) -> Option<CMatrix> {
    let lu = to_faer(m).partial_piv_lu();
    let inv = lu.inverse();
    if all_finite(&inv) {
        Some(from_faer(&inv))
    } else {
        None
    }
}

/// `tr(A B) = sum_ij A_ij B_ji`.
#[cfg(test)]
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    Zip::from(a).and(&b.t()).for_each(|&x, &y| acc += x * y);
    acc
}

/// `sum_ij A_ij B_ij`, which is `tr(A Bᵀ)`.
pub fn frobenius_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| acc += x * y);
    acc
}

/// `tr(A B)` for real symmetric `A`.
pub fn trace_of_symmetric_product(a: &Array2<f64>, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    Zip::from(a).and(b).for_each(|&x, &y| acc += y * x);
    acc
}

/// `A X` for real `A`, as two real products.
pub fn real_times_complex(a: &Array2<f64>, x: &CMatrix) -> CMatrix {
    let a = to_faer(a);
    let re = &a * Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)].re);
    let im = &a * Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)].im);
    Array2::from_shape_fn((a.nrows(), x.ncols()), |(i, j)| {
        Complex64::new(re[(i, j)], im[(i, j)])
    })
}

/// `A B` for real matrices.
pub fn real_product(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    from_faer(&(to_faer(a) * to_faer(b)))
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diag().sum()
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues(m: &CMatrix) -> Result<Array1<Complex64>> {
    let values = to_faer(m)
        .eigenvalues()
        .map_err(|e| linalg_error("eigenvalues", e))?;
    Ok(Array1::from(values))
}

/// Eigenvalues and right eigenvectors (as columns) of a general complex matrix.
pub fn eigen(m: &CMatrix) -> Result<(Array1<Complex64>, CMatrix)> {
    let evd = to_faer(m)
        .eigen()
        .map_err(|e| linalg_error("eigendecomposition", e))?;
    let s = evd.S().column_vector();
    let values = Array1::from_shape_fn(m.nrows(), |i| s[i]);
    let u = evd.U();
    let vectors = Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| u[(i, j)]);
    Ok((values, vectors))
}

/// Solves the small dense system `a x = b`.
pub fn solve(a: &CMatrix, b: &Array1<Complex64>) -> Option<Array1<Complex64>> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = to_faer(a).partial_piv_lu().solve(&rhs);
    if !all_finite(&x) {
        return None;
    }
    // A singular pivot shows up as a huge residual rather than a failure.
    let x = Array1::from_shape_fn(b.len(), |i| x[(i, 0)]);
    let residual = (a.dot(&x) - b).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    (residual <= 1e-8 * scale.max(f64::MIN_POSITIVE)).then_some(x)
}

/// Symmetric PSD square root through the eigen-decomposition.
pub fn psd_sqrt(eigenvalues: &Array1<f64>, vectors: &Array2<f64>) -> Array2<f64> {
    let scaled = vectors * &eigenvalues.mapv(|l| l.max(0.0).sqrt());
    scaled.dot(&vectors.t())
}

pub fn max_abs(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn real_times_complex_matches_complex_product() {
        let a = ndarray::array![[1.0, 2.0], [3.0, -1.0]];
        let x = ndarray::array![
            [Complex64::new(0.5, 1.0), Complex64::new(-2.0, 0.25)],
            [Complex64::new(1.5, -1.0), Complex64::new(0.0, 3.0)]
        ];
        let expected = to_complex(&a).dot(&x);
        let got = real_times_complex(&a, &x);
        for (e, g) in expected.iter().zip(got.iter()) {
            assert!((e - g).norm() < 1e-14);
        }
    }

    #[test]
    fn trace_of_product_matches_dot() {
        let a = to_complex(&array![[1.0, 2.0], [3.0, 4.0]]);
        let b = to_complex(&array![[0.5, -1.0], [2.0, 1.5]]);
        let direct = trace(&a.dot(&b));
        assert!((trace_of_product(&a, &b) - direct).norm() < 1e-14);
    }

    /// Guards against BLAS/LAPACK builds that go wrong past some size.
    #[test]
    fn large_products_and_eigenvectors_are_accurate() {
        for &n in &[128usize, 256, 320] {
            let a =
                Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5);
            let b =
                Array2::from_shape_fn((n, n), |(i, j)| ((i * 5 + j * 3) % 11) as f64 / 11.0 - 0.5);
            let c = a.dot(&b);
            for &(i, j) in &[(0, 0), (n - 1, n / 2), (n / 3, n - 1), (n - 1, n - 1)] {
                let direct: f64 = (0..n).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((direct - c[(i, j)]).abs() < 1e-10, "n={n} ({i},{j})");
            }
            let s = &a + &a.t();
            let (w, v) = sym_eigen(&s).unwrap();
            let residual = (s.dot(&v) - &v * &w)
                .iter()
                .fold(0.0_f64, |m, x| m.max(x.abs()));
            assert!(residual < 1e-10, "n={n} residual {residual:e}");

            let m = to_complex(&s).mapv(|x| x * 0.01) + CMatrix::eye(n) * Complex64::new(3.0, 1.0);
            let inv = inverse(&m).unwrap();
            let err = (m.dot(&inv) - CMatrix::eye(n))
                .iter()
                .fold(0.0_f64, |acc, x| acc.max(x.norm()));
            assert!(err < 1e-10, "n={n} inverse error {err:e}");
        }
    }

    #[test]
    fn solve_rejects_singular_systems() {
        let a = to_complex(&array![[1.0, 2.0], [2.0, 4.0]]);
        let b = Array1::from(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        assert!(solve(&a, &b).is_none());
        let a = to_complex(&array![[2.0, 0.0], [0.0, 4.0]]);
        let x = solve(&a, &b).unwrap();
        assert!((x[1] - Complex64::new(0.0, 0.25)).norm() < 1e-15);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = array![[2.0, 0.5], [0.5, 1.0]];
        let (l, v) = sym_eigen(&m).unwrap();
        let r = psd_sqrt(&l, &v);
        let back = r.dot(&r);
        for (x, y) in back.iter().zip(m.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
