//! Spectral radii and Perron vectors of small nonnegative matrices, with the
//! domination and Cauchy-Schwarz comparisons between radii.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

const CERTIFICATE_TOL: f64 = 1e-10;
const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    FullEigen,
    PowerIteration,
    /// Acyclic pattern: `ρ = 0` without any eigensolve.
    Nilpotent,
}

/// Spectral radius of a nonnegative matrix with its left Perron vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusCertificate {
    pub rows: usize,
    pub cols: usize,
    pub rho: f64,
    /// Nonnegative, sums to one.
    pub left_perron: Vec<f64>,
    pub method: RadiusMethod,
}

impl RadiusCertificate {
    /// `‖vᵀM − ρvᵀ‖_∞`.
    pub fn defect(&self, m: &Array2<f64>) -> f64 {
        let v = Array1::from(self.left_perron.clone());
        let lhs = v.dot(m);
        lhs.iter()
            .zip(v.iter())
            .map(|(l, v)| (l - self.rho * v).abs())
            .fold(0.0, f64::max)
    }
}

/// Largest modulus among the eigenvalues of a square complex matrix.
pub fn spectral_radius(m: &Array2<Complex64>) -> Result<f64> {
    check_square(m.nrows(), m.ncols())?;
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let eig = linalg::eigenvalues(m)?;
    Ok(eig.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

pub fn spectral_radius_real(m: &Array2<f64>) -> Result<f64> {
    spectral_radius(&linalg::to_complex(m))
}

fn check_square(rows: usize, cols: usize) -> Result<()> {
    if rows != cols {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {rows}x{cols}"
        )));
    }
    Ok(())
}

fn check_nonnegative(m: &Array2<f64>, name: &str) -> Result<()> {
    if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "{name} has negative entry {v} at ({i}, {j})"
        )));
    }
    Ok(())
}

/// Left eigenvector for `ρ(m)` of an entrywise-nonnegative matrix, ℓ1-normalized.
pub fn perron_left_vector(m: &Array2<f64>) -> Result<RadiusCertificate> {
    check_square(m.nrows(), m.ncols())?;
    check_nonnegative(m, "matrix")?;
    let k = m.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }

    if let Some(cert) = perron_nilpotent(m) {
        return Ok(cert);
    }
    if let Some(cert) = perron_by_eigen(m)? {
        return Ok(cert);
    }
    perron_by_power_iteration(m)
}

/// An acyclic sparsity pattern means `ρ = 0` exactly; the zero rows then span
/// nonnegative left null vectors. Power iteration only converges like `1/t` here.
fn perron_nilpotent(m: &Array2<f64>) -> Option<RadiusCertificate> {
    let k = m.nrows();
    let pattern = m.mapv(|x| x > 0.0);
    let mut power = pattern.clone();
    for _ in 1..k {
        power = Array2::from_shape_fn((k, k), |(i, j)| {
            (0..k).any(|l| power[(i, l)] && pattern[(l, j)])
        });
    }
    if power.iter().any(|&x| x) {
        return None;
    }
    let zero_rows: Vec<bool> = m
        .rows()
        .into_iter()
        .map(|r| r.iter().all(|&x| x == 0.0))
        .collect();
    let count = zero_rows.iter().filter(|&&z| z).count() as f64;
    Some(RadiusCertificate {
        rows: k,
        cols: k,
        rho: 0.0,
        left_perron: zero_rows
            .iter()
            .map(|&z| if z { 1.0 / count } else { 0.0 })
            .collect(),
        method: RadiusMethod::Nilpotent,
    })
}

fn perron_by_eigen(m: &Array2<f64>) -> Result<Option<RadiusCertificate>> {
    let k = m.nrows();
    let transposed = linalg::to_complex(&m.t().to_owned());
    let (values, vectors) = linalg::eigen(&transposed)?;
    // The Perron root is real and dominates the real part of every eigenvalue.
    let mut best = 0;
    for i in 1..k {
        if values[i].re > values[best].re {
            best = i;
        }
    }
    let rho = values[best].re.max(0.0);
    let column = vectors.column(best);
    let pivot = column
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() == 0.0 {
        return Ok(None);
    }
    let phase = pivot / pivot.norm();
    let mut v: Vec<f64> = column.iter().map(|x| (x / phase).re).collect();
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if v.iter().any(|x| *x < -CLAMP_TOL * scale) {
        return Ok(None);
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0) {
        return Ok(None);
    }
    v.iter_mut().for_each(|x| *x /= sum);
    let cert = RadiusCertificate {
        rows: k,
        cols: k,
        rho,
        left_perron: v,
        method: RadiusMethod::FullEigen,
    };
    if cert.defect(m) <= CERTIFICATE_TOL * rho.max(f64::MIN_POSITIVE) || rho == 0.0 {
        Ok(Some(cert))
    } else {
        Ok(None)
    }
}

/// Power iteration on `(M + I)ᵀ` from the uniform vector; iterates stay nonnegative.
fn perron_by_power_iteration(m: &Array2<f64>) -> Result<RadiusCertificate> {
    let k = m.nrows();
    let shifted = m + &Array2::<f64>::eye(k);
    let mut v = Array1::from_elem(k, 1.0 / k as f64);
    let mut rho = 0.0;
    for _ in 0..100_000 {
        let next = v.dot(&shifted);
        let sum = next.sum();
        let next = next / sum;
        let diff = (&next - &v).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        v = next;
        rho = sum - 1.0;
        if diff < 1e-15 {
            break;
        }
    }
    let cert = RadiusCertificate {
        rows: k,
        cols: k,
        rho: rho.max(0.0),
        left_perron: v.to_vec(),
        method: RadiusMethod::PowerIteration,
    };
    Ok(cert)
}

/// Radii involved in the comparison `ρ(C) ≤ √(ρ(A) ρ(B))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CsRadii {
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_c: f64,
    pub holds: bool,
}

/// Checks `ρ(C) ≤ √(ρ(A)ρ(B))` for nonnegative `A`, `B` and `|C_ij| ≤ √(A_ij B_ij)`.
pub fn check_cs_radius(a: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>) -> Result<CsRadii> {
    check_square(a.nrows(), a.ncols())?;
    if a.dim() != b.dim() || a.dim() != c.dim() {
        return Err(Error::InvalidArgument(
            "matrices must share their shape".into(),
        ));
    }
    check_nonnegative(a, "A")?;
    check_nonnegative(b, "B")?;
    for ((i, j), &cij) in c.indexed_iter() {
        let bound = (a[(i, j)] * b[(i, j)]).sqrt();
        if cij.abs() > bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "|C_{i}{j}| = {} exceeds sqrt(A_{i}{j} B_{i}{j}) = {bound}",
                cij.abs()
            )));
        }
    }
    let rho_a = spectral_radius_real(a)?;
    let rho_b = spectral_radius_real(b)?;
    let rho_c = spectral_radius_real(c)?;
    Ok(CsRadii {
        rho_a,
        rho_b,
        rho_c,
        holds: rho_c <= (rho_a * rho_b).sqrt() + CERTIFICATE_TOL,
    })
}

/// Checks `ρ(A) ≤ ρ(B)` for `|A_ij| ≤ B_ij`; returns both radii.
pub fn check_dominated_radius(a: &Array2<f64>, b: &Array2<f64>) -> Result<(f64, f64, bool)> {
    check_square(a.nrows(), a.ncols())?;
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(
            "matrices must share their shape".into(),
        ));
    }
    for ((i, j), &aij) in a.indexed_iter() {
        if aij.abs() > b[(i, j)] {
            return Err(Error::InvalidArgument(format!(
                "|A_{i}{j}| = {} exceeds B_{i}{j} = {}",
                aij.abs(),
                b[(i, j)]
            )));
        }
    }
    let rho_a = spectral_radius_real(a)?;
    let rho_b = spectral_radius_real(b)?;
    Ok((rho_a, rho_b, rho_a <= rho_b + CERTIFICATE_TOL))
}
