//! The deterministic inner inverse `X = (I_p + sum_b c_b g_b C_b)^{-1}` and the
//! trace functionals built on it. `Q̃̄_z = -X / z`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::model::ModelParams;

/// `X`, stored as its diagonal when every covariance is diagonal.
#[derive(Debug, Clone)]
pub(crate) enum InnerInverse {
    Diagonal(Array1<Complex64>),
    Dense(CMatrix),
}

impl InnerInverse {
    pub fn to_dense(&self) -> CMatrix {
        match self {
            InnerInverse::Diagonal(d) => Array2::from_diag(d),
            InnerInverse::Dense(m) => m.clone(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        match self {
            InnerInverse::Diagonal(d) => d.sum(),
            InnerInverse::Dense(m) => linalg::trace(m),
        }
    }
}

/// `X` together with `t_a = (1/p) tr C_a X`.
#[derive(Debug, Clone)]
pub(crate) struct InnerEvaluation {
    pub inverse: InnerInverse,
    pub traces: Vec<Complex64>,
}

/// Builds `X` for the coefficient vector `g` and evaluates the class traces.
/// `z` is only used to label a singularity error.
pub(crate) fn evaluate_inner(
    params: &ModelParams,
    g: &[Complex64],
    z: Complex64,
) -> Result<InnerEvaluation> {
    let p = params.p();
    let k = params.k();
    let weights: Vec<Complex64> = g
        .iter()
        .zip(params.ratios())
        .map(|(g_b, &c_b)| g_b * c_b)
        .collect();
    let inv_p = 1.0 / p as f64;

    if params.is_diagonal() {
        let mut x = Array1::from_elem(p, Complex64::new(1.0, 0.0));
        for (b, w) in weights.iter().enumerate() {
            let c = params.covariance(b);
            for i in 0..p {
                x[i] += w * c[(i, i)];
            }
        }
        if x.iter()
            .any(|d| d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite())
        {
            return Err(Error::Singular { z });
        }
        x.mapv_inplace(|d| d.inv());
        let traces = (0..k)
            .map(|a| {
                let c = params.covariance(a);
                (0..p).map(|i| x[i] * c[(i, i)]).sum::<Complex64>() * inv_p
            })
            .collect();
        return Ok(InnerEvaluation {
            inverse: InnerInverse::Diagonal(x),
            traces,
        });
    }

    let mut m = CMatrix::eye(p);
    for (b, w) in weights.iter().enumerate() {
        m.scaled_add(*w, params.complex_covariance(b));
    }
    let x = linalg::inverse(&m).ok_or(Error::Singular { z })?;
    let traces = (0..k)
        .map(|a| {
            if params.is_identity(a) {
                linalg::trace(&x) * inv_p
            } else {
                linalg::trace_of_symmetric_product(params.covariance(a), &x) * inv_p
            }
        })
        .collect();
    Ok(InnerEvaluation {
        inverse: InnerInverse::Dense(x),
        traces,
    })
}

fn left_products(params: &ModelParams, x: &CMatrix) -> Vec<Option<CMatrix>> {
    (0..params.k())
        .map(|a| {
            if params.is_identity(a) {
                None
            } else {
                Some(linalg::real_times_complex(params.covariance(a), x))
            }
        })
        .collect()
}

/// `T_ab = (1/p) tr(C_a X1 C_b X2)`.
pub(crate) fn pair_traces(
    params: &ModelParams,
    x1: &InnerInverse,
    x2: &InnerInverse,
) -> Array2<Complex64> {
    let p = params.p();
    let k = params.k();
    let inv_p = 1.0 / p as f64;
    match (x1, x2) {
        (InnerInverse::Diagonal(d1), InnerInverse::Diagonal(d2)) => {
            Array2::from_shape_fn((k, k), |(a, b)| {
                let ca = params.covariance(a);
                let cb = params.covariance(b);
                (0..p)
                    .map(|i| d1[i] * d2[i] * (ca[(i, i)] * cb[(i, i)]))
                    .sum::<Complex64>()
                    * inv_p
            })
        }
        _ => {
            let same = std::ptr::eq(x1, x2);
            let x1 = x1.to_dense();
            let left1 = left_products(params, &x1);
            let (x2, left2) = if same {
                (None, None)
            } else {
                let x2 = x2.to_dense();
                let left2 = left_products(params, &x2);
                (Some(x2), Some(left2))
            };
            let x2 = x2.as_ref().unwrap_or(&x1);
            let left2 = left2.as_ref().unwrap_or(&left1);
            // tr(Y1 Y2) = <Y1, Y2ᵀ>; transposing once keeps the sums contiguous.
            let right: Vec<CMatrix> = (0..k)
                .map(|b| {
                    left2[b]
                        .as_ref()
                        .unwrap_or(x2)
                        .t()
                        .as_standard_layout()
                        .into_owned()
                })
                .collect();
            Array2::from_shape_fn((k, k), |(a, b)| {
                let y1 = left1[a].as_ref().unwrap_or(&x1);
                linalg::frobenius_product(y1, &right[b]) * inv_p
            })
        }
    }
}

/// `Ω_ab = c0 c_b g_a(z1) g_a(z2) T_ab`, which equals
/// `c0 c_b z1 g_a(z1) z2 g_a(z2) (1/p) tr C_a Q̃̄_{z1} C_b Q̃̄_{z2}`.
pub(crate) fn omega_from_traces(
    params: &ModelParams,
    g1: &[Complex64],
    g2: &[Complex64],
    traces: &Array2<Complex64>,
) -> Array2<Complex64> {
    let c0 = params.c0();
    let c = params.ratios();
    Array2::from_shape_fn((params.k(), params.k()), |(a, b)| {
        g1[a] * g2[a] * traces[(a, b)] * (c0 * c[b])
    })
}
