//! First- and second-order deterministic equivalents, and the trace and
//! log-det functionals assembled from them.

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::{solve_g, ResolventPoint, SolverOptions};
use crate::linalg::{self, CMatrix};
use crate::model::ModelParams;
use crate::nonneg::spectral_radius;
use crate::quadrature;
use crate::resolvent::{self, InnerInverse};

const RADIUS_WARN_MARGIN: f64 = 1e-8;

/// `Q̄_z` (as its `k` block values `c0 g_a`) and `Q̃̄_z` (dense).
#[derive(Debug, Clone)]
pub struct EquivalentSet {
    pub z: Complex64,
    pub q_bar_diag: Vec<Complex64>,
    pub q_tilde_bar: CMatrix,
    pub source: ResolventPoint,
}

impl EquivalentSet {
    /// `(1/n) tr Q̄`.
    pub fn normalized_trace(&self, params: &ModelParams) -> Complex64 {
        self.q_bar_diag
            .iter()
            .zip(params.ratios())
            .map(|(q, &c)| q * c)
            .sum()
    }
}

fn near_support(z: Complex64, detail: impl Into<String>) -> Error {
    Error::NearSupport {
        z,
        detail: detail.into(),
    }
}

fn inner_inverse(point: &ResolventPoint, params: &ModelParams) -> Result<InnerInverse> {
    check_point(point, params)?;
    match resolvent::evaluate_inner(params, &point.g, point.z) {
        Ok(eval) => Ok(eval.inverse),
        Err(Error::Singular { z }) => Err(near_support(z, "I + sum c_a g_a C_a is singular")),
        Err(e) => Err(e),
    }
}

fn check_point(point: &ResolventPoint, params: &ModelParams) -> Result<()> {
    if point.g.len() != params.k() {
        return Err(Error::InvalidArgument(format!(
            "point has {} classes, model has {}",
            point.g.len(),
            params.k()
        )));
    }
    Ok(())
}

pub fn first_order(point: &ResolventPoint, params: &ModelParams) -> Result<EquivalentSet> {
    let z = point.z;
    let x = inner_inverse(point, params)?;
    let c0 = params.c0();
    let q_tilde_bar = x.to_dense().mapv(|v| -v / z);

    let inv_p = 1.0 / params.p() as f64;
    for a in 0..params.k() {
        let t = linalg::trace_of_symmetric_product(params.covariance(a), &q_tilde_bar) * inv_p;
        let expected = point.g_tilde[a];
        if (t - expected).norm() > 1e-10 * expected.norm().max(1.0) {
            return Err(Error::Consistency {
                z,
                detail: format!("(1/p) tr C_{a} Q̃̄ = {t} but g̃_{a} = {expected}"),
            });
        }
    }

    Ok(EquivalentSet {
        z,
        q_bar_diag: point.g.iter().map(|g| g * c0).collect(),
        q_tilde_bar,
        source: point.clone(),
    })
}

/// `Ω(z1, z2)`, `R(z1, z2)` and `ρ(Ω)`.
#[derive(Debug, Clone)]
pub struct SecondOrderSet {
    pub z1: Complex64,
    pub z2: Complex64,
    pub omega: Array2<Complex64>,
    pub r: Array2<Complex64>,
    pub spectral_radius_omega: f64,
}

impl SecondOrderSet {
    /// Builds `R = diag(c) (I − Ω)^{-1} Ω diag(c)^{-1}` from a given `Ω`.
    pub fn from_omega(
        z1: Complex64,
        z2: Complex64,
        omega: Array2<Complex64>,
        params: &ModelParams,
    ) -> Result<Self> {
        let k = params.k();
        if omega.dim() != (k, k) {
            return Err(Error::InvalidArgument(format!(
                "Ω is {:?}, expected {k}x{k}",
                omega.dim()
            )));
        }
        let rho = spectral_radius(&omega)?;
        if rho >= 1.0 {
            return Err(near_support(
                z1,
                format!("ρ(Ω(z1, z2)) = {rho} ≥ 1 with z2 = {z2}"),
            ));
        }
        if rho >= 1.0 - RADIUS_WARN_MARGIN {
            log::warn!("ρ(Ω({z1}, {z2})) = {rho} is within {RADIUS_WARN_MARGIN:e} of 1");
        }
        let i_minus = CMatrix::eye(k) - &omega;
        let inv = linalg::inverse(&i_minus)
            .ok_or_else(|| near_support(z1, format!("I − Ω(z1, z2) is singular with z2 = {z2}")))?;
        let m = inv.dot(&omega);
        let c = params.ratios();
        let r = Array2::from_shape_fn((k, k), |(a, b)| m[(a, b)] * (c[a] / c[b]));
        Ok(SecondOrderSet {
            z1,
            z2,
            omega,
            r,
            spectral_radius_omega: rho,
        })
    }

    /// `{"z1":[re,im],"z2":[re,im],"omega":[[re,im]…],"r":[[re,im]…],"rho_omega":ρ}`,
    /// matrices flattened row-major.
    pub fn to_json(&self) -> serde_json::Value {
        let pair = |v: &Complex64| [v.re, v.im];
        let flat = |m: &Array2<Complex64>| m.iter().map(pair).collect::<Vec<_>>();
        serde_json::json!({
            "z1": pair(&self.z1),
            "z2": pair(&self.z2),
            "omega": flat(&self.omega),
            "r": flat(&self.r),
            "rho_omega": self.spectral_radius_omega,
        })
    }
}

impl Serialize for SecondOrderSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

pub fn second_order(
    point1: &ResolventPoint,
    point2: &ResolventPoint,
    params: &ModelParams,
) -> Result<SecondOrderSet> {
    let x1 = inner_inverse(point1, params)?;
    let x2 = inner_inverse(point2, params)?;
    let traces = resolvent::pair_traces(params, &x1, &x2);
    let omega = resolvent::omega_from_traces(params, &point1.g, &point2.g, &traces);
    SecondOrderSet::from_omega(point1.z, point2.z, omega, params)
}

/// `1 − ((Im z)² / (|z| (|Im z| + C_max)))²`, an upper bound on `ρ(Ω(z, z̄))`.
pub fn omega_radius_bound(z: Complex64, params: &ModelParams) -> f64 {
    let y = z.im.abs();
    let ratio = y * y / (z.norm() * (y + params.c_max()));
    1.0 - ratio * ratio
}

fn check_pair(
    so: &SecondOrderSet,
    eq1: &EquivalentSet,
    eq2: &EquivalentSet,
    a: usize,
    params: &ModelParams,
) -> Result<()> {
    let k = params.k();
    if a >= k {
        return Err(Error::InvalidArgument(format!(
            "class index {a} out of range (k = {k})"
        )));
    }
    if so.omega.dim() != (k, k) || eq1.q_bar_diag.len() != k || eq2.q_bar_diag.len() != k {
        return Err(Error::InvalidArgument(
            "equivalents come from a different model".into(),
        ));
    }
    if so.z1 != eq1.z || so.z2 != eq2.z {
        return Err(Error::InvalidArgument(format!(
            "second-order set is at ({}, {}), first-order sets at ({}, {})",
            so.z1, so.z2, eq1.z, eq2.z
        )));
    }
    Ok(())
}

/// Block coefficients of the equivalent of `Q_{z1} D_a Q_{z2}`:
/// `c0² g_b(z1) g_b(z2) (δ_ab + R_ab)` on the diagonal block of class `b`.
pub fn q_da_q_equivalent(
    so: &SecondOrderSet,
    eq1: &EquivalentSet,
    eq2: &EquivalentSet,
    a: usize,
    params: &ModelParams,
) -> Result<Vec<Complex64>> {
    check_pair(so, eq1, eq2, a, params)?;
    Ok((0..params.k())
        .map(|b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            eq1.q_bar_diag[b] * eq2.q_bar_diag[b] * (so.r[(a, b)] + delta)
        })
        .collect())
}

/// Equivalent of `Q̃_{z1} C_a Q̃_{z2}`: `Q̃̄_{z1} (C_a + Σ_b R_ba C_b) Q̃̄_{z2}`.
pub fn qt_ca_qt_equivalent(
    so: &SecondOrderSet,
    eq1: &EquivalentSet,
    eq2: &EquivalentSet,
    a: usize,
    params: &ModelParams,
) -> Result<CMatrix> {
    check_pair(so, eq1, eq2, a, params)?;
    let mut middle = linalg::to_complex(params.covariance(a));
    for b in 0..params.k() {
        middle.scaled_add(so.r[(b, a)], &linalg::to_complex(params.covariance(b)));
    }
    Ok(eq1.q_tilde_bar.dot(&middle).dot(&eq2.q_tilde_bar))
}

/// Equivalent of `Q̃_{z1} W D_a Wᵀ Q̃_{z2}`:
/// `z1 z2 c0 c_a g_a(z1) g_a(z2)` times the `Q̃ C_a Q̃` equivalent.
pub fn qt_w_da_wt_qt_equivalent(
    so: &SecondOrderSet,
    eq1: &EquivalentSet,
    eq2: &EquivalentSet,
    a: usize,
    params: &ModelParams,
) -> Result<CMatrix> {
    let base = qt_ca_qt_equivalent(so, eq1, eq2, a, params)?;
    let c0 = params.c0();
    let scale = so.z1 * so.z2 * (c0 * params.ratios()[a]) * eq1.source.g[a] * eq2.source.g[a];
    Ok(base.mapv(|v| v * scale))
}

fn check_class_trace_args(
    z: f64,
    a: usize,
    point: &ResolventPoint,
    params: &ModelParams,
) -> Result<()> {
    if !(z < 0.0) {
        return Err(Error::InvalidArgument(format!("z = {z} must be negative")));
    }
    if a >= params.k() {
        return Err(Error::InvalidArgument(format!(
            "class index {a} out of range"
        )));
    }
    check_point(point, params)?;
    if (point.z - Complex64::new(z, 0.0)).norm() > 1e-12 * z.abs() {
        return Err(Error::InvalidArgument(format!(
            "point was solved at {}, not at z = {z}",
            point.z
        )));
    }
    Ok(())
}

/// Equivalent of `tr W_aᵀ (W Wᵀ − z I)^{-1} W_a` at `z = −σ² < 0`:
/// `n_a (1 + z c0 g_a(z))`.
pub fn class_trace_functional(
    z: f64,
    a: usize,
    point: &ResolventPoint,
    params: &ModelParams,
) -> Result<f64> {
    check_class_trace_args(z, a, point, params)?;
    let n_a = params.class_sizes()[a] as f64;
    Ok(n_a * (1.0 + z * params.c0() * point.g[a].re))
}

/// The same functional through `g̃`: `n_a g̃_a / (1 + g̃_a)`.
pub fn class_trace_functional_via_g_tilde(
    z: f64,
    a: usize,
    point: &ResolventPoint,
    params: &ModelParams,
) -> Result<f64> {
    check_class_trace_args(z, a, point, params)?;
    let n_a = params.class_sizes()[a] as f64;
    let gt = point.g_tilde[a].re;
    Ok(n_a * gt / (1.0 + gt))
}

/// Deterministic equivalent of `log det(W Wᵀ + σ² I_p)`.
///
/// Integrates `d/dt log det(WWᵀ + tI) = tr(WWᵀ + tI)^{-1} ≈ tr Q̃̄_{−t}`:
///
/// `F(σ²) = p log σ² + ∫_{σ²}^{T} (p/t − tr Q̃̄_{−t}) dt + s₁/T`
///
/// with `s₁ = Σ_a n_a (1/p) tr C_a` the equivalent of `tr WWᵀ` and
/// `T = 10³ (edge + σ²)`. The last term is the first-order expansion of
/// `log det(I + WWᵀ/T)`; what it drops is `O(‖WWᵀ‖²/T²)`.
pub fn log_det_functional(sigma2: f64, params: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 = {sigma2} must be positive"
        )));
    }
    let p = params.p() as f64;
    let t_big = 1e3 * (params.edge_bound() + sigma2);
    let s1: f64 = (0..params.k())
        .map(|a| params.class_sizes()[a] as f64 * params.covariance(a).diag().sum() / p)
        .sum();

    // With t = e^u the integrand becomes p − tr X(−t).
    let integrand = |u: f64| -> Result<f64> {
        let t = u.exp();
        let z = Complex64::new(-t, 0.0);
        let point = solve_g(z, params, opts, None)?;
        let inner = resolvent::evaluate_inner(params, &point.g, z)?;
        Ok(p - inner.inverse.trace().re)
    };
    let integral = quadrature::gauss_kronrod(integrand, sigma2.ln(), t_big.ln(), 1e-6 * p)?;
    Ok(p * sigma2.ln() + integral + s1 / t_big)
}
