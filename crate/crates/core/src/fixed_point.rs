//! Solver for the coupled system
//!
//! ```text
//! c0 g_a = -1 / (z (1 + g̃_a)),    g̃_a = -(1/z) (1/p) tr C_a (I_p + Σ_b c_b g_b C_b)^{-1}
//! ```
//!
//! through the map `Ψ(g)_a = -(1/c0) / (z - (1/p) tr C_a (I_p + Σ_b c_b g_b C_b)^{-1})`.
//! Picard steps with adaptive damping keep iterates admissible; once the
//! contraction slows down (near the real axis) the solver switches to Newton
//! steps, whose Jacobian is exactly `Ω(z, z)`. Points close to the real axis
//! are reached by continuation in `Im z`.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelParams;
use crate::resolvent::{self, InnerEvaluation};

const REAL_AXIS_ETA: f64 = 1e-9;
const NEWTON_SWITCH_RESIDUAL: f64 = 5e-2;
const NEWTON_SWITCH_RATIO: f64 = 0.5;
const NEWTON_COOLDOWN: usize = 8;
const ROUNDING_FLOOR: f64 = 1e-12;
const FLOOR_STALL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative sup-norm residual `‖Ψ(g) - g‖ / ‖g‖` at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Picard damping in `(0, 1]`; halved when the residual grows twice in a row.
    pub damping: f64,
    /// Imaginary part where continuation toward the real axis starts.
    pub continuation_start_im: f64,
    /// Allow Newton steps once Picard contraction slows down.
    pub newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 1.0,
            continuation_start_im: 1.0,
            newton: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.continuation_start_im > 0.0 && self.continuation_start_im.is_finite()) {
            return Err(Error::InvalidArgument(
                "continuation_start_im must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solved state of the fixed-point system at one point `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventPoint {
    pub z: Complex64,
    /// `g_a(z)`; `c0 g_a` is the Stieltjes transform of `ν_a`.
    pub g: Vec<Complex64>,
    /// `g̃_a(z) = (1/p) tr C_a Q̃̄_z`.
    pub g_tilde: Vec<Complex64>,
    /// `m_μ(z) = c0 Σ_a c_a g_a(z)`.
    pub m_mu: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

impl ResolventPoint {
    pub fn conj(&self) -> ResolventPoint {
        ResolventPoint {
            z: self.z.conj(),
            g: self.g.iter().map(Complex64::conj).collect(),
            g_tilde: self.g_tilde.iter().map(Complex64::conj).collect(),
            m_mu: self.m_mu.conj(),
            iterations: self.iterations,
            residual: self.residual,
        }
    }

    /// Pointwise density of `ν_a` at `Re z`: `Im(c0 g_a) / π`.
    pub fn class_density(&self, c0: f64, a: usize) -> f64 {
        (c0 * self.g[a].im / std::f64::consts::PI).max(0.0)
    }
}

struct Evaluation {
    image: Vec<Complex64>,
    inner: InnerEvaluation,
}

fn evaluate(params: &ModelParams, z: Complex64, g: &[Complex64]) -> Result<Evaluation> {
    let inner = resolvent::evaluate_inner(params, g, z)?;
    let c0 = params.c0();
    let image = inner.traces.iter().map(|t| -1.0 / (c0 * (z - t))).collect();
    Ok(Evaluation { image, inner })
}

/// One application of `Ψ`.
pub fn psi_step(g: &[Complex64], z: Complex64, params: &ModelParams) -> Result<Vec<Complex64>> {
    if g.len() != params.k() {
        return Err(Error::InvalidArgument(format!(
            "g has {} entries, model has {} classes",
            g.len(),
            params.k()
        )));
    }
    Ok(evaluate(params, z, g)?.image)
}

fn relative_residual(image: &[Complex64], g: &[Complex64]) -> f64 {
    let diff = image
        .iter()
        .zip(g)
        .map(|(f, g)| (f - g).norm())
        .fold(0.0, f64::max);
    diff / (linalg::max_abs(g) + 1e-30)
}

fn admissible(z: Complex64, g: &[Complex64]) -> bool {
    if z.im > 0.0 {
        g.iter().all(|g| g.im >= 0.0 && (z * g).im >= 0.0)
    } else if z.im == 0.0 && z.re < 0.0 {
        g.iter().all(|g| g.re > 0.0)
    } else {
        true
    }
}

struct Converged {
    g: Vec<Complex64>,
    traces: Vec<Complex64>,
    iterations: usize,
    residual: f64,
}

/// Picard/Newton iteration at fixed `z` from `g`.
fn iterate(
    params: &ModelParams,
    z: Complex64,
    mut g: Vec<Complex64>,
    opts: &SolverOptions,
) -> Result<Converged> {
    let k = params.k();
    let c0 = params.c0();
    let c = params.ratios();
    let mut damping = opts.damping;
    let mut prev_residual = f64::INFINITY;
    let mut increases = 0;
    let mut cooldown = 0;
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for it in 1..=opts.max_iter {
        let eval = evaluate(params, z, &g)?;
        residual = relative_residual(&eval.image, &g);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(Converged {
                g,
                traces: eval.inner.traces,
                iterations: it,
                residual,
            });
        }
        if residual < best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            // At the rounding floor further sweeps only shuffle the last bits.
            if best < ROUNDING_FLOOR && since_best >= FLOOR_STALL {
                return Err(Error::NonConvergence {
                    z,
                    iterations: it,
                    residual: best,
                });
            }
        }
        if residual > prev_residual {
            increases += 1;
            cooldown = NEWTON_COOLDOWN;
            if increases >= 2 {
                damping *= 0.5;
                increases = 0;
            }
        } else {
            increases = 0;
            cooldown = cooldown.saturating_sub(1);
        }
        let slow = residual > NEWTON_SWITCH_RATIO * prev_residual;
        prev_residual = residual;

        let mut next = None;
        if opts.newton && cooldown == 0 && (residual < NEWTON_SWITCH_RESIDUAL || slow) {
            let traces = resolvent::pair_traces(params, &eval.inner.inverse, &eval.inner.inverse);
            let jacobian = Array2::from_shape_fn((k, k), |(a, b)| {
                let delta = if a == b { 1.0 } else { 0.0 };
                Complex64::new(delta, 0.0)
                    - eval.image[a] * eval.image[a] * traces[(a, b)] * (c0 * c[b])
            });
            let rhs: Array1<Complex64> = eval.image.iter().zip(&g).map(|(f, g)| f - g).collect();
            if let Some(step) = linalg::solve(&jacobian, &rhs) {
                let candidate: Vec<Complex64> =
                    g.iter().zip(step.iter()).map(|(g, s)| g + s).collect();
                if admissible(z, &candidate) {
                    next = Some(candidate);
                }
            }
        }
        g = next.unwrap_or_else(|| {
            g.iter()
                .zip(&eval.image)
                .map(|(g, f)| g + (f - g) * damping)
                .collect()
        });
    }
    Err(Error::NonConvergence {
        z,
        iterations: opts.max_iter,
        residual,
    })
}

fn asymptote(params: &ModelParams, z: Complex64) -> Vec<Complex64> {
    vec![-1.0 / (params.c0() * z); params.k()]
}

fn finish(params: &ModelParams, z: Complex64, done: Converged) -> Result<ResolventPoint> {
    let c0 = params.c0();
    let g_tilde: Vec<Complex64> = done.traces.iter().map(|t| -t / z).collect();
    let m_mu = done
        .g
        .iter()
        .zip(params.ratios())
        .map(|(g, &c_a)| g * c_a)
        .sum::<Complex64>()
        * c0;
    if z.im > 0.0 {
        let scale = linalg::max_abs(&done.g);
        let margin = 1e-9 * scale;
        for (a, g) in done.g.iter().enumerate() {
            let im_g = g.im;
            let im_zg = (z * g).im;
            if im_g < -margin || im_zg < -margin * z.norm() || c0 * g.norm() > (1.0 + 1e-9) / z.im {
                return Err(Error::Consistency {
                    z,
                    detail: format!("g_{a} = {g} violates the admissibility constraints"),
                });
            }
            if im_g < 1e-14 * scale {
                log::warn!("Im g_{a}({z}) = {im_g:e} is at the admissibility boundary");
            }
        }
    }
    Ok(ResolventPoint {
        z,
        g: done.g,
        g_tilde,
        m_mu,
        iterations: done.iterations,
        residual: done.residual,
    })
}

/// Solves at `z` with `Im z > 0` from `start`, descending in `Im z` by factors of two
/// from `opts.continuation_start_im`.
fn descend(
    params: &ModelParams,
    z: Complex64,
    opts: &SolverOptions,
) -> Result<(Vec<Complex64>, usize)> {
    // Climb until the first level converges from the asymptote.
    let mut top = opts.continuation_start_im.max(z.im);
    let mut total = 0;
    let mut g = loop {
        let w = Complex64::new(z.re, top);
        match iterate(params, w, asymptote(params, w), opts) {
            Ok(done) => {
                total += done.iterations;
                break done.g;
            }
            Err(err) if top < 1e6 => {
                log::debug!("continuation start at Im z = {top} failed: {err}");
                top *= 10.0;
            }
            Err(err) => return Err(err),
        }
    };
    let mut im = top;
    while im > z.im {
        im = (im * 0.5).max(z.im);
        let w = Complex64::new(z.re, im);
        let done = iterate(params, w, g, opts)?;
        total += done.iterations;
        g = done.g;
    }
    Ok((g, total))
}

fn solve_upper(
    z: Complex64,
    params: &ModelParams,
    opts: &SolverOptions,
    warm_start: Option<&[Complex64]>,
) -> Result<ResolventPoint> {
    if let Some(start) = warm_start {
        match iterate(params, z, start.to_vec(), opts).and_then(|done| finish(params, z, done)) {
            Ok(point) => return Ok(point),
            Err(err) => log::debug!("warm start at {z} failed ({err}); using continuation"),
        }
    }
    if z.im >= opts.continuation_start_im {
        let done = iterate(params, z, asymptote(params, z), opts)?;
        return finish(params, z, done);
    }
    let (g, iterations) = descend(params, z, opts)?;
    let done = iterate(params, z, g, opts)?;
    let mut point = finish(params, z, done)?;
    point.iterations += iterations;
    Ok(point)
}

/// Real `x > 0`: continuation down to `Im z = 1e-9`, refusing points where the
/// density is still visible, then convergence on the real axis itself.
fn solve_real_positive(
    x: f64,
    params: &ModelParams,
    opts: &SolverOptions,
) -> Result<ResolventPoint> {
    let near = Complex64::new(x, REAL_AXIS_ETA);
    let (g, iterations) = descend(params, near, opts)?;
    let c0 = params.c0();
    for (a, g_a) in g.iter().enumerate() {
        if c0 * g_a.im > 1e-6 * (c0 * g_a.norm()).max(1.0) {
            return Err(Error::NearSupport {
                z: Complex64::new(x, 0.0),
                detail: format!(
                    "Im c0 g_{a} = {:e} at Im z = {REAL_AXIS_ETA:e}; x lies inside the support",
                    c0 * g_a.im
                ),
            });
        }
    }
    let z = Complex64::new(x, 0.0);
    let start: Vec<Complex64> = g.iter().map(|g| Complex64::new(g.re, 0.0)).collect();
    let done = iterate(params, z, start, opts)?;
    let mut point = finish(params, z, done)?;
    point.iterations += iterations;
    Ok(point)
}

/// Solves the fixed-point system at `z`.
///
/// `Im z ≠ 0` is solved directly (with continuation when `|Im z|` is below
/// `continuation_start_im` and no warm start is given). Real `z < 0` is always
/// outside the support; real `z > 0` is accepted only outside the support.
pub fn solve_g(
    z: Complex64,
    params: &ModelParams,
    opts: &SolverOptions,
    warm_start: Option<&[Complex64]>,
) -> Result<ResolventPoint> {
    opts.validate()?;
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("z = {z} is not finite")));
    }
    if z.norm() == 0.0 {
        return Err(Error::InvalidArgument(
            "z = 0 is not at positive distance from the support and 0".into(),
        ));
    }
    if let Some(w) = warm_start {
        if w.len() != params.k() {
            return Err(Error::InvalidArgument("warm start has wrong length".into()));
        }
    }
    if z.im < 0.0 {
        let warm: Option<Vec<Complex64>> =
            warm_start.map(|w| w.iter().map(Complex64::conj).collect());
        return solve_upper(z.conj(), params, opts, warm.as_deref()).map(|p| p.conj());
    }
    if z.im > 0.0 {
        return solve_upper(z, params, opts, warm_start);
    }
    if z.re < 0.0 {
        let start = warm_start
            .filter(|w| admissible(z, w))
            .map(<[Complex64]>::to_vec)
            .unwrap_or_else(|| asymptote(params, z));
        let done = iterate(params, z, start, opts)?;
        return finish(params, z, done);
    }
    solve_real_positive(z.re, params, opts)
}

/// Solves along an ordered list of points, warm-starting each point from its
/// predecessor. Errors carry the grid index.
pub fn solve_grid(
    zs: &[Complex64],
    params: &ModelParams,
    opts: &SolverOptions,
) -> Result<Vec<ResolventPoint>> {
    if zs.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let mut out: Vec<ResolventPoint> = Vec::with_capacity(zs.len());
    for (i, &z) in zs.iter().enumerate() {
        let warm = out.last().and_then(|prev| {
            if prev.z.im > 0.0 && z.im > 0.0 || prev.z.im < 0.0 && z.im < 0.0 {
                Some(prev.g.clone())
            } else if prev.z.im * z.im < 0.0 {
                Some(prev.g.iter().map(Complex64::conj).collect())
            } else {
                None
            }
        });
        let point = solve_g(z, params, opts, warm.as_deref()).map_err(|e| e.at_index(i))?;
        out.push(point);
    }
    Ok(out)
}

/// Splits the grid into contiguous chunks of `chunk` points, each with its own
/// warm-start chain, and solves the chunks in parallel. The result does not
/// depend on the number of worker threads.
pub fn solve_grid_chunked(
    zs: &[Complex64],
    params: &ModelParams,
    opts: &SolverOptions,
    chunk: usize,
) -> Result<Vec<ResolventPoint>> {
    if zs.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let chunk = chunk.max(1);
    let parts: Vec<Result<Vec<ResolventPoint>>> = zs
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, part)| {
            solve_grid(part, params, opts).map_err(|e| match e {
                Error::GridPoint { index, source } => Error::GridPoint {
                    index: index + c * chunk,
                    source,
                },
                other => other,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(zs.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// `g'(z) = c0 (I_k - Ω(z, z))^{-1} (g_a(z)^2)_a`.
pub fn g_derivative(point: &ResolventPoint, params: &ModelParams) -> Result<Vec<Complex64>> {
    let z = point.z;
    let inner = resolvent::evaluate_inner(params, &point.g, z)?;
    let traces = resolvent::pair_traces(params, &inner.inverse, &inner.inverse);
    let omega = resolvent::omega_from_traces(params, &point.g, &point.g, &traces);
    let k = params.k();
    let system = Array2::from_shape_fn((k, k), |(a, b)| {
        let delta = if a == b { 1.0 } else { 0.0 };
        Complex64::new(delta, 0.0) - omega[(a, b)]
    });
    let rhs: Array1<Complex64> = point.g.iter().map(|g| g * g * params.c0()).collect();
    let solution = linalg::solve(&system, &rhs).ok_or_else(|| Error::NearSupport {
        z,
        detail: "I - Ω(z, z) is numerically singular".into(),
    })?;
    Ok(solution.to_vec())
}
