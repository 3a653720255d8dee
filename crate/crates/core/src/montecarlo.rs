//! Sampling of `W`, empirical spectra and resolvents, and Monte Carlo reports
//! that compare them against the deterministic predictions.
//!
//! Every trial draws from its own seed derived from the report seed and the
//! trial index, and every column of `W` from its own ChaCha8 stream, so
//! results do not depend on how trials are scheduled.

use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::equivalents::{
    class_trace_functional, first_order, log_det_functional, q_da_q_equivalent,
    qt_ca_qt_equivalent, qt_w_da_wt_qt_equivalent, second_order,
};
use crate::error::{Error, Result};
use crate::fixed_point::{solve_g, SolverOptions};
use crate::linalg::{self, CMatrix};
use crate::model::{ModelParams, ModelSpec};
use crate::nonneg::{
    check_cs_radius, check_dominated_radius, perron_left_vector, spectral_radius_real,
};
use crate::spectrum::DensityGrid;

const RESIDUAL_TOL: f64 = 1e-8;
const ZERO_EIGENVALUE_TOL: f64 = 1e-12;
const MATCH_SIGMAS: f64 = 3.0;
const PROBE_SEED: u64 = 0x05ee_d0f9_b0e5;

#[derive(Debug, Clone)]
pub struct EnsembleSample {
    pub seed: u64,
    /// `p × n`.
    pub w: Array2<f64>,
    /// Eigenvalues of `WᵀW`, ascending.
    pub eigenvalues_wtw: Array1<f64>,
}

/// Anything that can produce a realization of `W` for a model.
pub trait SampleSource: Sync {
    fn params(&self) -> &ModelParams;
    fn draw(&self, seed: u64) -> Array2<f64>;
}

/// `W = p^{-1/2} [C_1^{1/2} Z_1, …, C_k^{1/2} Z_k]` with standard Gaussian `Z_a`.
pub struct GaussianEnsemble<'a> {
    params: &'a ModelParams,
}

impl<'a> GaussianEnsemble<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        GaussianEnsemble { params }
    }
}

impl SampleSource for GaussianEnsemble<'_> {
    fn params(&self) -> &ModelParams {
        self.params
    }

    fn draw(&self, seed: u64) -> Array2<f64> {
        sample_matrix(self.params, seed)
    }
}

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of trial `t` of a report seeded with `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(t as u64 + 1)))
}

fn sample_matrix(params: &ModelParams, seed: u64) -> Array2<f64> {
    let (p, n) = (params.p(), params.n());
    let mut z = Array2::<f64>::zeros((p, n));
    for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        col.iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
    }
    let scale = 1.0 / (p as f64).sqrt();
    let mut w = Array2::<f64>::zeros((p, n));
    for a in 0..params.k() {
        let range = params.class_range(a);
        let za = z.slice(s![.., range.clone()]);
        let block = if params.is_identity(a) {
            za.to_owned()
        } else {
            linalg::real_product(params.sqrt_covariance(a), &za.to_owned())
        };
        w.slice_mut(s![.., range]).assign(&(block * scale));
    }
    w
}

pub fn sample_w(params: &ModelParams, seed: u64) -> Result<EnsembleSample> {
    let w = sample_matrix(params, seed);
    let eigenvalues_wtw = eigenvalues_wtw(&w)?;
    Ok(EnsembleSample {
        seed,
        w,
        eigenvalues_wtw,
    })
}

/// Eigenvalues of `WᵀW` from the smaller Gram matrix, padded with exact zeros.
pub fn eigenvalues_wtw(w: &Array2<f64>) -> Result<Array1<f64>> {
    let (p, n) = w.dim();
    let wt = w.t().to_owned();
    if n <= p {
        let values = linalg::sym_eigenvalues(&linalg::real_product(&wt, w))?;
        Ok(values.mapv(|l| l.max(0.0)))
    } else {
        let values = linalg::sym_eigenvalues(&linalg::real_product(w, &wt))?;
        let mut all = vec![0.0; n - p];
        all.extend(values.iter().map(|l| l.max(0.0)));
        Ok(Array1::from(all))
    }
}

/// `Q = (WᵀW − z)^{-1}` and `Q̃ = (WWᵀ − z)^{-1}`.
#[derive(Debug, Clone)]
pub struct EmpiricalResolvents {
    pub z: Complex64,
    pub q: CMatrix,
    pub q_tilde: CMatrix,
}

fn gram_resolvent(gram: &Array2<f64>, z: Complex64) -> Result<CMatrix> {
    let m = linalg::to_complex(gram) - CMatrix::eye(gram.nrows()).mapv(|v| v * z);
    let inv = linalg::inverse(&m).ok_or_else(|| Error::NearSupport {
        z,
        detail: "empirical resolvent is singular; use a complex shift".into(),
    })?;
    let residual = (m.dot(&inv) - CMatrix::eye(gram.nrows()))
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::NearSupport {
            z,
            detail: format!("empirical resolvent residual {residual:e}; use a complex shift"),
        });
    }
    Ok(inv)
}

/// `W X Wᵀ` for real `W` and complex `X`.
fn sandwich(w: &Array2<f64>, x: &CMatrix) -> CMatrix {
    let wx = linalg::real_times_complex(w, x);
    linalg::real_times_complex(w, &wx.t().to_owned())
        .t()
        .to_owned()
}

fn check_z(z: Complex64) -> Result<()> {
    if z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "z = {z} must be finite and nonzero"
        )));
    }
    Ok(())
}

/// Inverts the smaller Gram matrix and gets the other resolvent from
/// `Q̃ = −(I_p − W Q Wᵀ)/z` (or the mirrored identity).
fn resolvents_of(w: &Array2<f64>, z: Complex64) -> Result<EmpiricalResolvents> {
    check_z(z)?;
    let (p, n) = w.dim();
    let wt = w.t().to_owned();
    let minus_inv_z = -1.0 / z;
    if n <= p {
        let q = gram_resolvent(&linalg::real_product(&wt, w), z)?;
        let q_tilde = (CMatrix::eye(p) - sandwich(w, &q)).mapv(|v| v * minus_inv_z);
        Ok(EmpiricalResolvents { z, q, q_tilde })
    } else {
        let q_tilde = gram_resolvent(&linalg::real_product(w, &wt), z)?;
        let q = (CMatrix::eye(n) - sandwich(&wt, &q_tilde)).mapv(|v| v * minus_inv_z);
        Ok(EmpiricalResolvents { z, q, q_tilde })
    }
}

pub fn empirical_resolvents(sample: &EnsembleSample, z: Complex64) -> Result<EmpiricalResolvents> {
    resolvents_of(&sample.w, z)
}

// ---------------------------------------------------------------------------
// Reports

/// Pass condition of a metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Threshold {
    AtMost(f64),
    Window([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub threshold: Option<Threshold>,
    pub pass: bool,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub trials: usize,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
}

impl McReport {
    fn new(trials: usize, seed: u64) -> Self {
        McReport {
            trials,
            seed,
            records: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&MetricRecord> {
        self.records.iter().filter(|r| !r.pass).collect()
    }

    pub fn get(&self, metric: &str) -> Option<&MetricRecord> {
        self.records.iter().find(|r| r.metric == metric)
    }

    pub fn extend(&mut self, other: McReport) {
        self.records.extend(other.records);
    }

    fn push(&mut self, metric: String, mean: f64, stderr: f64, threshold: Option<Threshold>) {
        let pass = match threshold {
            None => true,
            Some(Threshold::AtMost(limit)) => mean <= limit,
            Some(Threshold::Window([lo, hi])) => lo <= mean && mean <= hi,
        };
        self.records.push(MetricRecord {
            metric,
            mean,
            stderr,
            threshold,
            pass,
            trials: self.trials,
            seed: self.seed,
        });
    }

    fn info(&mut self, metric: impl Into<String>, stats: RealStats) {
        self.push(metric.into(), stats.mean, stats.stderr, None);
    }

    /// Records `|mean(x) − expected|` against `3 · stderr`.
    fn matches(&mut self, metric: impl Into<String>, samples: &[Complex64], expected: Complex64) {
        let stats = ComplexStats::of(samples);
        let deviation = (stats.mean - expected).norm();
        self.push(
            metric.into(),
            deviation,
            stats.stderr,
            Some(Threshold::AtMost(MATCH_SIGMAS * stats.stderr)),
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct RealStats {
    mean: f64,
    stderr: f64,
}

impl RealStats {
    fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let variance = if x.len() > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        RealStats {
            mean,
            stderr: (variance / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ComplexStats {
    mean: Complex64,
    stderr: f64,
    variance: f64,
}

impl ComplexStats {
    /// Variance is `E|X − EX|²`.
    fn of(x: &[Complex64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<Complex64>() / n;
        let variance = if x.len() > 1 {
            x.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        ComplexStats {
            mean,
            stderr: (variance / n).sqrt(),
            variance,
        }
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    Ok(())
}

/// Runs `f` on every trial seed in parallel; results keep trial order.
fn run_trials<T, F>(trials: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    check_trials(trials)?;
    (0..trials)
        .into_par_iter()
        .map(|t| f(trial_seed(seed, t)))
        .collect()
}

fn column<T: Copy>(rows: &[Vec<T>], i: usize) -> Vec<T> {
    rows.iter().map(|r| r[i]).collect()
}

/// Deterministic probes for [`convergence_report`].
#[derive(Debug, Clone)]
pub struct ConvergenceProbes {
    /// `n × n` matrices `D` for `(1/n) tr D(Q − Q̄)`.
    pub trace_n: Vec<(String, Array2<f64>)>,
    /// `p × p` matrices `A` for `(1/p) tr A(Q̃ − Q̃̄)`.
    pub trace_p: Vec<(String, Array2<f64>)>,
    /// Unit pairs `(d1, d2)` for `d1ᵀ(Q − Q̄)d2`.
    pub bilinear_n: Vec<(String, Array1<f64>, Array1<f64>)>,
    pub bilinear_p: Vec<(String, Array1<f64>, Array1<f64>)>,
}

fn basis(dim: usize, i: usize) -> Array1<f64> {
    let mut v = Array1::zeros(dim);
    v[i] = 1.0;
    v
}

/// A fixed unit vector, the same for every report.
fn random_unit(dim: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

fn unit_pairs(dim: usize) -> Vec<(String, Array1<f64>, Array1<f64>)> {
    let u = random_unit(dim);
    vec![
        ("first".into(), basis(dim, 0), basis(dim, 0)),
        ("last".into(), basis(dim, dim - 1), basis(dim, dim - 1)),
        ("first_last".into(), basis(dim, 0), basis(dim, dim - 1)),
        ("random".into(), u.clone(), u),
    ]
}

impl ConvergenceProbes {
    /// `I` and every class selector `D_a`; `I` and every `C_a`; coordinate
    /// vectors and one fixed random unit vector.
    pub fn default_for(params: &ModelParams) -> Self {
        let (p, n) = (params.p(), params.n());
        let mut trace_n = vec![("I".to_string(), Array2::eye(n))];
        let mut trace_p = vec![("I".to_string(), Array2::eye(p))];
        for a in 0..params.k() {
            let mut d = Array2::zeros((n, n));
            for j in params.class_range(a) {
                d[(j, j)] = 1.0;
            }
            trace_n.push((format!("D_{}", a + 1), d));
            trace_p.push((format!("C_{}", a + 1), params.covariance(a).clone()));
        }
        ConvergenceProbes {
            trace_n,
            trace_p,
            bilinear_n: unit_pairs(n),
            bilinear_p: unit_pairs(p),
        }
    }
}

/// Errors of `Q` against `Q̄` and of `Q̃` against `Q̃̄` through trace and
/// bilinear probes. For each probe, `abs_err.*` is the mean absolute error and
/// `bias.*` compares the mean signed error with three standard errors.
pub fn convergence_report(
    params: &ModelParams,
    z: Complex64,
    trials: usize,
    probes: &ConvergenceProbes,
    seed: u64,
    opts: &SolverOptions,
) -> Result<McReport> {
    check_trials(trials)?;
    let (p, n) = (params.p(), params.n());
    for (name, d) in &probes.trace_n {
        if d.dim() != (n, n) {
            return Err(Error::InvalidArgument(format!(
                "probe {name} is not {n}x{n}"
            )));
        }
    }
    for (name, a) in &probes.trace_p {
        if a.dim() != (p, p) {
            return Err(Error::InvalidArgument(format!(
                "probe {name} is not {p}x{p}"
            )));
        }
    }
    let point = solve_g(z, params, opts, None)?;
    let eq = first_order(&point, params)?;
    let q_bar: Array1<Complex64> = params
        .column_classes()
        .iter()
        .map(|&a| eq.q_bar_diag[a])
        .collect();

    let inv_n = 1.0 / n as f64;
    let inv_p = 1.0 / p as f64;
    let expected_n: Vec<Complex64> = probes
        .trace_n
        .iter()
        .map(|(_, d)| {
            d.diag()
                .iter()
                .zip(&q_bar)
                .map(|(x, q)| q * x)
                .sum::<Complex64>()
                * inv_n
        })
        .collect();
    let expected_p: Vec<Complex64> = probes
        .trace_p
        .iter()
        .map(|(_, a)| linalg::trace_of_symmetric_product(a, &eq.q_tilde_bar) * inv_p)
        .collect();
    let bil = |m: &CMatrix, d1: &Array1<f64>, d2: &Array1<f64>| -> Complex64 {
        let md2 = m.dot(&d2.mapv(|v| Complex64::new(v, 0.0)));
        d1.iter().zip(md2.iter()).map(|(a, b)| b * a).sum()
    };
    let q_bar_dense = Array2::from_diag(&q_bar);

    let rows = run_trials(trials, seed, |s| {
        let res = resolvents_of(&sample_matrix(params, s), z)?;
        let mut errs = Vec::new();
        for ((_, d), e) in probes.trace_n.iter().zip(&expected_n) {
            errs.push(linalg::trace_of_symmetric_product(&d.t().to_owned(), &res.q) * inv_n - e);
        }
        for ((_, a), e) in probes.trace_p.iter().zip(&expected_p) {
            errs.push(
                linalg::trace_of_symmetric_product(&a.t().to_owned(), &res.q_tilde) * inv_p - e,
            );
        }
        for (_, d1, d2) in &probes.bilinear_n {
            errs.push(bil(&res.q, d1, d2) - bil(&q_bar_dense, d1, d2));
        }
        for (_, d1, d2) in &probes.bilinear_p {
            errs.push(bil(&res.q_tilde, d1, d2) - bil(&eq.q_tilde_bar, d1, d2));
        }
        Ok(errs)
    })?;

    let names: Vec<String> = probes
        .trace_n
        .iter()
        .map(|(name, _)| format!("tr_q.{name}"))
        .chain(
            probes
                .trace_p
                .iter()
                .map(|(name, _)| format!("tr_qt.{name}")),
        )
        .chain(
            probes
                .bilinear_n
                .iter()
                .map(|(name, ..)| format!("bil_q.{name}")),
        )
        .chain(
            probes
                .bilinear_p
                .iter()
                .map(|(name, ..)| format!("bil_qt.{name}")),
        )
        .collect();
    let traces = probes.trace_n.len() + probes.trace_p.len();
    let mut report = McReport::new(trials, seed);
    for (i, name) in names.iter().enumerate() {
        let errs = column(&rows, i);
        let abs: Vec<f64> = errs.iter().map(|e| e.norm()).collect();
        report.info(format!("abs_err.{name}"), RealStats::of(&abs));
        if i < traces {
            report.matches(format!("bias.{name}"), &errs, Complex64::new(0.0, 0.0));
        }
    }
    Ok(report)
}

/// Distance from `x` to `S ∪ {0}`.
pub fn distance_to_support(x: f64, support: &[(f64, f64)]) -> f64 {
    support
        .iter()
        .map(|&(l, r)| {
            if x < l {
                l - x
            } else if x > r {
                x - r
            } else {
                0.0
            }
        })
        .fold(x.abs(), f64::min)
}

/// Largest distance from a sample eigenvalue to `S ∪ {0}`, per trial.
/// `max_outlier_distance` is asserted against `threshold` when given.
pub fn outlier_report(
    params: &ModelParams,
    support: &[(f64, f64)],
    trials: usize,
    threshold: Option<f64>,
    seed: u64,
) -> Result<McReport> {
    let maxima = run_trials(trials, seed, |s| {
        let ev = eigenvalues_wtw(&sample_matrix(params, s))?;
        Ok(ev
            .iter()
            .map(|&l| distance_to_support(l, support))
            .fold(0.0, f64::max))
    })?;
    let mut sorted = maxima.clone();
    sorted.sort_by(f64::total_cmp);
    let p99 = sorted[((0.99 * trials as f64).ceil() as usize).clamp(1, trials) - 1];
    let max = sorted[trials - 1];

    let mut report = McReport::new(trials, seed);
    report.push(
        "max_outlier_distance".into(),
        max,
        0.0,
        threshold.map(Threshold::AtMost),
    );
    report.push("p99_outlier_distance".into(), p99, 0.0, None);
    report.info("mean_outlier_distance", RealStats::of(&maxima));
    Ok(report)
}

/// Counts eigenvalues of the full `n × n` matrix `WᵀW` below `10⁻¹² · max`
/// and checks the count is exactly `max(n − p, 0)` in every trial.
pub fn zero_eigenvalue_report(params: &ModelParams, trials: usize, seed: u64) -> Result<McReport> {
    let counts = run_trials(trials, seed, |s| {
        let w = sample_matrix(params, s);
        let ev = linalg::sym_eigenvalues(&linalg::real_product(&w.t().to_owned(), &w))?;
        let top = ev.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        Ok(ev
            .iter()
            .filter(|l| l.abs() < ZERO_EIGENVALUE_TOL * top)
            .count() as f64)
    })?;
    let expected = params.n().saturating_sub(params.p()) as f64;
    let mut report = McReport::new(trials, seed);
    let lo = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = counts.iter().copied().fold(0.0, f64::max);
    report.push(
        "zero_eigenvalues.min".into(),
        lo,
        0.0,
        Some(Threshold::Window([expected, expected])),
    );
    report.push(
        "zero_eigenvalues.max".into(),
        hi,
        0.0,
        Some(Threshold::Window([expected, expected])),
    );
    Ok(report)
}

/// Uniform bins `[lo + i·width, lo + (i+1)·width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBins {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl HistogramBins {
    pub fn count(&self) -> usize {
        ((self.hi - self.lo) / self.width).round().max(0.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.lo < self.hi && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid histogram bins {self:?}"
            )));
        }
        let k = (self.hi - self.lo) / self.width;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "bin width {} does not divide [{}, {}]",
                self.width, self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Pooled empirical bin masses next to the model's bin masses.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub bins: HistogramBins,
    pub empirical: Vec<f64>,
    pub model: Vec<f64>,
    pub empirical_outside: f64,
    pub model_outside: f64,
}

impl Histogram {
    /// `Σ |h_i − m_i|` plus the mass each side puts outside the bins.
    pub fn l1(&self) -> f64 {
        let inside: f64 = self
            .empirical
            .iter()
            .zip(&self.model)
            .map(|(h, m)| (h - m).abs())
            .sum();
        inside + self.empirical_outside + self.model_outside
    }

    pub fn write_csv<W: std::io::Write>(
        &self,
        mut out: W,
        comments: &[String],
    ) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "bin_lo,bin_hi,empirical,model")?;
        for (i, (h, m)) in self.empirical.iter().zip(&self.model).enumerate() {
            let lo = self.bins.lo + i as f64 * self.bins.width;
            writeln!(out, "{lo},{},{h},{m}", lo + self.bins.width)?;
        }
        Ok(())
    }
}

/// Pooled normalized histogram of the eigenvalues of `WᵀW` against the
/// bin masses of the density grid (plus the atom at zero).
pub fn histogram_report(
    params: &ModelParams,
    grid: &DensityGrid,
    trials: usize,
    bins: HistogramBins,
    l1_threshold: Option<f64>,
    seed: u64,
) -> Result<(McReport, Histogram)> {
    check_trials(trials)?;
    bins.validate()?;
    let count = bins.count();
    let per_trial = run_trials(trials, seed, |s| {
        let ev = eigenvalues_wtw(&sample_matrix(params, s))?;
        let mut counts = vec![0usize; count];
        let mut outside = 0usize;
        for &l in ev.iter() {
            let i = ((l - bins.lo) / bins.width).floor();
            if i >= 0.0 && (i as usize) < count {
                counts[i as usize] += 1;
            } else {
                outside += 1;
            }
        }
        Ok((counts, outside))
    })?;

    let total = (trials * params.n()) as f64;
    let mut empirical = vec![0.0; count];
    let mut empirical_outside = 0.0;
    for (counts, outside) in &per_trial {
        for (e, c) in empirical.iter_mut().zip(counts) {
            *e += *c as f64;
        }
        empirical_outside += *outside as f64;
    }
    empirical.iter_mut().for_each(|e| *e /= total);
    empirical_outside /= total;

    let model: Vec<f64> = (0..count)
        .map(|i| {
            let lo = bins.lo + i as f64 * bins.width;
            let hi = lo + bins.width;
            let atom = if lo <= 0.0 && 0.0 < hi {
                grid.atom_at_zero
            } else {
                0.0
            };
            grid.mass_between(lo, hi) + atom
        })
        .collect();
    let model_outside = (grid.total_mass - model.iter().sum::<f64>()).max(0.0);
    let hist = Histogram {
        bins,
        empirical,
        model,
        empirical_outside,
        model_outside,
    };

    let mut report = McReport::new(trials, seed);
    report.push(
        "histogram_l1".into(),
        hist.l1(),
        0.0,
        l1_threshold.map(Threshold::AtMost),
    );
    report.push(
        "histogram_outside_mass".into(),
        hist.empirical_outside,
        0.0,
        None,
    );
    report.push(
        "density_total_mass".into(),
        grid.total_mass,
        0.0,
        Some(Threshold::Window([0.98, 1.02])),
    );
    Ok((report, hist))
}

/// `(1/p) tr Q̃ C_a` for every class, inverting only the smaller Gram matrix.
fn normalized_qt_traces(
    params: &ModelParams,
    w: &Array2<f64>,
    z: Complex64,
) -> Result<Vec<Complex64>> {
    check_z(z)?;
    let (p, n) = w.dim();
    let inv_p = 1.0 / p as f64;
    let wt = w.t().to_owned();
    if n <= p {
        // tr C_a Q̃ = −(tr C_a − tr(Wᵀ C_a W Q)) / z
        let q = gram_resolvent(&linalg::real_product(&wt, w), z)?;
        Ok((0..params.k())
            .map(|a| {
                let c = params.covariance(a);
                let inner = linalg::real_product(&wt, &linalg::real_product(c, w));
                let t = linalg::trace_of_symmetric_product(&inner, &q);
                -(c.diag().sum() - t) / z * inv_p
            })
            .collect())
    } else {
        let qt = gram_resolvent(&linalg::real_product(w, &wt), z)?;
        Ok((0..params.k())
            .map(|a| linalg::trace_of_symmetric_product(params.covariance(a), &qt) * inv_p)
            .collect())
    }
}

/// Sample variance of `(1/p) tr Q̃ C_a` per class over trials.
pub fn trace_variances<S: SampleSource>(
    source: &S,
    z: Complex64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let params = source.params();
    let rows = run_trials(trials, seed, |s| {
        normalized_qt_traces(params, &source.draw(s), z)
    })?;
    Ok((0..params.k())
        .map(|a| ComplexStats::of(&column(&rows, a)).variance)
        .collect())
}

/// Variances of `(1/p) tr Q̃ C_a` over a doubling sequence of dimensions and
/// the ratio between consecutive ones, asserted inside `ratio_window`.
pub fn variance_scaling_report(
    spec: &ModelSpec,
    z: Complex64,
    trials: usize,
    p_list: &[usize],
    ratio_window: [f64; 2],
    seed: u64,
) -> Result<McReport> {
    check_trials(trials)?;
    if z.im.abs() < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "need |Im z| ≥ 1, got z = {z}"
        )));
    }
    if p_list.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::InvalidArgument(format!(
            "{p_list:?} is not a doubling sequence"
        )));
    }
    let mut report = McReport::new(trials, seed);
    let mut previous: Option<(usize, Vec<f64>)> = None;
    for &p in p_list {
        let params = spec.with_dimension(p)?.build()?;
        let vars = trace_variances(&GaussianEnsemble::new(&params), z, trials, seed)?;
        for (a, v) in vars.iter().enumerate() {
            report.push(format!("var.tr_qt.C_{}.p{p}", a + 1), *v, 0.0, None);
        }
        if let Some((p0, prev)) = &previous {
            for (a, (v0, v1)) in prev.iter().zip(&vars).enumerate() {
                report.push(
                    format!("var_ratio.tr_qt.C_{}.p{p0}_p{p}", a + 1),
                    v0 / v1,
                    0.0,
                    Some(Threshold::Window(ratio_window)),
                );
            }
        }
        previous = Some((p, vars));
    }
    Ok(report)
}

/// Largest `‖WWᵀ‖` over trials, asserted below `1.5 (1 + √(n/p))² C_max`
/// once `p ≥ 128`.
pub fn norm_bound_report(params: &ModelParams, trials: usize, seed: u64) -> Result<McReport> {
    let norms = run_trials(trials, seed, |s| {
        let ev = eigenvalues_wtw(&sample_matrix(params, s))?;
        Ok(ev.iter().copied().fold(0.0, f64::max))
    })?;
    let ratio = params.n() as f64 / params.p() as f64;
    let bound = 1.5 * (1.0 + ratio.sqrt()).powi(2) * params.c_max();
    let threshold = (params.p() >= 128).then_some(Threshold::AtMost(bound));
    let mut report = McReport::new(trials, seed);
    report.push(
        "max_norm_wwt".into(),
        norms.iter().copied().fold(0.0, f64::max),
        0.0,
        threshold,
    );
    report.info("mean_norm_wwt", RealStats::of(&norms));
    Ok(report)
}

/// Normalized traces of the three second-order products against their
/// equivalents:
/// `(1/n) tr Q₁D_aQ₂`, `(1/p) tr Q̃₁C_aQ̃₂` and `(1/p) tr Q̃₁WD_aWᵀQ̃₂`.
pub fn second_order_report(
    params: &ModelParams,
    z1: Complex64,
    z2: Complex64,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<McReport> {
    check_trials(trials)?;
    let k = params.k();
    let (p, n) = (params.p(), params.n());
    let (inv_n, inv_p) = (1.0 / n as f64, 1.0 / p as f64);
    let p1 = solve_g(z1, params, opts, None)?;
    let p2 = solve_g(z2, params, opts, None)?;
    let (e1, e2) = (first_order(&p1, params)?, first_order(&p2, params)?);
    let so = second_order(&p1, &p2, params)?;
    let mut expected = Vec::with_capacity(3 * k);
    for a in 0..k {
        let coeff = q_da_q_equivalent(&so, &e1, &e2, a, params)?;
        expected.push(
            coeff
                .iter()
                .zip(params.ratios())
                .map(|(v, &c)| v * c)
                .sum::<Complex64>(),
        );
        expected.push(linalg::trace(&qt_ca_qt_equivalent(&so, &e1, &e2, a, params)?) * inv_p);
        expected.push(linalg::trace(&qt_w_da_wt_qt_equivalent(&so, &e1, &e2, a, params)?) * inv_p);
    }

    let rows = run_trials(trials, seed, |s| {
        let w = sample_matrix(params, s);
        let r1 = resolvents_of(&w, z1)?;
        let r2 = resolvents_of(&w, z2)?;
        // tr(Q̃₁ X Q̃₂) = tr(X P) with P = Q̃₂Q̃₁.
        let prod = r2.q_tilde.dot(&r1.q_tilde);
        let mut out = Vec::with_capacity(3 * k);
        for a in 0..k {
            let range = params.class_range(a);
            let q_da_q: Complex64 = range
                .clone()
                .map(|j| {
                    r2.q.row(j)
                        .iter()
                        .zip(r1.q.column(j).iter())
                        .map(|(x, y)| x * y)
                        .sum::<Complex64>()
                })
                .sum();
            out.push(q_da_q * inv_n);
            out.push(linalg::trace_of_symmetric_product(params.covariance(a), &prod) * inv_p);
            let wa = w.slice(s![.., range]).to_owned();
            let gram = linalg::real_product(&wa, &wa.t().to_owned());
            out.push(linalg::trace_of_symmetric_product(&gram, &prod) * inv_p);
        }
        Ok(out)
    })?;

    let mut report = McReport::new(trials, seed);
    let labels = ["tr_q_da_q", "tr_qt_ca_qt", "tr_qt_w_da_wt_qt"];
    for a in 0..k {
        for (i, label) in labels.iter().enumerate() {
            let idx = 3 * a + i;
            report.matches(
                format!("{label}.{}", a + 1),
                &column(&rows, idx),
                expected[idx],
            );
        }
    }
    Ok(report)
}

/// `log det(WWᵀ + σ²I)` and `tr W_aᵀ(WWᵀ + σ²I)^{-1}W_a` against
/// [`log_det_functional`] and [`class_trace_functional`].
pub fn wireless_report(
    params: &ModelParams,
    sigma2: &[f64],
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<McReport> {
    check_trials(trials)?;
    if sigma2.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument(
            "sigma2 values must be positive".into(),
        ));
    }
    let k = params.k();
    let p = params.p();
    let classes = params.column_classes();
    let mut expected = Vec::new();
    for &s2 in sigma2 {
        expected.push(log_det_functional(s2, params, opts)?);
        let point = solve_g(Complex64::new(-s2, 0.0), params, opts, None)?;
        for a in 0..k {
            expected.push(class_trace_functional(-s2, a, &point, params)?);
        }
    }

    let rows = run_trials(trials, seed, |s| {
        let w = sample_matrix(params, s);
        let (values, vectors) = linalg::sym_eigen(&linalg::real_product(&w.t().to_owned(), &w))?;
        let values = values.mapv(|l| l.max(0.0));
        let nonzero = values.len().min(p);
        let top = &values.as_slice().unwrap()[values.len() - nonzero..];
        let mut out = Vec::new();
        for &s2 in sigma2 {
            let log_det =
                top.iter().map(|l| (l + s2).ln()).sum::<f64>() + (p - nonzero) as f64 * s2.ln();
            out.push(log_det);
            // tr W_aᵀ(WWᵀ + σ²)^{-1}W_a = n_a − σ² Σ_{j∈a} Q_jj at z = −σ²
            let mut diag_q = vec![0.0; k];
            for (j, &a) in classes.iter().enumerate() {
                let row = vectors.row(j);
                diag_q[a] += row
                    .iter()
                    .zip(values.iter())
                    .map(|(v, l)| v * v / (l + s2))
                    .sum::<f64>();
            }
            for (&n_a, d) in params.class_sizes().iter().zip(&diag_q) {
                out.push(n_a as f64 - s2 * d);
            }
        }
        Ok(out)
    })?;

    let mut report = McReport::new(trials, seed);
    let mut idx = 0;
    for &s2 in sigma2 {
        let c = |v: f64| Complex64::new(v, 0.0);
        let samples: Vec<Complex64> = column(&rows, idx).into_iter().map(c).collect();
        report.matches(format!("log_det.sigma2={s2}"), &samples, c(expected[idx]));
        idx += 1;
        for a in 0..k {
            let samples: Vec<Complex64> = column(&rows, idx).into_iter().map(c).collect();
            report.matches(
                format!("class_trace.{}.sigma2={s2}", a + 1),
                &samples,
                c(expected[idx]),
            );
            idx += 1;
        }
    }
    Ok(report)
}

fn random_nonneg(rng: &mut ChaCha8Rng, k: usize) -> Array2<f64> {
    use rand::Rng;
    Array2::from_shape_fn((k, k), |_| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    })
}

/// Random checks of the nonnegative-matrix radius properties: Perron certificates,
/// `ρ(A) ≤ ρ(B)` under `|A| ≤ B`, and `ρ(C) ≤ √(ρ(A)ρ(B))` under
/// `|C_ij| ≤ √(A_ij B_ij)`. Each metric counts violations beyond `10⁻¹⁰`.
pub fn radius_fuzz_report(cases: usize, seed: u64) -> Result<McReport> {
    use rand::Rng;
    const SLACK: f64 = 1e-10;
    check_trials(cases)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut perron, mut domination, mut cs) = (0usize, 0usize, 0usize);
    for _ in 0..cases {
        let k = rng.random_range(1..=6);
        let m = random_nonneg(&mut rng, k);
        let cert = perron_left_vector(&m)?;
        let rho = spectral_radius_real(&m)?;
        let sum: f64 = cert.left_perron.iter().sum();
        let ok = cert.left_perron.iter().all(|&x| x >= 0.0)
            && (sum - 1.0).abs() <= SLACK
            && (cert.rho - rho).abs() <= SLACK * rho.max(1.0)
            && cert.defect(&m) <= SLACK * rho.max(1.0);
        perron += usize::from(!ok);

        let b = random_nonneg(&mut rng, k);
        let a = b.mapv(|x| x * rng.random_range(-1.0..=1.0));
        domination += usize::from(!check_dominated_radius(&a, &b)?.2);

        let a = random_nonneg(&mut rng, k);
        let c = Array2::from_shape_fn((k, k), |(i, j)| {
            (a[(i, j)] * b[(i, j)]).sqrt() * rng.random_range(-1.0..=1.0)
        });
        cs += usize::from(!check_cs_radius(&a, &b, &c)?.holds);
    }
    let mut report = McReport::new(cases, seed);
    for (name, count) in [
        ("perron", perron),
        ("domination", domination),
        ("cauchy_schwarz", cs),
    ] {
        report.push(
            format!("violations.{name}"),
            count as f64,
            0.0,
            Some(Threshold::AtMost(0.0)),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(p: usize, n: usize) -> ModelParams {
        ModelSpec::marchenko_pastur(p, n).build().unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn sampling_is_reproducible() {
        let params = mp(2, 2);
        let a = sample_w(&params, 42).unwrap();
        let b = sample_w(&params, 42).unwrap();
        assert_eq!(a.w, b.w);
        assert_ne!(a.w, sample_w(&params, 43).unwrap().w);
        assert_eq!(a.eigenvalues_wtw, b.eigenvalues_wtw);
    }

    #[test]
    fn columns_use_independent_streams() {
        // A column depends on its index and the seed only, not on n.
        let small = sample_w(&mp(4, 3), 9).unwrap();
        let large = sample_w(&mp(4, 6), 9).unwrap();
        assert_eq!(small.w.column(2), large.w.column(2));
    }

    #[test]
    fn column_norm_matches_covariance_trace() {
        let spec = ModelSpec::three_class_toeplitz(64);
        let params = spec.with_dimension(64).unwrap().build().unwrap();
        // 10⁴ columns per class over many draws.
        let target: usize = 10_000;
        for a in 0..3 {
            let expected = params.covariance(a).diag().sum() / 64.0;
            let per_draw = params.class_sizes()[a];
            let draws = target.div_ceil(per_draw);
            let norms: Vec<f64> = (0..draws)
                .flat_map(|t| {
                    let w = sample_matrix(&params, trial_seed(1, t));
                    params
                        .class_range(a)
                        .map(move |j| w.column(j).dot(&w.column(j)))
                        .collect::<Vec<_>>()
                })
                .collect();
            let s = RealStats::of(&norms);
            assert!(
                (s.mean - expected).abs() <= 3.0 * s.stderr,
                "class {a}: {} vs {expected}",
                s.mean
            );
        }
    }

    #[test]
    fn largest_eigenvalue_at_mp_edge() {
        let params = mp(1024, 512);
        let s = sample_w(&params, 3).unwrap();
        let top = s.eigenvalues_wtw[511];
        let edge = (1.0 + 0.5_f64.sqrt()).powi(2);
        assert!((top - edge).abs() < 0.05, "{top} vs {edge}");
    }

    #[test]
    fn zero_eigenvalues_are_padded() {
        let params = mp(8, 20);
        let s = sample_w(&params, 5).unwrap();
        assert_eq!(s.eigenvalues_wtw.len(), 20);
        assert!(s.eigenvalues_wtw.iter().take(12).all(|&l| l == 0.0));
        assert!(s.eigenvalues_wtw[12] > 0.0);
        assert!(s
            .eigenvalues_wtw
            .windows(2)
            .into_iter()
            .all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resolvent_identities() {
        for (p, n) in [(12, 7), (7, 12)] {
            let params = mp(p, n);
            let s = sample_w(&params, 11).unwrap();
            let z = c(0.3, 0.8);
            let r = empirical_resolvents(&s, z).unwrap();
            let w = linalg::to_complex(&s.w);
            let wtw = w.t().dot(&w);
            let lhs = (&wtw - &CMatrix::eye(n).mapv(|v| v * z)).dot(&r.q);
            assert!(max_diff(&lhs, &CMatrix::eye(n)) < 1e-8);
            let wwt = w.dot(&w.t());
            let lhs = (&wwt - &CMatrix::eye(p).mapv(|v| v * z)).dot(&r.q_tilde);
            assert!(max_diff(&lhs, &CMatrix::eye(p)) < 1e-8);

            // Wᵀ Q̃ W = zQ + I_n and W Q Wᵀ = zQ̃ + I_p
            let a = w.t().dot(&r.q_tilde).dot(&w);
            assert!(max_diff(&a, &(r.q.mapv(|v| v * z) + CMatrix::eye(n))) < 1e-8);
            let b = w.dot(&r.q).dot(&w.t());
            assert!(max_diff(&b, &(r.q_tilde.mapv(|v| v * z) + CMatrix::eye(p))) < 1e-8);

            let tr_diff = linalg::trace(&r.q_tilde) - linalg::trace(&r.q);
            assert!((tr_diff - (p as f64 - n as f64) * (-1.0 / z)).norm() < 1e-8);
        }
    }

    #[test]
    fn resolvent_far_away() {
        let s = sample_w(&mp(6, 9), 1).unwrap();
        let z = c(0.0, 1e6);
        let r = empirical_resolvents(&s, z).unwrap();
        let expected = CMatrix::eye(9).mapv(|v| -v / z);
        assert!(max_diff(&r.q, &expected) < 1e-4 / z.norm());
    }

    #[test]
    fn real_z_on_an_eigenvalue_is_rejected() {
        let s = sample_w(&mp(6, 4), 2).unwrap();
        let z = c(s.eigenvalues_wtw[2], 0.0);
        assert!(matches!(
            empirical_resolvents(&s, z),
            Err(Error::NearSupport { .. })
        ));
    }

    #[test]
    fn report_is_deterministic_and_zero_trials_fail() {
        let params = mp(16, 32);
        let probes = ConvergenceProbes::default_for(&params);
        let opts = SolverOptions::default();
        let a = convergence_report(&params, c(-1.0, 0.0), 8, &probes, 7, &opts).unwrap();
        let b = convergence_report(&params, c(-1.0, 0.0), 8, &probes, 7, &opts).unwrap();
        assert_eq!(a, b);
        assert!(convergence_report(&params, c(-1.0, 0.0), 0, &probes, 7, &opts).is_err());
    }

    #[test]
    fn report_does_not_depend_on_worker_count() {
        let params = mp(16, 32);
        let probes = ConvergenceProbes::default_for(&params);
        let opts = SolverOptions::default();
        let run = |workers| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap()
                .install(|| convergence_report(&params, c(0.0, 2.0), 6, &probes, 3, &opts).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn zero_probe_gives_zero_error() {
        let params = mp(8, 8);
        let probes = ConvergenceProbes {
            trace_n: vec![("0".into(), Array2::zeros((8, 8)))],
            trace_p: vec![],
            bilinear_n: vec![],
            bilinear_p: vec![],
        };
        let r = convergence_report(
            &params,
            c(-1.0, 0.0),
            4,
            &probes,
            1,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(r.get("abs_err.tr_q.0").unwrap().mean, 0.0);
    }

    #[test]
    fn far_from_spectrum_errors_vanish() {
        let params = mp(8, 12);
        let probes = ConvergenceProbes::default_for(&params);
        let r = convergence_report(
            &params,
            c(0.0, 1e6),
            4,
            &probes,
            1,
            &SolverOptions::default(),
        )
        .unwrap();
        for rec in r.records.iter().filter(|r| r.metric.starts_with("abs_err")) {
            assert!(rec.mean <= 1e-8, "{}: {}", rec.metric, rec.mean);
        }
    }

    #[test]
    fn mp_trace_matches_within_standard_errors() {
        let params = mp(64, 128);
        let probes = ConvergenceProbes::default_for(&params);
        let r = convergence_report(
            &params,
            c(-1.0, 0.0),
            100,
            &probes,
            5,
            &SolverOptions::default(),
        )
        .unwrap();
        let rec = r.get("bias.tr_q.I").unwrap();
        assert!(rec.pass, "{rec:?}");
    }

    #[test]
    fn distances_to_support() {
        let s = [(1.0, 2.0), (4.0, 5.0)];
        assert_eq!(distance_to_support(1.5, &s), 0.0);
        assert!((distance_to_support(3.2, &s) - 0.8).abs() < 1e-12);
        assert_eq!(distance_to_support(0.3, &s), 0.3);
        assert_eq!(distance_to_support(7.0, &s), 2.0);
    }

    #[test]
    fn zero_eigenvalues_counted_on_full_gram() {
        let r = zero_eigenvalue_report(&mp(10, 20), 5, 1).unwrap();
        assert!(r.all_pass(), "{r:?}");
    }

    #[test]
    fn histogram_of_exact_density_and_bin_checks() {
        let params = mp(4, 4);
        let grid = DensityGrid::from_values(vec![0.0, 1.0], vec![0.5, 0.5], 1e-3).unwrap();
        let bins = HistogramBins {
            lo: 0.0,
            hi: 1.0,
            width: 0.3,
        };
        assert!(histogram_report(&params, &grid, 2, bins, None, 1).is_err());
        let bins = HistogramBins {
            lo: 0.0,
            hi: 1.0,
            width: 0.25,
        };
        assert!(histogram_report(&params, &grid, 0, bins, None, 1).is_err());
        let (_, h) = histogram_report(&params, &grid, 3, bins, None, 1).unwrap();
        let total: f64 = h.empirical.iter().sum::<f64>() + h.empirical_outside;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(h.model.iter().all(|m| (m - 0.125).abs() < 1e-12));
    }

    struct Fixed<'a> {
        params: &'a ModelParams,
        w: Array2<f64>,
    }

    impl SampleSource for Fixed<'_> {
        fn params(&self) -> &ModelParams {
            self.params
        }
        fn draw(&self, _seed: u64) -> Array2<f64> {
            self.w.clone()
        }
    }

    #[test]
    fn fixed_source_has_zero_variance() {
        let params = mp(6, 4);
        let source = Fixed {
            params: &params,
            w: sample_matrix(&params, 1),
        };
        let v = trace_variances(&source, c(0.0, 2.0), 5, 1).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn exchangeable_classes_have_equal_variance() {
        let spec = ModelSpec {
            p: 64,
            classes: vec![
                crate::model::ClassSpec {
                    n: 32,
                    covariance: crate::model::CovarianceSpec::Identity,
                },
                crate::model::ClassSpec {
                    n: 32,
                    covariance: crate::model::CovarianceSpec::Identity,
                },
            ],
        };
        let params = spec.build().unwrap();
        let v = trace_variances(&GaussianEnsemble::new(&params), c(0.0, 2.0), 200, 4).unwrap();
        assert!((v[0] / v[1] - 1.0).abs() < 0.3, "{v:?}");
    }

    #[test]
    fn both_gram_sides_give_the_same_traces() {
        let params = mp(10, 10);
        let w = sample_matrix(&params, 3);
        let z = c(0.5, 1.0);
        let direct = normalized_qt_traces(&params, &w, z).unwrap();
        let r = resolvents_of(&w, z).unwrap();
        let expected = linalg::trace(&r.q_tilde) / 10.0;
        assert!((direct[0] - expected).norm() < 1e-12);
        let wide = mp(6, 10);
        let w = sample_matrix(&wide, 3);
        let direct = normalized_qt_traces(&wide, &w, z).unwrap();
        let r = resolvents_of(&w, z).unwrap();
        assert!((direct[0] - linalg::trace(&r.q_tilde) / 6.0).norm() < 1e-12);
    }

    #[test]
    fn norm_bound_scales_with_covariance() {
        let spec = |scale: f64| ModelSpec {
            p: 128,
            classes: vec![crate::model::ClassSpec {
                n: 128,
                covariance: crate::model::CovarianceSpec::Toeplitz { scale, rho: 0.0 },
            }],
        };
        let r1 = norm_bound_report(&spec(1.0).build().unwrap(), 10, 2).unwrap();
        let r4 = norm_bound_report(&spec(4.0).build().unwrap(), 10, 2).unwrap();
        let (m1, m4) = (
            r1.get("max_norm_wwt").unwrap(),
            r4.get("max_norm_wwt").unwrap(),
        );
        assert!(r1.all_pass() && r4.all_pass());
        assert!((m4.mean / m1.mean - 4.0).abs() < 1e-9);
        assert!(matches!(m4.threshold, Some(Threshold::AtMost(t)) if (t - 24.0).abs() < 1e-9));
        let tiny = norm_bound_report(&mp(8, 8), 5, 2).unwrap();
        assert!(tiny.records[0].threshold.is_none());
    }

    #[test]
    fn radius_fuzz_has_no_violations() {
        let r = radius_fuzz_report(500, 3).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!(radius_fuzz_report(0, 3).is_err());
    }

    #[test]
    fn record_json_fields() {
        let r = norm_bound_report(&mp(8, 8), 3, 9).unwrap();
        let json = serde_json::to_value(&r.records[0]).unwrap();
        let keys: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(|k| k.as_str())
            .collect();
        for key in [
            "metric",
            "mean",
            "stderr",
            "threshold",
            "pass",
            "trials",
            "seed",
        ] {
            assert!(keys.contains(&key), "{key}");
        }
        assert_eq!(json["seed"], 9);
    }
}
