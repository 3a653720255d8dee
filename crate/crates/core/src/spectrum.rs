//! Density of the limiting spectral measure on a real grid, support detection
//! with edge refinement, and the atom at zero.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed_point::{solve_g, solve_grid_chunked, ResolventPoint, SolverOptions};
use crate::linalg;
use crate::model::ModelParams;

/// Imaginary part used when refining support edges.
pub const EDGE_ETA: f64 = 1e-6;
const BISECTION_STEPS: usize = 40;
const GRID_CHUNK: usize = 128;
const ATOM_ETAS: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, Serialize)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    /// Density of the continuous part at `x + iη`; the atom at zero is
    /// reported separately and its Cauchy smear is removed.
    pub density: Vec<f64>,
    pub eta: f64,
    pub support: Vec<(f64, f64)>,
    pub atom_at_zero: f64,
    pub total_mass: f64,
    #[serde(skip)]
    warm: Vec<Option<Vec<Complex64>>>,
}

impl DensityGrid {
    /// Wraps precomputed values; support and mass are left for the caller.
    pub fn from_values(xs: Vec<f64>, density: Vec<f64>, eta: f64) -> Result<Self> {
        if xs.len() != density.len() {
            return Err(Error::InvalidArgument(
                "xs and density differ in length".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "grid must be strictly ascending".into(),
            ));
        }
        let warm = vec![None; xs.len()];
        let mut grid = DensityGrid {
            xs,
            density,
            eta,
            support: Vec::new(),
            atom_at_zero: 0.0,
            total_mass: 0.0,
            warm,
        };
        grid.total_mass = grid.integral();
        Ok(grid)
    }

    pub fn spacing(&self) -> f64 {
        if self.xs.len() < 2 {
            0.0
        } else {
            (self.xs[self.xs.len() - 1] - self.xs[0]) / (self.xs.len() - 1) as f64
        }
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Mass of the continuous part on `[lo, hi]`: the exact integral of the
    /// linear interpolant, zero outside the grid.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for (x, d) in self.xs.windows(2).zip(self.density.windows(2)) {
            let a = lo.max(x[0]);
            let b = hi.min(x[1]);
            if b <= a {
                continue;
            }
            let at = |t: f64| d[0] + (d[1] - d[0]) * (t - x[0]) / (x[1] - x[0]);
            total += 0.5 * (b - a) * (at(a) + at(b));
        }
        total
    }

    /// `x,density` rows, optionally preceded by `# comment` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "x,density")?;
        for (x, d) in self.xs.iter().zip(&self.density) {
            writeln!(out, "{x},{d}")?;
        }
        Ok(())
    }

    /// `{"support":[[l,r],…],"atom_at_zero":m,"eta":η}`.
    pub fn support_json(&self) -> serde_json::Value {
        serde_json::json!({
            "support": self.support.iter().map(|(l, r)| [*l, *r]).collect::<Vec<_>>(),
            "atom_at_zero": self.atom_at_zero,
            "eta": self.eta,
        })
    }
}

fn raw_density(point: &ResolventPoint) -> f64 {
    point.m_mu.im / PI
}

/// Cauchy smear of an atom of mass `atom` at zero, seen at `x + iη`.
fn atom_smear(atom: f64, x: f64, eta: f64) -> f64 {
    atom * eta / (PI * (x * x + eta * eta))
}

/// `(1/π) Im m_μ(x + iη)`, clamped at zero.
pub fn density_at(x: f64, eta: f64, params: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    check_eta(eta)?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("x = {x} is not finite")));
    }
    let point = solve_g(Complex64::new(x, eta), params, opts, None)?;
    Ok(raw_density(&point).max(0.0))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eta = {eta} must be positive"
        )));
    }
    Ok(())
}

/// Density on a uniform grid of `n_points` over `[x_min, x_max]` at
/// `η = max(1e-5, 0.1 Δx)`, with support, atom and total mass filled in.
pub fn density_grid(
    x_min: f64,
    x_max: f64,
    n_points: usize,
    params: &ModelParams,
    opts: &SolverOptions,
) -> Result<DensityGrid> {
    if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite x_min < x_max, got [{x_min}, {x_max}]"
        )));
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument("n_points must be at least 2".into()));
    }
    let dx = (x_max - x_min) / (n_points - 1) as f64;
    let eta = (0.1 * dx).max(1e-5);
    let xs: Vec<f64> = (0..n_points).map(|i| x_min + i as f64 * dx).collect();
    let zs: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x, eta)).collect();
    let points = solve_grid_chunked(&zs, params, opts, GRID_CHUNK)?;
    let atom = atom_at_zero(params, opts)?;

    let density = points
        .iter()
        .map(|pt| {
            let d = raw_density(pt) - atom_smear(atom, pt.z.re, eta);
            if d < -1e-10 {
                log::debug!("density {d:e} at x = {} clamped to zero", pt.z.re);
            }
            d.max(0.0)
        })
        .collect();
    let warm = points.into_iter().map(|pt| Some(pt.g)).collect();
    let mut grid = DensityGrid {
        xs,
        density,
        eta,
        support: Vec::new(),
        atom_at_zero: atom,
        total_mass: 0.0,
        warm,
    };
    grid.total_mass = atom + grid.integral();
    grid.support = support_detect(&grid, params, opts, None)?;
    Ok(grid)
}

/// Continuous-part density at `x + i EDGE_ETA`, warm-started when possible.
fn sharp_density(
    x: f64,
    atom: f64,
    warm: Option<&[Complex64]>,
    params: &ModelParams,
    opts: &SolverOptions,
) -> Result<(f64, Vec<Complex64>)> {
    let z = Complex64::new(x, EDGE_ETA);
    let point = match solve_g(z, params, opts, warm) {
        Ok(p) => p,
        Err(e) if warm.is_some() && e.is_numerical() => solve_g(z, params, opts, None)?,
        Err(e) => return Err(e),
    };
    let d = raw_density(&point) - atom_smear(atom, x, EDGE_ETA);
    Ok((d, point.g))
}

/// Disjoint ascending intervals where the density exceeds `threshold`
/// (default `1e-4 · max density`).
///
/// Candidate runs are read off the smoothed grid and trimmed using the density
/// at `η = EDGE_ETA`; each endpoint is then bisected between neighbouring grid
/// points. Intervals closer than two grid spacings merge.
pub fn support_detect(
    grid: &DensityGrid,
    params: &ModelParams,
    opts: &SolverOptions,
    threshold: Option<f64>,
) -> Result<Vec<(f64, f64)>> {
    let n = grid.xs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty density grid".into()));
    }
    let max = grid.max_density();
    let threshold = threshold.unwrap_or(1e-4 * max);
    if !(threshold > 0.0) {
        return Ok(Vec::new());
    }
    let atom = grid.atom_at_zero;
    let warm_at = |i: usize| grid.warm.get(i).and_then(|w| w.as_deref());

    // Candidate runs where the smoothed density exceeds the threshold.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if grid.density[i] > threshold {
            let start = i;
            while i + 1 < n && grid.density[i + 1] > threshold {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }

    let sharp_at = |i: usize| -> Result<f64> {
        sharp_density(grid.xs[i], atom, warm_at(i), params, opts)
            .map(|(d, _)| d)
            .map_err(|e| e.at_index(i))
    };

    let refine = |inside: usize, outside: usize| -> Result<f64> {
        let mut x_in = grid.xs[inside];
        let mut x_out = grid.xs[outside];
        let mut warm = warm_at(inside).map(<[Complex64]>::to_vec);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (x_in + x_out);
            let (d, g) = sharp_density(mid, atom, warm.as_deref(), params, opts)?;
            if d > threshold {
                x_in = mid;
                warm = Some(g);
            } else {
                x_out = mid;
            }
        }
        Ok(0.5 * (x_in + x_out))
    };

    // Within one candidate run: smoothing widens bulks by its tails and can
    // bridge narrow gaps. Local minima of the smoothed density are checked
    // sharply to find gaps, then each piece is trimmed from both ends.
    let resolve_run = |(l, r): (usize, usize)| -> Result<Vec<(f64, f64)>> {
        let mut cuts = Vec::new();
        for j in l + 1..r {
            let d = &grid.density;
            if d[j] <= d[j - 1] && d[j] <= d[j + 1] && sharp_at(j)? <= threshold {
                cuts.push(j);
            }
        }
        let mut bounds = vec![(l, false)];
        bounds.extend(cuts.iter().map(|&c| (c, true)));
        bounds.push((r, false));

        let mut out = Vec::new();
        for w in bounds.windows(2) {
            let (lo, lo_cut) = w[0];
            let (hi, hi_cut) = w[1];
            let lo = if lo_cut { lo + 1 } else { lo };
            let hi = if hi_cut { hi - 1 } else { hi };
            if lo > hi {
                continue;
            }
            let mut first = None;
            for j in lo..=hi {
                if sharp_at(j)? > threshold {
                    first = Some(j);
                    break;
                }
            }
            let Some(first) = first else { continue };
            let mut last = first;
            for j in (first..=hi).rev() {
                if j == first || sharp_at(j)? > threshold {
                    last = j;
                    break;
                }
            }
            let left = if first == 0 {
                grid.xs[0]
            } else {
                refine(first, first - 1).map_err(|e| e.at_index(first))?
            };
            let right = if last + 1 == n {
                grid.xs[n - 1]
            } else {
                refine(last, last + 1).map_err(|e| e.at_index(last))?
            };
            out.push((left, right));
        }
        Ok(out)
    };

    let mut intervals: Vec<(f64, f64)> = runs
        .par_iter()
        .map(|&run| resolve_run(run))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let gap = 2.0 * grid.spacing();
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (l, r) in intervals.drain(..) {
        match merged.last_mut() {
            Some(last) if l - last.1 < gap => last.1 = last.1.max(r),
            _ => merged.push((l, r)),
        }
    }
    let x_max = grid.xs[n - 1];
    Ok(merged
        .into_iter()
        .map(|(l, r)| (l.clamp(0.0, x_max.max(0.0)), r.clamp(0.0, x_max.max(0.0))))
        .filter(|(l, r)| r > l)
        .collect())
}

/// Atom estimate with the raw values behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomEstimate {
    pub value: f64,
    /// True when the rank argument applies (all covariances nonsingular).
    pub exact: bool,
    /// `η Im m_μ(iη)` at each η used; empty for the exact rule.
    pub samples: Vec<(f64, f64)>,
    /// Samples failed to decrease monotonically with η.
    pub flagged: bool,
}

/// Mass of `μ` at zero. Exact `max(0, 1 − c0)` for nonsingular covariances,
/// otherwise extrapolated from `η Im m_μ(iη)` as `η → 0`.
pub fn atom_estimate(params: &ModelParams, opts: &SolverOptions) -> Result<AtomEstimate> {
    if params.all_nonsingular() {
        return Ok(AtomEstimate {
            value: (1.0 - params.c0()).max(0.0),
            exact: true,
            samples: Vec::new(),
            flagged: false,
        });
    }
    let zs: Vec<Complex64> = ATOM_ETAS.iter().map(|&e| Complex64::new(0.0, e)).collect();
    let points = crate::fixed_point::solve_grid(&zs, params, opts)?;
    let samples: Vec<(f64, f64)> = ATOM_ETAS
        .iter()
        .zip(&points)
        .map(|(&eta, pt)| (eta, eta * pt.m_mu.im))
        .collect();
    let f: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let flagged = f.windows(2).any(|w| w[1] > w[0] + 1e-12);
    if flagged {
        log::warn!(
            "atom extrapolation is not monotone in eta: {f:?}; treat the estimate with care"
        );
    }
    // Linear Richardson on consecutive decades, then once more on the pair.
    let r1 = (10.0 * f[1] - f[0]) / 9.0;
    let r2 = (10.0 * f[2] - f[1]) / 9.0;
    let value = ((10.0 * r2 - r1) / 9.0).clamp(0.0, 1.0);
    Ok(AtomEstimate {
        value,
        exact: false,
        samples,
        flagged,
    })
}

pub fn atom_at_zero(params: &ModelParams, opts: &SolverOptions) -> Result<f64> {
    atom_estimate(params, opts).map(|a| a.value)
}

/// Linear independence of `{C_1, …, C_k, I_p}` under the Frobenius product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceReport {
    /// Smallest eigenvalue of the normalized Gram matrix.
    pub min_gram_eigenvalue: f64,
    pub independent: bool,
}

/// Reports (does not enforce) whether `{C_a} ∪ {I}` is linearly independent
/// within `1e-8`.
pub fn linear_independence(params: &ModelParams) -> Result<IndependenceReport> {
    let p = params.p();
    let eye = Array2::<f64>::eye(p);
    let mut mats: Vec<&Array2<f64>> = params.covariances().iter().collect();
    mats.push(&eye);
    let m = mats.len();
    let norms: Vec<f64> = mats
        .iter()
        .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let gram = Array2::from_shape_fn((m, m), |(i, j)| {
        let dot: f64 = mats[i].iter().zip(mats[j].iter()).map(|(a, b)| a * b).sum();
        let denom = norms[i] * norms[j];
        if denom > 0.0 {
            dot / denom
        } else {
            0.0
        }
    });
    let ev = linalg::sym_eigenvalues(&gram)?;
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(IndependenceReport {
        min_gram_eigenvalue: min,
        independent: min > 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn mp(p: usize, n: usize) -> ModelParams {
        ModelSpec::marchenko_pastur(p, n).build().unwrap()
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn mass_between_integrates_the_interpolant() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let density = xs.iter().map(|x| 2.0 * x).collect();
        let grid = DensityGrid::from_values(xs, density, 1e-3).unwrap();
        assert!((grid.mass_between(0.25, 0.75) - 0.5).abs() < 1e-12);
        assert!((grid.mass_between(-1.0, 2.0) - 1.0).abs() < 1e-12);
        assert_eq!(grid.mass_between(1.5, 2.0), 0.0);
    }

    #[test]
    fn mp_density_at_one() {
        let d = density_at(1.0, 1e-5, &mp(64, 64), &opts()).unwrap();
        assert!((d - 3.0_f64.sqrt() / (2.0 * PI)).abs() < 2e-3, "{d}");
    }

    #[test]
    fn density_vanishes_on_negative_axis() {
        let d = density_at(-5.0, 1e-5, &mp(64, 64), &opts()).unwrap();
        assert!(d <= 1e-3);
    }

    #[test]
    fn mp_square_support() {
        let grid = density_grid(0.0, 5.0, 501, &mp(64, 64), &opts()).unwrap();
        assert_eq!(grid.support.len(), 1, "{:?}", grid.support);
        let (l, r) = grid.support[0];
        assert!(l.abs() < 0.02 && (r - 4.0).abs() < 0.02, "{l} {r}");
        assert!(
            (0.98..=1.02).contains(&grid.total_mass),
            "{}",
            grid.total_mass
        );
        assert!(grid.density.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn mp_tall_support() {
        let grid = density_grid(0.0, 3.0, 601, &mp(256, 32), &opts()).unwrap();
        let s = (1.0_f64 / 8.0).sqrt();
        assert_eq!(grid.support.len(), 1, "{:?}", grid.support);
        let (l, r) = grid.support[0];
        assert!((l - (1.0 - s).powi(2)).abs() < 0.02, "{l}");
        assert!((r - (1.0 + s).powi(2)).abs() < 0.02, "{r}");
        assert_eq!(grid.atom_at_zero, 0.0);
        assert!(
            (0.98..=1.02).contains(&grid.total_mass),
            "{}",
            grid.total_mass
        );
    }

    #[test]
    fn mass_with_atom() {
        let params = mp(32, 64);
        let grid = density_grid(0.0, 7.0, 701, &params, &opts()).unwrap();
        assert_eq!(grid.atom_at_zero, 0.5);
        assert!(
            (0.98..=1.02).contains(&grid.total_mass),
            "{}",
            grid.total_mass
        );
        assert_eq!(grid.support.len(), 1, "{:?}", grid.support);
        let edge = (1.0 - 2.0_f64.sqrt()).powi(2);
        assert!(
            (grid.support[0].0 - edge).abs() < 0.02,
            "{:?}",
            grid.support
        );
    }

    #[test]
    fn zero_density_has_no_support() {
        let grid = DensityGrid::from_values(vec![0.0, 1.0, 2.0], vec![0.0; 3], 0.1).unwrap();
        assert!(support_detect(&grid, &mp(8, 8), &opts(), None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let grid = DensityGrid::from_values(vec![], vec![], 0.1).unwrap();
        assert!(support_detect(&grid, &mp(8, 8), &opts(), None).is_err());
    }

    #[test]
    fn grid_rejects_bad_range() {
        assert!(density_grid(1.0, 1.0, 10, &mp(8, 8), &opts()).is_err());
        assert!(density_grid(0.0, 1.0, 1, &mp(8, 8), &opts()).is_err());
    }

    #[test]
    fn atom_rank_rule() {
        assert_eq!(atom_at_zero(&mp(64, 8), &opts()).unwrap(), 0.0);
        assert_eq!(atom_at_zero(&mp(32, 64), &opts()).unwrap(), 0.5);
    }

    #[test]
    fn atom_limit_for_singular_covariance() {
        // Half of the directions carry no variance: W has rank p/2 = n.
        let p = 64;
        let values: Vec<f64> = (0..p).map(|i| if i < p / 2 { 1.0 } else { 0.0 }).collect();
        let params = ModelParams::new(
            p,
            vec![p / 2],
            vec![Array2::from_diag(&ndarray::Array1::from(values))],
        )
        .unwrap();
        let est = atom_estimate(&params, &opts()).unwrap();
        assert!(!est.exact);
        assert!(est.value < 0.02, "{est:?}");

        // Rank p/2 < n = p: mass 1/2 at zero.
        let values: Vec<f64> = (0..p).map(|i| if i < p / 2 { 1.0 } else { 0.0 }).collect();
        let params = ModelParams::new(
            p,
            vec![p],
            vec![Array2::from_diag(&ndarray::Array1::from(values))],
        )
        .unwrap();
        let est = atom_estimate(&params, &opts()).unwrap();
        assert!((est.value - 0.5).abs() < 0.02, "{est:?}");
    }

    #[test]
    fn eta_refinement_converges_inside_bulk() {
        let params = mp(64, 64);
        let d: Vec<f64> = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
            .iter()
            .map(|&e| density_at(1.0, e, &params, &opts()).unwrap())
            .collect();
        let steps: Vec<f64> = d.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
    }

    #[test]
    fn csv_and_sidecar() {
        let mut grid = DensityGrid::from_values(vec![0.0, 1.0], vec![0.5, 0.25], 0.1).unwrap();
        grid.support = vec![(0.0, 1.0)];
        let mut buf = Vec::new();
        grid.write_csv(&mut buf, &["config_sha256=ab".into()])
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# config_sha256=ab\nx,density\n0,0.5\n1,0.25\n");
        let json = grid.support_json();
        assert_eq!(json["support"][0][1], 1.0);
        assert_eq!(json["eta"], 0.1);
    }

    #[test]
    fn independence_report() {
        let r = linear_independence(&mp(8, 8)).unwrap();
        assert!(!r.independent);
        let r = linear_independence(&ModelSpec::three_class_toeplitz(64).build().unwrap()).unwrap();
        assert!(!r.independent, "C_1 = I duplicates the identity");
    }
}
