//! The four commands. Each writes its artifacts into the output directory and
//! returns whether every assertion it made passed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use specbulk_core::{
    class_trace_functional, convergence_report, density_grid, first_order, g_derivative,
    histogram_report, log_det_functional, norm_bound_report, omega_radius_bound, outlier_report,
    radius_fuzz_report, second_order, second_order_report, solve_g, support_detect,
    variance_scaling_report, wireless_report, zero_eigenvalue_report, Complex64, ConvergenceProbes,
    DensityGrid, HistogramBins, McReport, ModelParams, ResolventPoint, SolverOptions,
};

use crate::config::{GridSection, LoadedConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] specbulk_core::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub struct Context<'a> {
    pub loaded: &'a LoadedConfig,
    pub out: &'a Path,
    pub seed: u64,
    pub z: &'a [Complex64],
}

impl Context<'_> {
    fn opts(&self) -> &SolverOptions {
        &self.loaded.config.solver
    }

    fn params(&self) -> CliResult<ModelParams> {
        self.loaded
            .config
            .model
            .build()
            .map_err(|e| CliError::Config(format!("invalid model: {e}")))
    }

    fn hash_comment(&self) -> String {
        format!("config_sha256={}", self.loaded.sha256)
    }

    fn create(&self, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        Ok((path, BufWriter::new(file)))
    }

    /// Writes a JSON artifact with the config hash as its first key.
    fn write_json(&self, name: &str, body: Value) -> CliResult<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("config_sha256".into(), json!(self.loaded.sha256));
        match body {
            Value::Object(map) => doc.extend(map),
            other => {
                doc.insert("data".into(), other);
            }
        }
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(doc))
            .map_err(std::io::Error::from)
            .and_then(|_| writeln!(w))
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Output { path, source })
    }
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().copied().map(pair).collect()
}

fn complex(z: [f64; 2]) -> Complex64 {
    Complex64::new(z[0], z[1])
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("config has no \"{section}\" section"))
}

pub fn cmd_density(ctx: &Context) -> CliResult<bool> {
    let section = ctx
        .loaded
        .config
        .density
        .as_ref()
        .ok_or_else(|| missing("density"))?;
    let params = ctx.params()?;
    let mut grid = density_grid(
        section.x_min,
        section.x_max,
        section.points,
        &params,
        ctx.opts(),
    )?;
    if let Some(threshold) = section.threshold {
        grid.support = support_detect(&grid, &params, ctx.opts(), Some(threshold))?;
    }

    let (path, mut w) = ctx.create("density.csv")?;
    grid.write_csv(&mut w, &[ctx.hash_comment()])
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Output { path, source })?;
    ctx.write_json("support.json", grid.support_json())?;

    println!("support: {}", format_support(&grid.support));
    println!("atom at zero: {}", grid.atom_at_zero);
    println!("total mass: {:.6}", grid.total_mass);
    Ok(true)
}

fn format_support(support: &[(f64, f64)]) -> String {
    support
        .iter()
        .map(|(l, r)| format!("[{l:.6}, {r:.6}]"))
        .collect::<Vec<_>>()
        .join(" ∪ ")
}

fn point_json(point: &ResolventPoint, derivative: Option<&[Complex64]>) -> Value {
    let mut v = json!({
        "z": pair(point.z),
        "g": pairs(&point.g),
        "g_tilde": pairs(&point.g_tilde),
        "m_mu": pair(point.m_mu),
        "iterations": point.iterations,
        "residual": point.residual,
    });
    if let Some(d) = derivative {
        v["g_prime"] = json!(pairs(d));
    }
    v
}

pub fn cmd_solve(ctx: &Context) -> CliResult<bool> {
    let section = ctx.loaded.config.solve.as_ref();
    let zs: Vec<Complex64> = if ctx.z.is_empty() {
        section
            .map(|s| s.z.iter().copied().map(complex).collect())
            .unwrap_or_default()
    } else {
        ctx.z.to_vec()
    };
    if zs.is_empty() {
        return Err(CliError::Config(
            "no z points: pass --z RE,IM or set solve.z".into(),
        ));
    }
    if let Some(z) = zs.iter().find(|z| z.norm() == 0.0) {
        return Err(CliError::Config(format!(
            "z = {z} is not allowed: 0 is never at positive distance from S ∪ {{0}}"
        )));
    }
    let derivative = section.is_some_and(|s| s.derivative);
    let params = ctx.params()?;
    let mut points = Vec::with_capacity(zs.len());
    for &z in &zs {
        let point = solve_g(z, &params, ctx.opts(), None)?;
        let d = if derivative {
            Some(g_derivative(&point, &params)?)
        } else {
            None
        };
        println!(
            "z = {z}: m_mu = {}, {} iterations, residual {:.2e}",
            point.m_mu, point.iterations, point.residual
        );
        points.push(point_json(&point, d.as_deref()));
    }
    ctx.write_json("points.json", json!({ "points": points }))?;
    Ok(true)
}

pub fn cmd_equivalents(ctx: &Context) -> CliResult<bool> {
    let section = ctx.loaded.config.equivalents.as_ref();
    let (z1, z2) = match ctx.z {
        [] => {
            let s = section.ok_or_else(|| missing("equivalents"))?;
            let z1 =
                complex(s.z1.ok_or_else(|| CliError::Config("equivalents.z1 is required".into()))?);
            (z1, s.z2.map(complex).unwrap_or(z1.conj()))
        }
        [z1] => (*z1, z1.conj()),
        [z1, z2] => (*z1, *z2),
        more => {
            return Err(CliError::Config(format!(
                "equivalents takes one or two --z values, got {}",
                more.len()
            )))
        }
    };
    let params = ctx.params()?;
    let opts = ctx.opts();
    let p1 = solve_g(z1, &params, opts, None)?;
    let p2 = solve_g(z2, &params, opts, None)?;
    let so = second_order(&p1, &p2, &params)?;
    let inv_p = 1.0 / params.p() as f64;
    let mut first = Vec::new();
    for point in [&p1, &p2] {
        let eq = first_order(point, &params)?;
        let trace_qt = eq.q_tilde_bar.diag().sum() * inv_p;
        first.push(json!({
            "z": pair(point.z),
            "g": pairs(&point.g),
            "g_tilde": pairs(&point.g_tilde),
            "trace_q_bar_over_n": pair(eq.normalized_trace(&params)),
            "trace_q_tilde_bar_over_p": pair(trace_qt),
        }));
    }
    let bound = omega_radius_bound(z1, &params);
    let conjugate = z2 == z1.conj();

    let mut functionals = Vec::new();
    for &s2 in section.map(|s| s.sigma2.as_slice()).unwrap_or(&[]) {
        if s2.is_nan() || s2 <= 0.0 {
            return Err(CliError::Config(format!("sigma2 = {s2} must be positive")));
        }
        let point = solve_g(Complex64::new(-s2, 0.0), &params, opts, None)?;
        let class_trace = (0..params.k())
            .map(|a| class_trace_functional(-s2, a, &point, &params))
            .collect::<Result<Vec<_>, _>>()?;
        functionals.push(json!({
            "sigma2": s2,
            "log_det": log_det_functional(s2, &params, opts)?,
            "class_trace": class_trace,
        }));
    }

    println!("ρ(Ω(z1, z2)) = {:.10}", so.spectral_radius_omega);
    if conjugate {
        println!("bound 1 − ((Im z)²/(|z|(|Im z| + C_max)))² = {bound:.10}");
    }
    ctx.write_json(
        "equivalents.json",
        json!({
            "second_order": so.to_json(),
            "rho_bound": bound,
            "rho_bound_applies": conjugate,
            "first_order": first,
            "functionals": functionals,
        }),
    )?;
    Ok(true)
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    seed: u64,
    trials: usize,
    pass: bool,
    reports: &'a BTreeMap<String, McReport>,
}

fn grid_for(
    cache: &mut Vec<(GridSection, DensityGrid)>,
    section: &GridSection,
    params: &ModelParams,
    opts: &SolverOptions,
) -> CliResult<DensityGrid> {
    let same = |g: &GridSection| {
        g.x_min == section.x_min && g.x_max == section.x_max && g.points == section.points
    };
    if let Some((_, grid)) = cache.iter().find(|(g, _)| same(g)) {
        return Ok(grid.clone());
    }
    let grid = density_grid(section.x_min, section.x_max, section.points, params, opts)?;
    cache.push((section.clone(), grid.clone()));
    Ok(grid)
}

pub fn cmd_simulate(ctx: &Context) -> CliResult<bool> {
    let sim = ctx
        .loaded
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| missing("simulate"))?;
    let params = ctx.params()?;
    let opts = ctx.opts();
    let (trials, seed) = (sim.trials, ctx.seed);
    let mut reports = BTreeMap::new();
    let mut grids = Vec::new();

    if let Some(h) = &sim.histogram {
        let grid = grid_for(&mut grids, &h.grid, &params, opts)?;
        let bins = HistogramBins {
            lo: h.lo,
            hi: h.hi,
            width: h.width,
        };
        let (report, hist) = histogram_report(&params, &grid, trials, bins, h.l1_threshold, seed)?;
        let (path, mut w) = ctx.create("histogram.csv")?;
        hist.write_csv(&mut w, &[ctx.hash_comment()])
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Output { path, source })?;
        reports.insert("histogram".to_string(), report);
    }
    if let Some(o) = &sim.outliers {
        let grid = grid_for(&mut grids, &o.grid, &params, opts)?;
        reports.insert(
            "outliers".to_string(),
            outlier_report(&params, &grid.support, trials, o.threshold, seed)?,
        );
    }
    if let Some(c) = &sim.convergence {
        let probes = ConvergenceProbes::default_for(&params);
        for &z in &c.z {
            let z = complex(z);
            reports.insert(
                format!("convergence.z={z}"),
                convergence_report(&params, z, trials, &probes, seed, opts)?,
            );
        }
    }
    if let Some(s) = &sim.second_order {
        for &[z1, z2] in &s.pairs {
            let (z1, z2) = (complex(z1), complex(z2));
            reports.insert(
                format!("second_order.z1={z1}.z2={z2}"),
                second_order_report(&params, z1, z2, trials, seed, opts)?,
            );
        }
    }
    if let Some(v) = &sim.variance_scaling {
        reports.insert(
            "variance_scaling".to_string(),
            variance_scaling_report(
                &ctx.loaded.config.model,
                complex(v.z),
                trials,
                &v.p_list,
                v.ratio_window,
                seed,
            )?,
        );
    }
    if sim.norm_bound.is_some() {
        reports.insert(
            "norm_bound".to_string(),
            norm_bound_report(&params, trials, seed)?,
        );
    }
    if sim.zero_eigenvalues.is_some() {
        reports.insert(
            "zero_eigenvalues".to_string(),
            zero_eigenvalue_report(&params, trials, seed)?,
        );
    }
    if let Some(wl) = &sim.wireless {
        reports.insert(
            "wireless".to_string(),
            wireless_report(&params, &wl.sigma2, trials, seed, opts)?,
        );
    }
    if let Some(f) = &sim.radius_fuzz {
        reports.insert(
            "radius_fuzz".to_string(),
            radius_fuzz_report(f.cases, seed)?,
        );
    }
    if reports.is_empty() {
        return Err(CliError::Config(
            "simulate section requests no reports".into(),
        ));
    }

    let pass = reports.values().all(McReport::all_pass);
    for (name, report) in &reports {
        for r in &report.records {
            let status = if r.pass { "ok  " } else { "FAIL" };
            println!(
                "{status} {name}: {} = {:.6e} (stderr {:.2e})",
                r.metric, r.mean, r.stderr
            );
        }
    }
    let body = serde_json::to_value(SimulateOutput {
        seed,
        trials,
        pass,
        reports: &reports,
    })
    .expect("reports serialize");
    ctx.write_json("report.json", body)?;
    if !pass {
        let failed: Vec<String> = reports
            .iter()
            .flat_map(|(name, r)| {
                r.failures()
                    .into_iter()
                    .map(move |f| format!("{name}: {}", f.metric))
            })
            .collect();
        eprintln!("failed metrics: {}", failed.join(", "));
    }
    Ok(pass)
}

pub fn ensure_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Output {
        path: out.to_path_buf(),
        source,
    })
}
