//! The k-class covariance model: compact covariance specifications, validated
//! model parameters and the dense covariance file format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Compact description of one class covariance `C_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Identity,
    ScaledIdentity {
        scale: f64,
    },
    /// `M_ij = scale * rho^|i-j|`.
    Toeplitz {
        scale: f64,
        rho: f64,
    },
    Diagonal {
        values: Vec<f64>,
    },
    /// Dense matrix read from a plain-text file (see [`read_dense_covariance`]).
    Dense {
        path: PathBuf,
    },
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceSpec::Identity | CovarianceSpec::Dense { .. } => Ok(()),
            CovarianceSpec::ScaledIdentity { scale } => check_scale(*scale),
            CovarianceSpec::Toeplitz { scale, rho } => {
                check_scale(*scale)?;
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::Validation(format!(
                        "toeplitz rho must lie in [0, 1), got {rho}"
                    )));
                }
                Ok(())
            }
            CovarianceSpec::Diagonal { values } => {
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::Validation(format!(
                        "diagonal covariance entries must be finite and >= 0, got {v}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// True when the spec describes a matrix that stays meaningful when `p` changes.
    pub fn is_dimension_free(&self) -> bool {
        !matches!(
            self,
            CovarianceSpec::Diagonal { .. } | CovarianceSpec::Dense { .. }
        )
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "covariance scale must be finite and > 0, got {scale}"
        )))
    }
}

/// Builds the `p x p` covariance described by `spec`.
pub fn build_covariance(spec: &CovarianceSpec, p: usize) -> Result<Array2<f64>> {
    spec.validate()?;
    if p == 0 {
        return Err(Error::Validation("dimension p must be positive".into()));
    }
    let m = match spec {
        CovarianceSpec::Identity => Array2::eye(p),
        CovarianceSpec::ScaledIdentity { scale } => Array2::eye(p) * *scale,
        CovarianceSpec::Toeplitz { scale, rho } => {
            Array2::from_shape_fn((p, p), |(i, j)| scale * rho.powi(i.abs_diff(j) as i32))
        }
        CovarianceSpec::Diagonal { values } => {
            if values.len() != p {
                return Err(Error::Validation(format!(
                    "diagonal covariance has {} entries, expected p = {p}",
                    values.len()
                )));
            }
            Array2::from_diag(&Array1::from(values.clone()))
        }
        CovarianceSpec::Dense { path } => {
            let m = read_dense_covariance(path)?;
            if m.nrows() != p {
                return Err(Error::DimensionMismatch {
                    index: 0,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    p,
                });
            }
            let min_eig = linalg::sym_eigenvalues(&m)?[0];
            if min_eig < -PSD_TOL {
                return Err(Error::NotPsd {
                    min_eigenvalue: min_eig,
                });
            }
            m
        }
    };
    Ok(m)
}

/// Reads a dense covariance: first line `p`, then `p` rows of `p` decimals.
pub fn read_dense_covariance(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    parse_dense_covariance(&text)
}

pub fn parse_dense_covariance(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Validation("empty covariance file".into()))?;
    let p: usize = header
        .parse()
        .map_err(|_| Error::Validation(format!("bad dimension line {header:?}")))?;
    if p == 0 {
        return Err(Error::Validation(
            "covariance dimension must be positive".into(),
        ));
    }
    let mut m = Array2::zeros((p, p));
    for i in 0..p {
        let row = lines
            .next()
            .ok_or_else(|| Error::Validation(format!("expected {p} rows, found {i}")))?;
        let values: Vec<f64> = row
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad number {t:?} in row {i}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != p {
            return Err(Error::Validation(format!(
                "row {i} has {} entries, expected {p}",
                values.len()
            )));
        }
        m.row_mut(i).assign(&Array1::from(values));
    }
    if lines.next().is_some() {
        return Err(Error::Validation(format!("more than {p} rows")));
    }
    for i in 0..p {
        for j in 0..i {
            let scale = 1.0_f64.max(m[(i, j)].abs());
            if (m[(i, j)] - m[(j, i)]).abs() > PSD_TOL * scale {
                return Err(Error::Validation(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(m)
}

pub fn format_dense_covariance(m: &Array2<f64>) -> String {
    let mut out = format!("{}\n", m.nrows());
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

/// One class of the mixture: its size and covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub n: usize,
    pub covariance: CovarianceSpec,
}

/// Compact model description; can be rebuilt at other dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub p: usize,
    pub classes: Vec<ClassSpec>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelParams> {
        let covariances = self
            .classes
            .iter()
            .map(|c| build_covariance(&c.covariance, self.p))
            .collect::<Result<Vec<_>>>()?;
        validate_model(
            self.p,
            self.classes.iter().map(|c| c.n).collect(),
            covariances,
        )
    }

    /// Same class ratios and covariance family at dimension `p`.
    pub fn with_dimension(&self, p: usize) -> Result<ModelSpec> {
        let mut classes = Vec::with_capacity(self.classes.len());
        for class in &self.classes {
            if !class.covariance.is_dimension_free() && p != self.p {
                return Err(Error::InvalidArgument(
                    "diagonal and dense covariances cannot be rescaled".into(),
                ));
            }
            let scaled = class.n * p;
            if !scaled.is_multiple_of(self.p) {
                return Err(Error::InvalidArgument(format!(
                    "class size {} does not scale to an integer at p = {p}",
                    class.n
                )));
            }
            classes.push(ClassSpec {
                n: scaled / self.p,
                covariance: class.covariance.clone(),
            });
        }
        Ok(ModelSpec { p, classes })
    }

    /// Single identity class: the Marchenko-Pastur ensemble with `c0 = p / n`.
    pub fn marchenko_pastur(p: usize, n: usize) -> Self {
        ModelSpec {
            p,
            classes: vec![ClassSpec {
                n,
                covariance: CovarianceSpec::Identity,
            }],
        }
    }

    /// Three classes with `c = (1/8, 5/8, 1/4)`, `c0 = 8` and covariances
    /// `[C_a]_ij = (8(a-1)+1) ((a-1)/5)^|i-j|`. Requires `p` divisible by 64.
    pub fn three_class_toeplitz(p: usize) -> Self {
        let n = p / 8;
        let sizes = [n / 8, 5 * n / 8, n / 4];
        let classes = sizes
            .iter()
            .enumerate()
            .map(|(a, &n_a)| ClassSpec {
                n: n_a,
                covariance: if a == 0 {
                    CovarianceSpec::Identity
                } else {
                    CovarianceSpec::Toeplitz {
                        scale: (8 * a + 1) as f64,
                        rho: a as f64 / 5.0,
                    }
                },
            })
            .collect();
        ModelSpec { p, classes }
    }
}

/// Validated model: dimension, class sizes, PSD covariances and derived ratios.
#[derive(Debug, Clone)]
pub struct ModelParams {
    p: usize,
    class_sizes: Vec<usize>,
    covariances: Vec<Array2<f64>>,
    sqrt_covariances: Vec<Array2<f64>>,
    complex_covariances: Vec<CMatrix>,
    min_eigenvalues: Vec<f64>,
    n: usize,
    c0: f64,
    ratios: Vec<f64>,
    c_max: f64,
    diagonal: bool,
    identity: Vec<bool>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p
            && self.class_sizes == other.class_sizes
            && self.covariances == other.covariances
    }
}

/// Checks the raw model and fills the derived fields (`n`, `c0`, `c_a`, `C_max`).
///
/// Covariances are symmetrized; eigenvalues in `[-1e-10, 0)` are clamped to zero.
pub fn validate_model(
    p: usize,
    class_sizes: Vec<usize>,
    covariances: Vec<Array2<f64>>,
) -> Result<ModelParams> {
    if p == 0 {
        return Err(Error::Validation("dimension p must be positive".into()));
    }
    if class_sizes.is_empty() {
        return Err(Error::Validation("at least one class is required".into()));
    }
    if class_sizes.len() != covariances.len() {
        return Err(Error::Validation(format!(
            "{} class sizes but {} covariances",
            class_sizes.len(),
            covariances.len()
        )));
    }
    if let Some(a) = class_sizes.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {a} has zero size")));
    }

    let mut clean = Vec::with_capacity(covariances.len());
    let mut sqrt_covariances = Vec::with_capacity(covariances.len());
    let mut min_eigenvalues = Vec::with_capacity(covariances.len());
    let mut c_max = 0.0_f64;
    for (index, c) in covariances.into_iter().enumerate() {
        if c.nrows() != p || c.ncols() != p {
            return Err(Error::DimensionMismatch {
                index,
                rows: c.nrows(),
                cols: c.ncols(),
                p,
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "covariance {index} has non-finite entries"
            )));
        }
        let scale = c.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..p {
            for j in 0..i {
                if (c[(i, j)] - c[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Validation(format!(
                        "covariance {index} is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&c + &c.t()) * 0.5;
        let (values, vectors) = linalg::sym_eigen(&sym)?;
        let min_eig = values[0];
        if min_eig < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        let is_diag = is_diagonal(&sym);
        let (sym, values) = if min_eig < 0.0 && !is_diag {
            let clamped = values.mapv(|l| l.max(0.0));
            let rebuilt = (&vectors * &clamped).dot(&vectors.t());
            ((&rebuilt + &rebuilt.t()) * 0.5, clamped)
        } else if min_eig < 0.0 {
            (sym.mapv(|v| v.max(0.0)), values.mapv(|l| l.max(0.0)))
        } else {
            (sym, values)
        };
        c_max = c_max.max(values[values.len() - 1]);
        min_eigenvalues.push(values[0]);
        sqrt_covariances.push(if is_diag {
            Array2::from_diag(&sym.diag().mapv(f64::sqrt))
        } else {
            linalg::psd_sqrt(&values, &vectors)
        });
        clean.push(sym);
    }

    let n: usize = class_sizes.iter().sum();
    let ratios = class_sizes
        .iter()
        .map(|&n_a| n_a as f64 / n as f64)
        .collect();
    let diagonal = clean.iter().all(is_diagonal);
    let identity = clean.iter().map(is_identity).collect();
    let complex_covariances = clean.iter().map(linalg::to_complex).collect();
    Ok(ModelParams {
        p,
        class_sizes,
        covariances: clean,
        sqrt_covariances,
        complex_covariances,
        min_eigenvalues,
        n,
        c0: p as f64 / n as f64,
        ratios,
        c_max,
        diagonal,
        identity,
    })
}

fn is_diagonal(m: &Array2<f64>) -> bool {
    m.indexed_iter().all(|((i, j), v)| i == j || *v == 0.0)
}

fn is_identity(m: &Array2<f64>) -> bool {
    m.indexed_iter()
        .all(|((i, j), v)| if i == j { *v == 1.0 } else { *v == 0.0 })
}

impl ModelParams {
    pub fn new(p: usize, class_sizes: Vec<usize>, covariances: Vec<Array2<f64>>) -> Result<Self> {
        validate_model(p, class_sizes, covariances)
    }

    /// Runs validation again on the stored fields.
    pub fn revalidate(&self) -> Result<Self> {
        validate_model(self.p, self.class_sizes.clone(), self.covariances.clone())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    pub fn covariances(&self) -> &[Array2<f64>] {
        &self.covariances
    }

    pub fn covariance(&self, a: usize) -> &Array2<f64> {
        &self.covariances[a]
    }

    pub fn sqrt_covariance(&self, a: usize) -> &Array2<f64> {
        &self.sqrt_covariances[a]
    }

    pub(crate) fn complex_covariance(&self, a: usize) -> &CMatrix {
        &self.complex_covariances[a]
    }

    /// `c0 = p / n`.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// `c_a = n_a / n`.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// `max_a ||C_a||`.
    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn min_eigenvalues(&self) -> &[f64] {
        &self.min_eigenvalues
    }

    pub fn all_nonsingular(&self) -> bool {
        let floor = PSD_TOL * self.c_max.max(1.0);
        self.min_eigenvalues.iter().all(|&l| l > floor)
    }

    /// All covariances are diagonal, so every resolvent is diagonal too.
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub(crate) fn is_identity(&self, a: usize) -> bool {
        self.identity[a]
    }

    /// Index range of class `a` among the columns of `W`.
    pub fn class_range(&self, a: usize) -> std::ops::Range<usize> {
        let start: usize = self.class_sizes[..a].iter().sum();
        start..start + self.class_sizes[a]
    }

    /// Class label of every column.
    pub fn column_classes(&self) -> Vec<usize> {
        self.class_sizes
            .iter()
            .enumerate()
            .flat_map(|(a, &n_a)| std::iter::repeat_n(a, n_a))
            .collect()
    }

    /// Simple upper bound on the right edge of the limiting support.
    pub fn edge_bound(&self) -> f64 {
        self.c_max * (1.0 + (1.0 / self.c0).sqrt()).powi(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn toeplitz_with_zero_ratio_is_identity() {
        let m = build_covariance(
            &CovarianceSpec::Toeplitz {
                scale: 1.0,
                rho: 0.0,
            },
            3,
        )
        .unwrap();
        assert_eq!(m, Array2::<f64>::eye(3));
    }

    #[test]
    fn toeplitz_second_class() {
        let m = build_covariance(
            &CovarianceSpec::Toeplitz {
                scale: 9.0,
                rho: 0.2,
            },
            2,
        )
        .unwrap();
        let expected = array![[9.0, 1.8], [1.8, 9.0]];
        for (x, y) in m.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_spec() {
        let m = build_covariance(
            &CovarianceSpec::Diagonal {
                values: vec![2.0, 3.0],
            },
            2,
        )
        .unwrap();
        assert_eq!(m, array![[2.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(CovarianceSpec::Toeplitz {
            scale: 1.0,
            rho: 1.0
        }
        .validate()
        .is_err());
        assert!(CovarianceSpec::Toeplitz {
            scale: 0.0,
            rho: 0.5
        }
        .validate()
        .is_err());
        assert!(CovarianceSpec::ScaledIdentity { scale: -1.0 }
            .validate()
            .is_err());
        assert!(CovarianceSpec::Diagonal {
            values: vec![1.0, -0.1]
        }
        .validate()
        .is_err());
        assert!(build_covariance(&CovarianceSpec::Diagonal { values: vec![1.0] }, 2).is_err());
    }

    #[test]
    fn ratios_of_three_class_model() {
        let params = ModelSpec::three_class_toeplitz(256).build().unwrap();
        assert_eq!(params.class_sizes(), &[4, 20, 8]);
        assert_eq!(params.n(), 32);
        assert_eq!(params.c0(), 8.0);
        assert_eq!(params.ratios(), &[1.0 / 8.0, 5.0 / 8.0, 1.0 / 4.0]);
    }

    #[test]
    fn single_identity_class() {
        let params = ModelSpec::marchenko_pastur(10, 10).build().unwrap();
        assert_eq!(params.c0(), 1.0);
        assert_eq!(params.ratios(), &[1.0]);
        assert!(params.is_diagonal());
        assert!(params.all_nonsingular());
    }

    #[test]
    fn dimension_mismatch() {
        let err = ModelParams::new(5, vec![3], vec![Array2::eye(4)]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                index: 0,
                rows: 4,
                ..
            }
        ));
    }

    #[test]
    fn zero_class_size() {
        assert!(ModelParams::new(2, vec![0], vec![Array2::eye(2)]).is_err());
        assert!(ModelParams::new(2, vec![], vec![]).is_err());
    }

    #[test]
    fn negative_eigenvalue_is_named() {
        let m = array![[1.0, 2.0], [2.0, 1.0]];
        match ModelParams::new(2, vec![1], vec![m]).unwrap_err() {
            Error::NotPsd { min_eigenvalue } => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let m = array![[1.0, 1.0], [1.0, 1.0 - 1e-12]];
        let params = ModelParams::new(2, vec![3], vec![m]).unwrap();
        assert!(params.min_eigenvalues()[0] >= 0.0);
        assert!(!params.all_nonsingular());
    }

    #[test]
    fn validation_is_idempotent() {
        let params = ModelSpec::three_class_toeplitz(64).build().unwrap();
        let again = params.revalidate().unwrap();
        assert_eq!(params, again);
        assert_eq!(params.c_max(), again.c_max());
        assert_eq!(params.ratios(), again.ratios());
    }

    #[test]
    fn toeplitz_eigenvalues_within_classical_bounds() {
        for &(scale, rho) in &[(1.0, 0.2), (9.0, 0.2), (17.0, 0.4), (2.5, 0.9)] {
            for p in [1, 2, 7, 32, 64] {
                let m = build_covariance(&CovarianceSpec::Toeplitz { scale, rho }, p).unwrap();
                let eig = linalg::sym_eigenvalues(&m).unwrap();
                let lo = scale * (1.0 - rho) / (1.0 + rho);
                let hi = scale * (1.0 + rho) / (1.0 - rho);
                for &l in eig.iter() {
                    assert!(l >= lo - 1e-9 && l <= hi + 1e-9, "{l} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn dense_file_round_trip() {
        let m = array![[2.0, 0.5, 0.0], [0.5, 1.0, 0.25], [0.0, 0.25, 3.0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, format_dense_covariance(&m)).unwrap();
        let built = build_covariance(&CovarianceSpec::Dense { path: path.clone() }, 3).unwrap();
        assert_eq!(built, m);
        assert!(build_covariance(&CovarianceSpec::Dense { path }, 4).is_err());
    }

    #[test]
    fn dense_file_errors() {
        assert!(parse_dense_covariance("").is_err());
        assert!(parse_dense_covariance("2\n1 0\n").is_err());
        assert!(parse_dense_covariance("2\n1 0\n1 1\n").is_err());
        assert!(parse_dense_covariance("2\n1 x\n0 1\n").is_err());
        let missing = CovarianceSpec::Dense {
            path: "/nonexistent/c.txt".into(),
        };
        assert!(matches!(build_covariance(&missing, 2), Err(Error::Io(_))));
    }

    #[test]
    fn non_psd_dense_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "2\n1 2\n2 1\n").unwrap();
        let err = build_covariance(&CovarianceSpec::Dense { path }, 2).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    #[test]
    fn rescaling_keeps_ratios() {
        let spec = ModelSpec::three_class_toeplitz(256);
        let half = spec.with_dimension(128).unwrap();
        assert_eq!(
            half.classes.iter().map(|c| c.n).collect::<Vec<_>>(),
            vec![2, 10, 4]
        );
        assert!(spec.with_dimension(100).is_err());
    }

    #[test]
    fn spec_serde_rejects_unknown_keys() {
        let ok: CovarianceSpec =
            serde_json::from_str(r#"{"kind":"toeplitz","scale":9,"rho":0.2}"#).unwrap();
        assert_eq!(
            ok,
            CovarianceSpec::Toeplitz {
                scale: 9.0,
                rho: 0.2
            }
        );
        let err = serde_json::from_str::<CovarianceSpec>(
            r#"{"kind":"toeplitz","scale":9,"rho":0.2,"x":1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains('x'));
    }
}
