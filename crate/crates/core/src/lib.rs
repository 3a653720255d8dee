//! Deterministic equivalents for the spectrum and resolvents of Gram matrices
//! `WᵀW` whose columns come from a k-class Gaussian mixture, plus a Monte Carlo
//! harness that checks them against sampled ensembles.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equivalents;
pub mod error;
pub mod fixed_point;
pub(crate) mod linalg;
pub mod model;
pub mod montecarlo;
pub mod nonneg;
mod quadrature;
pub(crate) mod resolvent;
pub mod spectrum;

pub use equivalents::{
    class_trace_functional, class_trace_functional_via_g_tilde, first_order, log_det_functional,
    omega_radius_bound, q_da_q_equivalent, qt_ca_qt_equivalent, qt_w_da_wt_qt_equivalent,
    second_order, EquivalentSet, SecondOrderSet,
};
pub use error::{Error, Result};
pub use fixed_point::{g_derivative, psi_step, solve_g, solve_grid, ResolventPoint, SolverOptions};
pub use model::{
    build_covariance, validate_model, ClassSpec, CovarianceSpec, ModelParams, ModelSpec,
};
pub use montecarlo::{
    convergence_report, distance_to_support, eigenvalues_wtw, empirical_resolvents,
    histogram_report, norm_bound_report, outlier_report, radius_fuzz_report, sample_w,
    second_order_report, trace_variances, trial_seed, variance_scaling_report, wireless_report,
    zero_eigenvalue_report, ConvergenceProbes, EmpiricalResolvents, EnsembleSample,
    GaussianEnsemble, Histogram, HistogramBins, McReport, MetricRecord, SampleSource, Threshold,
};
pub use nonneg::{
    check_cs_radius, check_dominated_radius, perron_left_vector, spectral_radius,
    spectral_radius_real, CsRadii, RadiusCertificate, RadiusMethod,
};
pub use num_complex::Complex64;
pub use spectrum::{
    atom_at_zero, atom_estimate, density_at, density_grid, linear_independence, support_detect,
    AtomEstimate, DensityGrid, IndependenceReport,
};
