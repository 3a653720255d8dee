//! Property tests for invariants that hold for every model and every
//! admissible evaluation point.

use ndarray::Array2;
use proptest::prelude::*;
use specbulk_core::{
    check_cs_radius, check_dominated_radius, class_trace_functional,
    class_trace_functional_via_g_tilde, first_order, omega_radius_bound, perron_left_vector,
    psi_step, q_da_q_equivalent, qt_w_da_wt_qt_equivalent, sample_w, second_order, solve_g,
    spectral_radius_real, trial_seed, ClassSpec, Complex64, CovarianceSpec, ModelParams, ModelSpec,
    SolverOptions,
};

fn covariance() -> impl Strategy<Value = CovarianceSpec> {
    prop_oneof![
        Just(CovarianceSpec::Identity),
        (0.1..5.0f64).prop_map(|scale| CovarianceSpec::ScaledIdentity { scale }),
        (0.1..20.0f64, 0.0..0.8f64)
            .prop_map(|(scale, rho)| CovarianceSpec::Toeplitz { scale, rho }),
    ]
}

fn model() -> impl Strategy<Value = ModelParams> {
    (1usize..=3, 4usize..=24)
        .prop_flat_map(|(k, p)| {
            (
                Just(p),
                prop::collection::vec((1usize..=3 * p, covariance()), k),
            )
        })
        .prop_map(|(p, classes)| {
            let classes = classes
                .into_iter()
                .map(|(n, covariance)| ClassSpec { n, covariance })
                .collect();
            ModelSpec { p, classes }.build().unwrap()
        })
}

/// Points with `|Im z| ≥ 0.05`, so every solve converges quickly.
fn point() -> impl Strategy<Value = Complex64> {
    (-10.0..40.0f64, 0.05..20.0f64, any::<bool>())
        .prop_map(|(re, im, up)| Complex64::new(re, if up { im } else { -im }))
}

fn nonneg(k: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..1.0f64], k * k)
        .prop_map(move |v| Array2::from_shape_vec((k, k), v).unwrap())
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_a_fixed_point_in_the_right_half_plane(params in model(), z in point()) {
        let sol = solve_g(z, &params, &opts(), None).unwrap();
        let image = psi_step(&sol.g, z, &params).unwrap();
        let scale = sol.g.iter().map(|g| g.norm()).fold(0.0, f64::max);
        for (a, (g, f)) in sol.g.iter().zip(&image).enumerate() {
            prop_assert!((g - f).norm() <= 1e-10 * scale, "class {a}: {g} vs {f}");
            prop_assert!(g.im * z.im > 0.0, "Im g_{a} = {} at z = {z}", g.im);
        }
        prop_assert!(sol.m_mu.im * z.im > 0.0);
    }

    #[test]
    fn conjugate_point_gives_conjugate_solution(params in model(), z in point()) {
        let up = solve_g(z, &params, &opts(), None).unwrap();
        let down = solve_g(z.conj(), &params, &opts(), None).unwrap();
        for (u, d) in up.g.iter().zip(&down.g) {
            prop_assert!((u - d.conj()).norm() <= 1e-9 * u.norm().max(1e-12));
        }
    }

    #[test]
    fn stieltjes_decay_at_infinity(params in model(), angle in 0.1..3.0f64) {
        let z = Complex64::from_polar(1e6, angle);
        let sol = solve_g(z, &params, &opts(), None).unwrap();
        // z m_μ(z) → −1 as |z| → ∞.
        prop_assert!((sol.m_mu * z + 1.0).norm() < 1e-4);
    }

    #[test]
    fn omega_radius_stays_below_explicit_bound(params in model(), z in point()) {
        let p1 = solve_g(z, &params, &opts(), None).unwrap();
        let p2 = solve_g(z.conj(), &params, &opts(), None).unwrap();
        let so = second_order(&p1, &p2, &params).unwrap();
        prop_assert!(so.spectral_radius_omega < 1.0);
        prop_assert!(so.spectral_radius_omega <= omega_radius_bound(z, &params) + 1e-9);
    }

    #[test]
    fn second_order_sums_match_resolvent_identities(params in model(), z1 in point(), z2 in point()) {
        prop_assume!((z1 - z2).norm() > 1e-2);
        let p1 = solve_g(z1, &params, &opts(), None).unwrap();
        let p2 = solve_g(z2, &params, &opts(), None).unwrap();
        let (e1, e2) = (first_order(&p1, &params).unwrap(), first_order(&p2, &params).unwrap());
        let so = second_order(&p1, &p2, &params).unwrap();
        let mut q_sum = Complex64::new(0.0, 0.0);
        let mut w_sum = Complex64::new(0.0, 0.0);
        for a in 0..params.k() {
            let coeff = q_da_q_equivalent(&so, &e1, &e2, a, &params).unwrap();
            q_sum += coeff.iter().zip(params.ratios()).map(|(v, &c)| v * c).sum::<Complex64>();
            w_sum += qt_w_da_wt_qt_equivalent(&so, &e1, &e2, a, &params).unwrap().diag().sum();
        }
        // Q1 Q2 = (Q1 − Q2)/(z1 − z2), summed over the class blocks.
        let want_q = (p1.m_mu - p2.m_mu) / (z1 - z2);
        prop_assert!((q_sum - want_q).norm() <= 1e-8 * want_q.norm().max(1e-6), "{q_sum} vs {want_q}");
        // Q̃1 WWᵀ Q̃2 = Q̃1 + z2 Q̃1 Q̃2.
        let (t1, t2) = (e1.q_tilde_bar.diag().sum(), e2.q_tilde_bar.diag().sum());
        let want_w = t1 + z2 * (t1 - t2) / (z1 - z2);
        prop_assert!((w_sum - want_w).norm() <= 1e-8 * want_w.norm().max(1e-6), "{w_sum} vs {want_w}");
    }

    #[test]
    fn class_trace_routes_agree(params in model(), sigma2 in 0.05..10.0f64) {
        let z = -sigma2;
        let sol = solve_g(Complex64::new(z, 0.0), &params, &opts(), None).unwrap();
        let mut total = 0.0;
        for a in 0..params.k() {
            let direct = class_trace_functional(z, a, &sol, &params).unwrap();
            let via = class_trace_functional_via_g_tilde(z, a, &sol, &params).unwrap();
            prop_assert!((direct - via).abs() <= 1e-8 * direct.abs().max(1.0));
            prop_assert!(direct >= 0.0 && direct <= params.class_sizes()[a] as f64 + 1e-9);
            total += direct;
        }
        // Σ_a tr W_aᵀ(WWᵀ + σ²)^{-1}W_a = tr WWᵀ(WWᵀ + σ²)^{-1} ≤ min(n, p).
        prop_assert!(total <= params.p().min(params.n()) as f64 + 1e-8);
    }

    #[test]
    fn sampling_is_reproducible(params in model(), seed in any::<u64>()) {
        let a = sample_w(&params, seed).unwrap();
        let b = sample_w(&params, seed).unwrap();
        prop_assert_eq!(&a.w, &b.w);
        prop_assert_eq!(a.eigenvalues_wtw.len(), params.n());
        prop_assert!(a.eigenvalues_wtw.iter().all(|&l| l >= 0.0));
        prop_assert_ne!(trial_seed(seed, 0), trial_seed(seed, 1));
    }

    #[test]
    fn perron_certificate_is_exact(k in 1usize..=6, seed in any::<u64>()) {
        let m = matrix_from_seed(k, seed);
        let cert = perron_left_vector(&m).unwrap();
        let rho = spectral_radius_real(&m).unwrap();
        prop_assert!(cert.left_perron.iter().all(|&x| x >= 0.0));
        prop_assert!((cert.left_perron.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!((cert.rho - rho).abs() <= 1e-10 * rho.max(1.0));
        prop_assert!(cert.defect(&m) <= 1e-10 * rho.max(1.0));
    }

    #[test]
    fn domination_and_cauchy_schwarz(b in (1usize..=5).prop_flat_map(nonneg), signs in prop::collection::vec(-1.0..=1.0f64, 25)) {
        let k = b.nrows();
        let a = Array2::from_shape_fn((k, k), |(i, j)| b[(i, j)] * signs[i * k + j]);
        let (rho_a, rho_b, holds) = check_dominated_radius(&a, &b).unwrap();
        prop_assert!(holds, "ρ(A) = {rho_a} > ρ(B) = {rho_b}");
        let c = Array2::from_shape_fn((k, k), |(i, j)| (b[(i, j)] * b[(i, j)].sqrt()).sqrt() * signs[(i * k + j + 7) % 25]);
        let bs = b.mapv(f64::sqrt);
        prop_assert!(check_cs_radius(&b, &bs, &c).unwrap().holds);
    }
}

fn matrix_from_seed(k: usize, seed: u64) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((k, k), |_| {
        if rng.random_bool(0.25) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    })
}
